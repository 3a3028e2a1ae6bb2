//! The student: a small regression tracker with an action head and a value
//! head, plus exact reverse-mode gradients.
//!
//! Both patches of a state go through the same strided conv stack; the two
//! feature maps are concatenated and fed to ReLU dense layers, an optional
//! gated recurrent cell, and the two heads. The action head is squashed with
//! `tanh` so its mean always lies in `[-1, 1]^4`; the value head is linear.

mod adam;
mod checkpoint;
mod layers;

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Action, State};
use crate::seeds::SeedStream;
use layers::{
    conv_relu_backward, conv_relu_forward, dense_backward, dense_forward, relu_in_place, sigmoid,
    ConvShape,
};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const ACTION_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Shape of the student network. Immutable once parameters are created.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Patch side length the network expects.
    pub patch: usize,
    pub conv: Vec<ConvSpec>,
    /// Widths of the ReLU dense layers after feature concatenation.
    pub dense: Vec<usize>,
    /// Hidden size of the recurrent cell; 0 disables recurrence.
    pub recurrent: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            patch: 32,
            conv: vec![
                ConvSpec {
                    channels: 8,
                    kernel: 4,
                    stride: 2,
                },
                ConvSpec {
                    channels: 8,
                    kernel: 3,
                    stride: 2,
                },
            ],
            dense: vec![64, 64],
            recurrent: 0,
        }
    }
}

impl Architecture {
    pub fn with_recurrent(mut self, hidden: usize) -> Self {
        self.recurrent = hidden;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DenseSlot {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

impl DenseSlot {
    fn end(&self) -> usize {
        self.b + self.n_out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvSlot {
    w: usize,
    b: usize,
    shape: ConvShape,
}

/// Gated recurrent cell: update gate `z`, reset gate `r`, candidate `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct GruSlot {
    n_in: usize,
    n_h: usize,
    // input weights (n_h × n_in), recurrent weights (n_h × n_h), biases (n_h)
    wz: usize,
    uz: usize,
    bz: usize,
    wr: usize,
    ur: usize,
    br: usize,
    wc: usize,
    uc: usize,
    bc: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    conv: Vec<ConvSlot>,
    feature_len: usize,
    dense: Vec<DenseSlot>,
    gru: Option<GruSlot>,
    action: DenseSlot,
    value: DenseSlot,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Result<Self> {
        if arch.patch == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        let mut off = 0usize;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let mut conv = Vec::with_capacity(arch.conv.len());
        let (mut c, mut hw) = (1usize, arch.patch);
        for spec in &arch.conv {
            if spec.kernel == 0 || spec.stride == 0 || spec.channels == 0 || spec.kernel > hw {
                return Err(Error::InvalidArgument(format!(
                    "conv layer {spec:?} does not fit a {hw}x{hw} input"
                )));
            }
            let shape = ConvShape {
                in_c: c,
                out_c: spec.channels,
                kernel: spec.kernel,
                stride: spec.stride,
                in_hw: hw,
                out_hw: (hw - spec.kernel) / spec.stride + 1,
            };
            let w = take(shape.weight_len());
            let b = take(shape.out_c);
            conv.push(ConvSlot { w, b, shape });
            c = spec.channels;
            hw = shape.out_hw;
        }
        let feature_len = c * hw * hw;
        let mut dense = Vec::with_capacity(arch.dense.len());
        let mut n_in = 2 * feature_len;
        for &n_out in &arch.dense {
            if n_out == 0 {
                return Err(Error::InvalidArgument(
                    "dense width must be positive".into(),
                ));
            }
            let w = take(n_in * n_out);
            let b = take(n_out);
            dense.push(DenseSlot { w, b, n_in, n_out });
            n_in = n_out;
        }
        let gru = (arch.recurrent > 0).then(|| {
            let n_h = arch.recurrent;
            let slot = GruSlot {
                n_in,
                n_h,
                wz: take(n_h * n_in),
                uz: take(n_h * n_h),
                bz: take(n_h),
                wr: take(n_h * n_in),
                ur: take(n_h * n_h),
                br: take(n_h),
                wc: take(n_h * n_in),
                uc: take(n_h * n_h),
                bc: take(n_h),
            };
            n_in = n_h;
            slot
        });
        let action = DenseSlot {
            w: take(ACTION_DIM * n_in),
            b: take(ACTION_DIM),
            n_in,
            n_out: ACTION_DIM,
        };
        let value = DenseSlot {
            w: take(n_in),
            b: take(1),
            n_in,
            n_out: 1,
        };
        Ok(Self {
            conv,
            feature_len,
            dense,
            gru,
            action,
            value,
            total: off,
        })
    }

    fn head_input_len(&self) -> usize {
        self.action.n_in
    }
}

/// Flat parameter vector together with its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentParams {
    arch: Architecture,
    layout: Layout,
    theta: Vec<f64>,
}

impl StudentParams {
    /// Orthogonal weights, zero biases and a zero action head, so the initial
    /// policy mean is exactly zero ("stay where you are").
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        let mut theta = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relu_gain = 2f64.sqrt();
        for slot in &layout.conv {
            let s = slot.shape;
            orthogonal_into(
                &mut theta[slot.w..slot.w + s.weight_len()],
                s.out_c,
                s.in_c * s.kernel * s.kernel,
                relu_gain,
                &mut rng,
            );
        }
        for d in &layout.dense {
            orthogonal_into(&mut theta[d.w..d.b], d.n_out, d.n_in, relu_gain, &mut rng);
        }
        if let Some(g) = layout.gru {
            for (w, n_in) in [
                (g.wz, g.n_in),
                (g.uz, g.n_h),
                (g.wr, g.n_in),
                (g.ur, g.n_h),
                (g.wc, g.n_in),
                (g.uc, g.n_h),
            ] {
                orthogonal_into(&mut theta[w..w + g.n_h * n_in], g.n_h, n_in, 1.0, &mut rng);
            }
        }
        let v = layout.value;
        orthogonal_into(&mut theta[v.w..v.b], 1, v.n_in, 1.0, &mut rng);
        Ok(Self {
            arch,
            layout,
            theta,
        })
    }

    pub fn from_theta(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        if theta.len() != layout.total {
            return Err(Error::DimensionMismatch {
                expected: layout.total,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(Self {
            arch,
            layout,
            theta,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Parameters of the layer that predicts the state value.
    pub fn value_head_range(&self) -> Range<usize> {
        self.layout.value.w..self.layout.value.end()
    }

    pub fn action_head_range(&self) -> Range<usize> {
        self.layout.action.w..self.layout.action.end()
    }

    pub fn recurrent_size(&self) -> usize {
        self.arch.recurrent
    }

    /// Fresh (all-zero) recurrent memory.
    pub fn initial_memory(&self) -> Memory {
        Memory(vec![0.0; self.arch.recurrent])
    }
}

fn orthogonal_into(out: &mut [f64], rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out[i * cols + j] = gain * v;
        }
    }
}

/// Recurrent hidden vector; empty when recurrence is disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct Memory(pub Vec<f64>);

/// The two head outputs at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadOutput {
    pub mu: [f64; ACTION_DIM],
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentOutput {
    pub mu: [f64; ACTION_DIM],
    pub value: f64,
    pub memory: Memory,
}

impl StudentOutput {
    pub fn action_mean(&self) -> Action {
        Action::from_array(self.mu)
    }
}

/// Loss value and its gradient with respect to every step's head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d_mu: Vec<[f64; ACTION_DIM]>,
    pub d_value: Vec<f64>,
}

impl LossEval {
    pub fn zeros(steps: usize) -> Self {
        Self {
            value: 0.0,
            d_mu: vec![[0.0; ACTION_DIM]; steps],
            d_value: vec![0.0; steps],
        }
    }

    pub fn add(&mut self, other: &LossEval) {
        self.value += other.value;
        for (a, b) in self.d_mu.iter_mut().zip(&other.d_mu) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_value.iter_mut().zip(&other.d_value) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.value *= c;
        self.d_mu.iter_mut().flatten().for_each(|x| *x *= c);
        self.d_value.iter_mut().for_each(|x| *x *= c);
    }
}

/// A scalar loss over a trajectory of head outputs.
pub trait TrajectoryLoss {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval>;
}

impl<T: TrajectoryLoss + ?Sized> TrajectoryLoss for &T {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        (**self).evaluate(heads)
    }
}

/// Sum of two losses.
pub struct SumLoss<A, B>(pub A, pub B);

impl<A: TrajectoryLoss, B: TrajectoryLoss> TrajectoryLoss for SumLoss<A, B> {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        let mut e = self.0.evaluate(heads)?;
        e.add(&self.1.evaluate(heads)?);
        Ok(e)
    }
}

/// A loss multiplied by a constant.
pub struct ScaledLoss<L>(pub f64, pub L);

impl<L: TrajectoryLoss> TrajectoryLoss for ScaledLoss<L> {
    fn evaluate(&self, heads: &[HeadOutput]) -> Result<LossEval> {
        let mut e = self.1.evaluate(heads)?;
        e.scale(self.0);
        Ok(e)
    }
}

/// Intermediate activations of one step, kept for the backward pass.
#[derive(Clone, Debug, Default)]
struct Tape {
    // per patch: input then each conv output
    conv_prev: Vec<Vec<f64>>,
    conv_cur: Vec<Vec<f64>>,
    // concatenated features, then each dense output (post-ReLU)
    dense: Vec<Vec<f64>>,
    gru: Option<GruTape>,
    head_in: Vec<f64>,
    mu: [f64; ACTION_DIM],
}

#[derive(Clone, Debug, Default)]
struct GruTape {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

impl StudentParams {
    fn check_state(&self, s: &State) -> Result<()> {
        if s.size() != self.arch.patch {
            return Err(Error::DimensionMismatch {
                expected: self.arch.patch,
                got: s.size(),
            });
        }
        Ok(())
    }

    fn check_memory(&self, m: &Memory) -> Result<()> {
        if m.0.len() != self.arch.recurrent {
            return Err(Error::DimensionMismatch {
                expected: self.arch.recurrent,
                got: m.0.len(),
            });
        }
        Ok(())
    }

    fn conv_stack(&self, patch: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layout.conv.len() + 1);
        acts.push(patch.to_vec());
        for slot in &self.layout.conv {
            let s = slot.shape;
            let mut out = Vec::new();
            conv_relu_forward(
                &s,
                &self.theta[slot.w..slot.w + s.weight_len()],
                &self.theta[slot.b..slot.b + s.out_c],
                acts.last().expect("input present"),
                &mut out,
            );
            acts.push(out);
        }
        acts
    }

    fn step_forward(&self, s: &State, h_prev: &[f64]) -> (Tape, HeadOutput, Vec<f64>) {
        let th = &self.theta;
        let conv_prev = self.conv_stack(s.patch_prev());
        let conv_cur = self.conv_stack(s.patch_cur());
        let mut feat = Vec::with_capacity(2 * self.layout.feature_len);
        feat.extend_from_slice(conv_prev.last().expect("features"));
        feat.extend_from_slice(conv_cur.last().expect("features"));
        let mut dense = vec![feat];
        for d in &self.layout.dense {
            let mut out = Vec::new();
            dense_forward(
                d.n_in,
                d.n_out,
                &th[d.w..d.b],
                &th[d.b..d.end()],
                dense.last().expect("input"),
                &mut out,
            );
            relu_in_place(&mut out);
            dense.push(out);
        }
        let x = dense.last().expect("dense output");
        let (head_in, gru, h_new) = match self.layout.gru {
            None => (x.clone(), None, Vec::new()),
            Some(g) => {
                let (tape, h) = gru_forward(th, &g, x, h_prev);
                (h.clone(), Some(tape), h)
            }
        };
        let a = self.layout.action;
        let mut pre = Vec::new();
        dense_forward(
            a.n_in,
            a.n_out,
            &th[a.w..a.b],
            &th[a.b..a.end()],
            &head_in,
            &mut pre,
        );
        let mut mu = [0.0; ACTION_DIM];
        for (m, p) in mu.iter_mut().zip(&pre) {
            *m = p.tanh();
        }
        let v = self.layout.value;
        let value = th[v.b]
            + th[v.w..v.b]
                .iter()
                .zip(&head_in)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let tape = Tape {
            conv_prev,
            conv_cur,
            dense,
            gru,
            head_in,
            mu,
        };
        (tape, HeadOutput { mu, value }, h_new)
    }

    /// One forward step. Pure: the only carried state is `memory`.
    pub fn forward(&self, s: &State, memory: &Memory) -> Result<StudentOutput> {
        self.check_state(s)?;
        self.check_memory(memory)?;
        let (_, head, h) = self.step_forward(s, &memory.0);
        if !head.value.is_finite() || head.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("student output"));
        }
        Ok(StudentOutput {
            mu: head.mu,
            value: head.value,
            memory: Memory(h),
        })
    }

    /// Head outputs along a trajectory, carrying memory from step to step.
    pub fn forward_trajectory(
        &self,
        states: &[&State],
        memory: &Memory,
    ) -> Result<Vec<HeadOutput>> {
        self.check_memory(memory)?;
        let mut h = memory.0.clone();
        let mut heads = Vec::with_capacity(states.len());
        for s in states {
            self.check_state(s)?;
            let (_, head, h_new) = self.step_forward(s, &h);
            heads.push(head);
            h = h_new;
        }
        Ok(heads)
    }

    /// Loss value of a trajectory without gradients.
    pub fn loss<L: TrajectoryLoss + ?Sized>(
        &self,
        states: &[&State],
        memory: &Memory,
        loss: &L,
    ) -> Result<f64> {
        let heads = self.forward_trajectory(states, memory)?;
        let v = loss.evaluate(&heads)?.value;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss"))
        }
    }

    /// Exact gradient of `loss` with respect to every parameter, back-propagated
    /// through time when recurrence is enabled. Returns `(loss, gradient)`.
    pub fn gradient<L: TrajectoryLoss + ?Sized>(
        &self,
        states: &[&State],
        memory: &Memory,
        loss: &L,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_memory(memory)?;
        let mut tapes = Vec::with_capacity(states.len());
        let mut heads = Vec::with_capacity(states.len());
        let mut h = memory.0.clone();
        for s in states {
            self.check_state(s)?;
            let (tape, head, h_new) = self.step_forward(s, &h);
            tapes.push(tape);
            heads.push(head);
            h = h_new;
        }
        let eval = loss.evaluate(&heads)?;
        if !eval.value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let mut grad = vec![0.0; self.theta.len()];
        let mut d_h_next = vec![0.0; self.arch.recurrent];
        for (i, tape) in tapes.iter().enumerate().rev() {
            d_h_next =
                self.step_backward(tape, &eval.d_mu[i], eval.d_value[i], &d_h_next, &mut grad);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((eval.value, grad))
    }

    /// Backward for one step; returns the gradient w.r.t. the incoming memory.
    fn step_backward(
        &self,
        tape: &Tape,
        d_mu: &[f64; ACTION_DIM],
        d_value: f64,
        d_h_carry: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let th = &self.theta;
        let n_head = self.layout.head_input_len();
        let mut d_head_in = vec![0.0; n_head];

        let a = self.layout.action;
        let d_pre: Vec<f64> = d_mu
            .iter()
            .zip(&tape.mu)
            .map(|(g, m)| g * (1.0 - m * m))
            .collect();
        {
            let (gw, gb) = grad[a.w..a.end()].split_at_mut(a.b - a.w);
            dense_backward(
                a.n_in,
                &th[a.w..a.b],
                &tape.head_in,
                &d_pre,
                gw,
                gb,
                Some(&mut d_head_in),
            );
        }
        let v = self.layout.value;
        if d_value != 0.0 {
            let (gw, gb) = grad[v.w..v.end()].split_at_mut(v.b - v.w);
            dense_backward(
                v.n_in,
                &th[v.w..v.b],
                &tape.head_in,
                &[d_value],
                gw,
                gb,
                Some(&mut d_head_in),
            );
        }

        let (mut d_x, d_h_prev) = match (self.layout.gru, &tape.gru) {
            (Some(g), Some(gt)) => {
                for (d, c) in d_head_in.iter_mut().zip(d_h_carry) {
                    *d += c;
                }
                let x = tape.dense.last().expect("gru input");
                gru_backward(th, &g, gt, x, &d_head_in, grad)
            }
            _ => (d_head_in, Vec::new()),
        };

        for (li, d) in self.layout.dense.iter().enumerate().rev() {
            let out = &tape.dense[li + 1];
            for (g, y) in d_x.iter_mut().zip(out) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = &tape.dense[li];
            let mut d_in = vec![0.0; d.n_in];
            let (gw, gb) = grad[d.w..d.end()].split_at_mut(d.b - d.w);
            dense_backward(d.n_in, &th[d.w..d.b], input, &d_x, gw, gb, Some(&mut d_in));
            d_x = d_in;
        }

        let f = self.layout.feature_len;
        let (d_fprev, d_fcur) = d_x.split_at(f);
        self.conv_backward(&tape.conv_prev, d_fprev, grad);
        self.conv_backward(&tape.conv_cur, d_fcur, grad);
        d_h_prev
    }

    fn conv_backward(&self, acts: &[Vec<f64>], d_top: &[f64], grad: &mut [f64]) {
        let mut d_out = d_top.to_vec();
        for (li, slot) in self.layout.conv.iter().enumerate().rev() {
            let s = slot.shape;
            let mut d_in = (li > 0).then(|| vec![0.0; s.in_c * s.in_hw * s.in_hw]);
            let (gw, gb) = grad[slot.w..slot.b + s.out_c].split_at_mut(slot.b - slot.w);
            conv_relu_backward(
                &s,
                &self.theta[slot.w..slot.w + s.weight_len()],
                &acts[li],
                &acts[li + 1],
                &mut d_out,
                gw,
                gb,
                d_in.as_deref_mut(),
            );
            match d_in {
                Some(d) => d_out = d,
                None => break,
            }
        }
    }
}

fn matvec_acc(w: &[f64], n_in: usize, x: &[f64], out: &mut [f64]) {
    for (o, acc) in out.iter_mut().enumerate() {
        *acc += w[o * n_in..(o + 1) * n_in]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}

fn gru_forward(th: &[f64], g: &GruSlot, x: &[f64], h_prev: &[f64]) -> (GruTape, Vec<f64>) {
    let n = g.n_h;
    let gate = |w: usize, u: usize, b: usize, h: &[f64]| {
        let mut a = th[b..b + n].to_vec();
        matvec_acc(&th[w..w + n * g.n_in], g.n_in, x, &mut a);
        matvec_acc(&th[u..u + n * n], n, h, &mut a);
        a
    };
    let z: Vec<f64> = gate(g.wz, g.uz, g.bz, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = gate(g.wr, g.ur, g.br, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = gate(g.wc, g.uc, g.bc, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let h: Vec<f64> = (0..n)
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i])
        .collect();
    (
        GruTape {
            h_prev: h_prev.to_vec(),
            z,
            r,
            c,
            rh,
        },
        h,
    )
}

/// Returns `(d_x, d_h_prev)` and accumulates the cell's parameter gradients.
fn gru_backward(
    th: &[f64],
    g: &GruSlot,
    t: &GruTape,
    x: &[f64],
    d_h: &[f64],
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = g.n_h;
    let mut d_x = vec![0.0; g.n_in];
    let mut d_hp: Vec<f64> = (0..n).map(|i| d_h[i] * (1.0 - t.z[i])).collect();
    let d_az: Vec<f64> = (0..n)
        .map(|i| d_h[i] * (t.c[i] - t.h_prev[i]) * t.z[i] * (1.0 - t.z[i]))
        .collect();
    let d_ac: Vec<f64> = (0..n)
        .map(|i| d_h[i] * t.z[i] * (1.0 - t.c[i] * t.c[i]))
        .collect();

    let mut d_rh = vec![0.0; n];
    accumulate_gate(
        th, grad, g.wc, g.uc, g.bc, g.n_in, n, x, &t.rh, &d_ac, &mut d_x, &mut d_rh,
    );
    let d_ar: Vec<f64> = (0..n)
        .map(|i| d_rh[i] * t.h_prev[i] * t.r[i] * (1.0 - t.r[i]))
        .collect();
    for i in 0..n {
        d_hp[i] += d_rh[i] * t.r[i];
    }
    accumulate_gate(
        th, grad, g.wz, g.uz, g.bz, g.n_in, n, x, &t.h_prev, &d_az, &mut d_x, &mut d_hp,
    );
    accumulate_gate(
        th, grad, g.wr, g.ur, g.br, g.n_in, n, x, &t.h_prev, &d_ar, &mut d_x, &mut d_hp,
    );
    (d_x, d_hp)
}

/// Gradients of `a = W x + U h + b` given `d_a`.
#[allow(clippy::too_many_arguments)]
fn accumulate_gate(
    th: &[f64],
    grad: &mut [f64],
    w: usize,
    u: usize,
    b: usize,
    n_in: usize,
    n_h: usize,
    x: &[f64],
    h: &[f64],
    d_a: &[f64],
    d_x: &mut [f64],
    d_h: &mut [f64],
) {
    dense_backward_split(n_in, &th[w..w + n_h * n_in], x, d_a, grad, w, d_x);
    dense_backward_split(n_h, &th[u..u + n_h * n_h], h, d_a, grad, u, d_h);
    for (gb, d) in grad[b..b + n_h].iter_mut().zip(d_a) {
        *gb += d;
    }
}

fn dense_backward_split(
    n_in: usize,
    w: &[f64],
    x: &[f64],
    d_out: &[f64],
    grad: &mut [f64],
    w_off: usize,
    d_x: &mut [f64],
) {
    for (o, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
        for ((dw, xv), (dx, wv)) in gw
            .iter_mut()
            .zip(x)
            .zip(d_x.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]))
        {
            *dw += g * xv;
            *dx += g * wv;
        }
    }
}

/// Draws an exploratory action around `mu`.
///
/// Returns `(raw, clamped)`: the unclamped Gaussian sample, used for the
/// log-density, and the environment-facing action in `[-1, 1]^4`.
pub fn sample_action(
    mu: &[f64; ACTION_DIM],
    sigma: f64,
    rng: &mut SeedStream,
) -> Result<([f64; ACTION_DIM], Action)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let mut raw = [0.0; ACTION_DIM];
    for (r, m) in raw.iter_mut().zip(mu) {
        let n: f64 = rng.standard_normal();
        *r = m + sigma * n;
    }
    Ok((raw, Action::from_array(raw)))
}
