//! Forward and backward kernels over flat `f64` buffers.
//!
//! Weight layouts: dense `W` is `n_out × n_in` row-major; conv `W` is
//! `c_out × c_in × k × k`; activations are channel-major `c × h × w`.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_hw: usize,
    pub out_hw: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_hw * self.out_hw
    }
}

/// Valid convolution followed by ReLU.
pub(crate) fn conv_relu_forward(
    s: &ConvShape,
    w: &[f64],
    b: &[f64],
    input: &[f64],
    out: &mut Vec<f64>,
) {
    let k = s.kernel;
    out.clear();
    out.resize(s.out_len(), 0.0);
    for o in 0..s.out_c {
        let w_o = &w[o * s.in_c * k * k..(o + 1) * s.in_c * k * k];
        for oy in 0..s.out_hw {
            for ox in 0..s.out_hw {
                let mut acc = b[o];
                for c in 0..s.in_c {
                    let w_c = &w_o[c * k * k..(c + 1) * k * k];
                    let plane = &input[c * s.in_hw * s.in_hw..(c + 1) * s.in_hw * s.in_hw];
                    for ky in 0..k {
                        let row = (oy * s.stride + ky) * s.in_hw + ox * s.stride;
                        let w_row = &w_c[ky * k..(ky + 1) * k];
                        for (wv, iv) in w_row.iter().zip(&plane[row..row + k]) {
                            acc += wv * iv;
                        }
                    }
                }
                out[(o * s.out_hw + oy) * s.out_hw + ox] = acc.max(0.0);
            }
        }
    }
}

/// Backward through [`conv_relu_forward`]. `d_out` is the gradient w.r.t. the
/// post-ReLU output and is masked in place. `d_in` is skipped when `None`.
pub(crate) fn conv_relu_backward(
    s: &ConvShape,
    w: &[f64],
    input: &[f64],
    out: &[f64],
    d_out: &mut [f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let k = s.kernel;
    for (g, &y) in d_out.iter_mut().zip(out) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    for o in 0..s.out_c {
        let base_w = o * s.in_c * k * k;
        for oy in 0..s.out_hw {
            for ox in 0..s.out_hw {
                let g = d_out[(o * s.out_hw + oy) * s.out_hw + ox];
                if g == 0.0 {
                    continue;
                }
                d_b[o] += g;
                for c in 0..s.in_c {
                    let wc = base_w + c * k * k;
                    let plane = c * s.in_hw * s.in_hw;
                    for ky in 0..k {
                        let row = plane + (oy * s.stride + ky) * s.in_hw + ox * s.stride;
                        for kx in 0..k {
                            d_w[wc + ky * k + kx] += g * input[row + kx];
                        }
                        if let Some(d_in) = d_in.as_deref_mut() {
                            for kx in 0..k {
                                d_in[row + kx] += g * w[wc + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out = W x + b`.
pub(crate) fn dense_forward(
    n_in: usize,
    n_out: usize,
    w: &[f64],
    b: &[f64],
    x: &[f64],
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend((0..n_out).map(|o| {
        let row = &w[o * n_in..(o + 1) * n_in];
        b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

/// Accumulates parameter gradients of `W x + b` and, when given, `d_x += Wᵀ d_out`.
pub(crate) fn dense_backward(
    n_in: usize,
    w: &[f64],
    x: &[f64],
    d_out: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    for (o, &g) in d_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        d_b[o] += g;
        for (dw, xv) in d_w[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *dw += g * xv;
        }
    }
    if let Some(d_x) = d_x {
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dx, wv) in d_x.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *dx += g * wv;
            }
        }
    }
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        *x = x.max(0.0);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
