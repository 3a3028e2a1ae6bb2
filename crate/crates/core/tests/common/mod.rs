#![allow(dead_code)]

use wsadapt::geometry::{Action, BBox, State};
use wsadapt::rlcore::{InteractionRecord, Step, WorkerMode};
use wsadapt::seeds::SeedStream;
use wsadapt::student::{Architecture, ConvSpec, Memory, StudentParams, TrajectoryLoss};

/// Central finite differences of the trajectory loss, one coordinate at a time.
pub fn fd_gradient<L: TrajectoryLoss>(
    params: &StudentParams,
    states: &[&State],
    memory: &Memory,
    loss: &L,
    step: f64,
) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.theta()[i];
            p.theta_mut()[i] = orig + step;
            let up = p.loss(states, memory, loss).expect("finite loss");
            p.theta_mut()[i] = orig - step;
            let down = p.loss(states, memory, loss).expect("finite loss");
            p.theta_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Per-coordinate relative error; coordinates where both values are below
/// `floor` in magnitude are compared against `floor` instead.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (a, n))| ((a - n).abs() / a.abs().max(n.abs()).max(floor), i))
        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc })
}

pub fn fixture_arch(recurrent: usize) -> Architecture {
    Architecture {
        patch: 10,
        conv: vec![ConvSpec {
            channels: 3,
            kernel: 3,
            stride: 2,
        }],
        dense: vec![16, 12],
        recurrent,
    }
}

/// Random parameters with a non-trivial action head and biases.
pub fn fixture_params(arch: Architecture, seed: u64) -> StudentParams {
    let mut p = StudentParams::init(arch, seed).unwrap();
    let mut rng = SeedStream::derived(seed, &[1]);
    let head = p.action_head_range();
    for v in &mut p.theta_mut()[head] {
        *v = rng.normal(0.0, 0.3);
    }
    for v in p.theta_mut().iter_mut() {
        *v += rng.normal(0.0, 0.02);
    }
    p
}

pub fn random_state(rng: &mut SeedStream, size: usize) -> State {
    let a = (0..size * size).map(|_| rng.uniform()).collect();
    let b = (0..size * size).map(|_| rng.uniform()).collect();
    State::new(size, a, b).unwrap()
}

/// Random but internally consistent interaction record: recorded means and
/// values come from the given parameters.
pub fn fixture_record(params: &StudentParams, steps: usize, seed: u64) -> InteractionRecord {
    let mut rng = SeedStream::derived(seed, &[2]);
    let size = params.architecture().patch;
    let states: Vec<State> = (0..steps).map(|_| random_state(&mut rng, size)).collect();
    let refs: Vec<&State> = states.iter().collect();
    let heads = params
        .forward_trajectory(&refs, &params.initial_memory())
        .unwrap();
    let b = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
    let steps = states
        .into_iter()
        .zip(heads)
        .map(|(state, h)| {
            let raw: [f64; 4] = std::array::from_fn(|d| h.mu[d] + rng.normal(0.0, 0.05));
            let teacher = Action::from_array(std::array::from_fn(|_| rng.range(-0.8, 0.8)));
            let reward = [-1.0, 0.0, 0.4, 0.9][rng.index(4)];
            Step {
                state,
                raw_action: raw,
                action: Action::from_array(raw),
                mu: h.mu,
                value: h.value,
                reward,
                weak_score: None,
                student_box: b,
                teacher_box: b,
                teacher_action: teacher,
                teacher_reward: 0.0,
                mask: u8::from(rng.bernoulli(0.7)),
            }
        })
        .collect();
    InteractionRecord {
        mode: WorkerMode::Rl,
        video_id: format!("fixture-{seed}"),
        teacher: "fixture".into(),
        steps,
    }
}
