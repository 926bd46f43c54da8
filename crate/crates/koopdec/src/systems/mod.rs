//! Ground-truth simulators that generate trajectory datasets: the two-state
//! benchmark map, a multi-machine swing-dynamics network, and random stable
//! LTI systems for oracle tests.

mod lti;
mod swing;

pub use lti::{random_stable_lti, LtiSystem};
pub use swing::{simulate_swing, swing_random_dataset, SwingNetworkParams};

use crate::koopman::{KoopmanError, Snapshot, Trajectory, TrajectoryDataset};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemsError {
    Diverged { step: usize },
    InvalidParams(String),
    Dataset(String),
}

impl fmt::Display for SystemsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemsError::Diverged { step } => {
                write!(f, "trajectory diverged (|x| > 1e6) at step {step}")
            }
            SystemsError::InvalidParams(msg) => write!(f, "invalid system parameters: {msg}"),
            SystemsError::Dataset(msg) => write!(f, "dataset construction failed: {msg}"),
        }
    }
}

impl std::error::Error for SystemsError {}

impl From<KoopmanError> for SystemsError {
    fn from(e: KoopmanError) -> Self {
        SystemsError::Dataset(e.to_string())
    }
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Exogenous input evaluable at every integer time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Zero { channels: usize },
    Step { t0: usize, amplitude: Vec<f64> },
    Impulse { t0: usize, amplitude: Vec<f64> },
    /// Fixed samples; zero after the recorded range.
    Recorded { samples: Vec<Vec<f64>> },
}

impl InputSignal {
    pub fn channels(&self) -> usize {
        match self {
            InputSignal::Zero { channels } => *channels,
            InputSignal::Step { amplitude, .. } | InputSignal::Impulse { amplitude, .. } => {
                amplitude.len()
            }
            InputSignal::Recorded { samples } => samples.first().map_or(0, |s| s.len()),
        }
    }

    pub fn at(&self, t: usize) -> Vec<f64> {
        match self {
            InputSignal::Zero { channels } => vec![0.0; *channels],
            InputSignal::Step { t0, amplitude } => {
                if t >= *t0 {
                    amplitude.clone()
                } else {
                    vec![0.0; amplitude.len()]
                }
            }
            InputSignal::Impulse { t0, amplitude } => {
                if t == *t0 {
                    amplitude.clone()
                } else {
                    vec![0.0; amplitude.len()]
                }
            }
            InputSignal::Recorded { samples } => samples
                .get(t)
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.channels()]),
        }
    }
}

/// Parameters of the discrete-time two-state benchmark system
/// `x1' = -a1 x2 + a3 x1 sin(omega u)`,
/// `x2' = sin(omega x1) + a2 x2 + x1 x2 u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStateParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub omega: f64,
}

impl Default for TwoStateParams {
    fn default() -> Self {
        TwoStateParams {
            a1: -0.96,
            a2: 0.88,
            a3: -0.95,
            omega: -2.0,
        }
    }
}

/// One application of the two-state map.
pub fn two_state_step(params: &TwoStateParams, x: &[f64; 2], u: f64) -> [f64; 2] {
    [
        -params.a1 * x[1] + params.a3 * x[0] * (params.omega * u).sin(),
        (params.omega * x[0]).sin() + params.a2 * x[1] + x[0] * x[1] * u,
    ]
}

/// Iterate the two-state map for `steps` steps. The map is already discrete
/// time; no integrator is involved. Aborts when the state leaves the
/// divergence guard.
pub fn simulate_two_state(
    params: &TwoStateParams,
    x0: [f64; 2],
    signal: &InputSignal,
    steps: usize,
) -> Result<Trajectory, SystemsError> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0;
    states.push(x.to_vec());
    inputs.push(signal.at(0));
    for t in 0..steps {
        let u = signal.at(t);
        let u0 = u.first().copied().unwrap_or(0.0);
        x = two_state_step(params, &x, u0);
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(SystemsError::Diverged { step: t });
        }
        states.push(x.to_vec());
        inputs.push(signal.at(t + 1));
    }
    Ok(Trajectory { states, inputs })
}

/// Snapshot dataset sampled from an arbitrary discrete map: `count` i.i.d.
/// draws of `(x, w)` with `x_next = f(x, w)`. Useful when a single trajectory
/// would not excite the dynamics enough.
#[allow(clippy::too_many_arguments)]
pub fn map_snapshot_dataset(
    f: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    state_dim: usize,
    input_dim: usize,
    count: usize,
    x_amplitude: f64,
    w_amplitude: f64,
    seed: u64,
    train_fraction: f64,
) -> Result<TrajectoryDataset, SystemsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = move |amplitude: f64, dim: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                if amplitude > 0.0 {
                    rng.random_range(-amplitude..amplitude)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        let x = sample(x_amplitude, state_dim, &mut rng);
        let w = sample(w_amplitude, input_dim, &mut rng);
        let x_next = f(&x, &w);
        snapshots.push(Snapshot { x, w, x_next });
    }
    Ok(TrajectoryDataset::from_snapshots(snapshots, train_fraction)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_zero_state_is_fixed_point() {
        // sin(0) = 0 and there are no constant terms.
        let traj = simulate_two_state(
            &TwoStateParams::default(),
            [0.0, 0.0],
            &InputSignal::Zero { channels: 1 },
            20,
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![0.0, 0.0]));
    }

    #[test]
    fn one_step_hand_arithmetic() {
        // From x0 = (0.5, -0.1) with u = 0:
        //   x1' = -a1 * (-0.1) = -0.096
        //   x2' = sin(-1) + 0.88 * (-0.1) = sin(-1) - 0.088
        let x1 = two_state_step(&TwoStateParams::default(), &[0.5, -0.1], 0.0);
        assert!((x1[0] - (-0.096)).abs() < 1e-15);
        assert!((x1[1] - (-1.0_f64.sin() - 0.088)).abs() < 1e-15);
        assert!((x1[1] - (-0.9294709848078965)).abs() < 1e-15);
    }

    #[test]
    fn positive_unit_step_diverges() {
        // Under the map as printed, the sustained u = +1 regime is unstable
        // (the bilinear x1 x2 u term grows superlinearly) and the guard fires
        // shortly after the regime change. The bounded benchmark trace uses
        // amplitude -1 instead; see the regression lock below.
        let res = simulate_two_state(
            &TwoStateParams::default(),
            [0.5, -0.1],
            &InputSignal::Step {
                t0: 250,
                amplitude: vec![1.0],
            },
            500,
        );
        assert!(matches!(res, Err(SystemsError::Diverged { step }) if step > 250));
    }

    #[test]
    fn benchmark_trajectory_regression_lock() {
        // Step of amplitude -1 at t0 = 250 from the printed initial
        // condition; checkpoints frozen from the first verified run guard
        // against accidental changes to the map.
        let traj = simulate_two_state(
            &TwoStateParams::default(),
            [0.5, -0.1],
            &InputSignal::Step {
                t0: 250,
                amplitude: vec![-1.0],
            },
            500,
        )
        .unwrap();
        assert_eq!(traj.states.len(), 501);
        // Bounded oscillation before and after the regime change.
        let max_abs = traj
            .states
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(max_abs < 1.5, "trajectory should stay bounded, got {max_abs}");
        let checkpoints = [
            (1usize, [-0.096, -0.9294709848078965]),
            (10, [0.6053168894948289, 1.2490681601990987]),
            (250, [0.33118749826461, -0.3086692616327087]),
            (251, [-0.5824130341378029, -0.7843928995277135]),
            (499, [0.1997480578013608, 0.3249297228005267]),
        ];
        for (t, expected) in checkpoints {
            for k in 0..2 {
                assert!(
                    (traj.states[t][k] - expected[k]).abs() < 1e-12,
                    "checkpoint t={t} coord {k}: {} vs {}",
                    traj.states[t][k],
                    expected[k]
                );
            }
        }
    }

    #[test]
    fn divergence_guard_reports_step() {
        // Blow the state up with a huge persistent input.
        let params = TwoStateParams {
            a1: -5.0,
            a2: 5.0,
            a3: 5.0,
            omega: 1.0,
        };
        let res = simulate_two_state(
            &params,
            [1.0, 1.0],
            &InputSignal::Step {
                t0: 0,
                amplitude: vec![10.0],
            },
            1000,
        );
        assert!(matches!(res, Err(SystemsError::Diverged { .. })));
    }

    #[test]
    fn signals_evaluate_everywhere() {
        let step = InputSignal::Step {
            t0: 3,
            amplitude: vec![2.0],
        };
        assert_eq!(step.at(2), vec![0.0]);
        assert_eq!(step.at(3), vec![2.0]);
        let imp = InputSignal::Impulse {
            t0: 1,
            amplitude: vec![5.0],
        };
        assert_eq!(imp.at(0), vec![0.0]);
        assert_eq!(imp.at(1), vec![5.0]);
        assert_eq!(imp.at(2), vec![0.0]);
        let rec = InputSignal::Recorded {
            samples: vec![vec![1.0], vec![2.0]],
        };
        assert_eq!(rec.at(1), vec![2.0]);
        assert_eq!(rec.at(100), vec![0.0]);
    }

    #[test]
    fn map_is_bit_reproducible() {
        let p = TwoStateParams::default();
        let sig = InputSignal::Step {
            t0: 5,
            amplitude: vec![-0.7],
        };
        let a = simulate_two_state(&p, [0.3, 0.2], &sig, 100).unwrap();
        let b = simulate_two_state(&p, [0.3, 0.2], &sig, 100).unwrap();
        assert_eq!(a, b);
    }
}
