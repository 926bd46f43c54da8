//! Multi-machine swing dynamics with power-flow coupling.
//!
//! Continuous dynamics per generator `i`:
//!
//! ```text
//! ddelta_i/dt = omega_i + u_{delta,i}(t)
//! domega_i/dt = (1/M_i) (-D_i omega_i + Pm_i - Pe_i) + u_{omega,i}(t)
//! Pe_i = V_i sum_j V_j (G_ij cos(delta_i - delta_j) + B_ij sin(delta_i - delta_j))
//! ```
//!
//! Integration is classical fourth-order Runge-Kutta at step `h`, sampled once
//! per second. The recorded state is relative to the reference generator and
//! excludes it: `[delta_1..delta_k, omega_1..omega_k]` over the `k = n - 1`
//! modeled machines, in generator order. Disturbance channels follow the same
//! layout and are held constant over each one-second interval.

use super::{InputSignal, SystemsError, DIVERGENCE_LIMIT};
use crate::koopman::{Trajectory, TrajectoryDataset};
use crate::numerics::Matrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-generator and per-pair network parameters.
///
/// JSON keys follow the conventional symbols: arrays `M`, `D`, `Pm`, `V`,
/// matrices `G`, `B`, the `reference` generator index, and the integration
/// step `h` in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingNetworkParams {
    #[serde(rename = "M")]
    pub inertia: Vec<f64>,
    #[serde(rename = "D")]
    pub damping: Vec<f64>,
    #[serde(rename = "Pm")]
    pub mechanical_power: Vec<f64>,
    #[serde(rename = "V")]
    pub voltage: Vec<f64>,
    #[serde(rename = "G")]
    pub conductance: Matrix,
    #[serde(rename = "B")]
    pub susceptance: Matrix,
    pub reference: usize,
    #[serde(rename = "h", default = "default_step")]
    pub step_size: f64,
}

fn default_step() -> f64 {
    0.01
}

impl SwingNetworkParams {
    pub fn n_generators(&self) -> usize {
        self.inertia.len()
    }

    /// Modeled (non-reference) generators, in index order.
    pub fn modeled(&self) -> Vec<usize> {
        (0..self.n_generators()).filter(|&i| i != self.reference).collect()
    }

    /// Dimension of the recorded relative state.
    pub fn state_dim(&self) -> usize {
        2 * (self.n_generators() - 1)
    }

    pub fn validate(&self) -> Result<(), SystemsError> {
        let n = self.n_generators();
        let err = |msg: String| Err(SystemsError::InvalidParams(msg));
        if n < 2 {
            return err("need at least two generators".into());
        }
        if self.damping.len() != n
            || self.mechanical_power.len() != n
            || self.voltage.len() != n
        {
            return err("per-generator arrays must have equal length".into());
        }
        if self.inertia.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return err("inertia entries must be positive".into());
        }
        if self.damping.iter().any(|&d| !(d.is_finite() && d >= 0.0)) {
            return err("damping entries must be nonnegative".into());
        }
        for (name, m) in [("G", &self.conductance), ("B", &self.susceptance)] {
            if m.rows() != n || m.cols() != n {
                return err(format!("{name} must be {n}x{n}"));
            }
            let asym = (m - &m.transpose()).frobenius_norm();
            if asym > 1e-9 * m.frobenius_norm().max(1.0) {
                return err(format!("{name} must be symmetric"));
            }
        }
        if self.reference >= n {
            return err(format!("reference index {} out of range", self.reference));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return err("step size must be positive".into());
        }
        let steps_per_sample = (1.0 / self.step_size).round();
        if ((steps_per_sample * self.step_size) - 1.0).abs() > 1e-9 {
            return err("step size must divide the 1-second sampling interval".into());
        }
        Ok(())
    }

    /// Electrical power injected at generator `i` for absolute angles `delta`.
    pub fn electrical_power(&self, delta: &[f64], i: usize) -> f64 {
        let n = self.n_generators();
        let vi = self.voltage[i];
        let mut acc = 0.0;
        for j in 0..n {
            let diff = delta[i] - delta[j];
            acc += self.voltage[j]
                * (self.conductance.get(i, j) * diff.cos()
                    + self.susceptance.get(i, j) * diff.sin());
        }
        vi * acc
    }
}

/// Absolute state layout used internally: `[delta_0..delta_n, omega_0..omega_n]`.
fn derivative(
    params: &SwingNetworkParams,
    y: &[f64],
    forcing: &[f64], // same layout as the relative state vector
    modeled: &[usize],
    dy: &mut [f64],
) {
    let n = params.n_generators();
    let (delta, omega) = y.split_at(n);
    let k = modeled.len();
    for i in 0..n {
        dy[i] = omega[i];
        dy[n + i] = (-params.damping[i] * omega[i] + params.mechanical_power[i]
            - params.electrical_power(delta, i))
            / params.inertia[i];
    }
    for (slot, &g) in modeled.iter().enumerate() {
        dy[g] += forcing[slot];
        dy[n + g] += forcing[k + slot];
    }
}

/// Integrate the swing network from a relative initial state under the given
/// disturbance, sampling every second for `duration_s` seconds.
pub fn simulate_swing(
    params: &SwingNetworkParams,
    state0: &[f64],
    disturbance: &InputSignal,
    duration_s: usize,
) -> Result<Trajectory, SystemsError> {
    params.validate()?;
    let n = params.n_generators();
    let modeled = params.modeled();
    let k = modeled.len();
    if state0.len() != 2 * k {
        return Err(SystemsError::InvalidParams(format!(
            "initial state has length {}, expected {}",
            state0.len(),
            2 * k
        )));
    }
    if disturbance.channels() != 2 * k {
        return Err(SystemsError::InvalidParams(format!(
            "disturbance has {} channels, expected {}",
            disturbance.channels(),
            2 * k
        )));
    }

    // Absolute initial condition: the reference machine starts at the origin
    // of both angle and speed, so relative and absolute coordinates coincide.
    let mut y = vec![0.0; 2 * n];
    for (slot, &g) in modeled.iter().enumerate() {
        y[g] = state0[slot];
        y[n + g] = state0[k + slot];
    }

    let h = params.step_size;
    let steps_per_sample = (1.0 / h).round() as usize;
    let relative = |y: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * k);
        for &g in &modeled {
            out.push(y[g] - y[params.reference]);
        }
        for &g in &modeled {
            out.push(y[n + g] - y[n + params.reference]);
        }
        out
    };

    let mut states = Vec::with_capacity(duration_s + 1);
    let mut inputs = Vec::with_capacity(duration_s + 1);
    states.push(relative(&y));
    inputs.push(disturbance.at(0));

    let mut k1 = vec![0.0; 2 * n];
    let mut k2 = vec![0.0; 2 * n];
    let mut k3 = vec![0.0; 2 * n];
    let mut k4 = vec![0.0; 2 * n];
    let mut stage = vec![0.0; 2 * n];

    for second in 0..duration_s {
        let forcing = disturbance.at(second);
        for _ in 0..steps_per_sample {
            derivative(params, &y, &forcing, &modeled, &mut k1);
            for i in 0..2 * n {
                stage[i] = y[i] + 0.5 * h * k1[i];
            }
            derivative(params, &stage, &forcing, &modeled, &mut k2);
            for i in 0..2 * n {
                stage[i] = y[i] + 0.5 * h * k2[i];
            }
            derivative(params, &stage, &forcing, &modeled, &mut k3);
            for i in 0..2 * n {
                stage[i] = y[i] + h * k3[i];
            }
            derivative(params, &stage, &forcing, &modeled, &mut k4);
            for i in 0..2 * n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if y.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(SystemsError::Diverged { step: second });
        }
        states.push(relative(&y));
        inputs.push(disturbance.at(second + 1));
    }
    Ok(Trajectory { states, inputs })
}

/// Simulate `n_trajectories` random experiments: initial states perturbed
/// around `base_state` and piecewise-constant random disturbances, split into
/// train/test by whole trajectories. Returns the raw trajectories alongside
/// the assembled dataset.
#[allow(clippy::too_many_arguments)]
pub fn swing_random_dataset(
    params: &SwingNetworkParams,
    base_state: &[f64],
    n_trajectories: usize,
    duration_s: usize,
    ic_amplitude: f64,
    disturbance_amplitude: f64,
    seed: u64,
    train_fraction: f64,
) -> Result<(Vec<Trajectory>, TrajectoryDataset), SystemsError> {
    params.validate()?;
    let dim = params.state_dim();
    if base_state.len() != dim {
        return Err(SystemsError::InvalidParams(format!(
            "base state has length {}, expected {dim}",
            base_state.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = Vec::with_capacity(n_trajectories);
    for _ in 0..n_trajectories {
        let x0: Vec<f64> = base_state
            .iter()
            .map(|&v| v + rng.random_range(-ic_amplitude..ic_amplitude))
            .collect();
        let samples: Vec<Vec<f64>> = (0..duration_s + 1)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-disturbance_amplitude..disturbance_amplitude))
                    .collect()
            })
            .collect();
        let signal = InputSignal::Recorded { samples };
        trajectories.push(simulate_swing(params, &x0, &signal, duration_s)?);
    }
    let dataset = TrajectoryDataset::from_trajectories(&trajectories, train_fraction, true)?;
    Ok((trajectories, dataset))
}
