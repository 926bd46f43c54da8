//! Affine Koopman control models fitted from snapshot data.
//!
//! The model advances lifted coordinates linearly,
//! `psi_x(x_{t+1}) = K_x psi_x(x_t) + K_u psi_u(w_t) (+ K_xw psi_xw(x_t, w_t))`,
//! with a linear output map `y_t = W_h psi_x(x_t)`. Fitting is closed-form
//! (EDMD) for fixed dictionaries or alternating gradient/least-squares for
//! trainable ones (deep DMD).

mod fit;

pub use fit::{fit_deep, fit_edmd, fit_output_map, DeepHyperParams};

use crate::dictionary::{Dictionary, DictionaryError};
use crate::numerics::{Matrix, NumericsError};
use crate::util::fmt_g12;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub enum KoopmanError {
    Dictionary(DictionaryError),
    Numerics(NumericsError),
    InsufficientSnapshots { needed: usize, got: usize },
    MisalignedOutputs { expected: usize, got: usize },
    CrossDictMissing,
    NotNeural,
    EmptyDataset,
    InvalidSplit(String),
    DimensionMismatch(String),
    Diverged { step: usize },
    Io(String),
    Parse(String),
}

impl fmt::Display for KoopmanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KoopmanError::Dictionary(e) => write!(f, "dictionary error: {e}"),
            KoopmanError::Numerics(e) => write!(f, "numerics error: {e}"),
            KoopmanError::InsufficientSnapshots { needed, got } => write!(
                f,
                "insufficient snapshots: need at least {needed} training pairs, got {got}"
            ),
            KoopmanError::MisalignedOutputs { expected, got } => write!(
                f,
                "outputs misaligned with snapshots: expected {expected}, got {got}"
            ),
            KoopmanError::CrossDictMissing => {
                write!(f, "model was fitted without a cross-term dictionary")
            }
            KoopmanError::NotNeural => write!(f, "deep fitting requires neural dictionaries"),
            KoopmanError::EmptyDataset => write!(f, "dataset has no snapshots"),
            KoopmanError::InvalidSplit(msg) => write!(f, "invalid train/test split: {msg}"),
            KoopmanError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            KoopmanError::Diverged { step } => {
                write!(f, "rollout diverged to non-finite values at step {step}")
            }
            KoopmanError::Io(msg) => write!(f, "i/o error: {msg}"),
            KoopmanError::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for KoopmanError {}

impl From<DictionaryError> for KoopmanError {
    fn from(e: DictionaryError) -> Self {
        KoopmanError::Dictionary(e)
    }
}

impl From<NumericsError> for KoopmanError {
    fn from(e: NumericsError) -> Self {
        KoopmanError::Numerics(e)
    }
}

impl From<std::io::Error> for KoopmanError {
    fn from(e: std::io::Error) -> Self {
        KoopmanError::Io(e.to_string())
    }
}

/// One training triple `(x_t, w_t, x_{t+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// Per-coordinate affine normalization `x_norm = (x - offset) / factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub state_offset: Vec<f64>,
    pub state_factor: Vec<f64>,
    pub input_offset: Vec<f64>,
    pub input_factor: Vec<f64>,
}

impl Scaling {
    pub fn identity(state_dim: usize, input_dim: usize) -> Scaling {
        Scaling {
            state_offset: vec![0.0; state_dim],
            state_factor: vec![1.0; state_dim],
            input_offset: vec![0.0; input_dim],
            input_factor: vec![1.0; input_dim],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.state_offset.iter().all(|&v| v == 0.0)
            && self.state_factor.iter().all(|&v| v == 1.0)
            && self.input_offset.iter().all(|&v| v == 0.0)
            && self.input_factor.iter().all(|&v| v == 1.0)
    }

    /// Mean/standard-deviation scaling estimated from the given snapshots.
    /// Constant coordinates keep factor 1 so the map stays invertible.
    pub fn from_snapshots<'a>(snapshots: impl Iterator<Item = &'a Snapshot> + Clone) -> Scaling {
        fn stats(samples: &[&Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
            let dim = samples.first().map_or(0, |v| v.len());
            let count = samples.len().max(1) as f64;
            let mut mean = vec![0.0; dim];
            for s in samples {
                for (m, v) in mean.iter_mut().zip(s.iter()) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![0.0; dim];
            for s in samples {
                for ((va, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                    *va += (v - m) * (v - m);
                }
            }
            let std: Vec<f64> = var
                .iter()
                .map(|v| {
                    let s = (v / count).sqrt();
                    if s > 1e-12 {
                        s
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, std)
        }
        let states: Vec<&Vec<f64>> = snapshots.clone().map(|s| &s.x).collect();
        let inputs: Vec<&Vec<f64>> = snapshots.map(|s| &s.w).collect();
        let (state_offset, state_factor) = stats(&states);
        let (input_offset, input_factor) = stats(&inputs);
        Scaling {
            state_offset,
            state_factor,
            input_offset,
            input_factor,
        }
    }

    pub fn normalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.state_offset)
            .zip(&self.state_factor)
            .map(|((v, o), f)| (v - o) / f)
            .collect()
    }

    pub fn denormalize_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.state_offset)
            .zip(&self.state_factor)
            .map(|((v, o), f)| v * f + o)
            .collect()
    }

    pub fn normalize_input(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.input_offset)
            .zip(&self.input_factor)
            .map(|((v, o), f)| (v - o) / f)
            .collect()
    }
}

/// A recorded state/input time series; `states[t]` pairs with `inputs[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn snapshots(&self) -> Vec<Snapshot> {
        (0..self.states.len().saturating_sub(1))
            .map(|t| Snapshot {
                x: self.states[t].clone(),
                w: self.inputs[t].clone(),
                x_next: self.states[t + 1].clone(),
            })
            .collect()
    }
}

/// Write trajectories as CSV with columns `t, x_1..x_n, w_1..w_m`.
/// Several trajectories are concatenated; `t` restarting at 0 marks a new one.
pub fn write_trajectories_csv<W: Write>(
    trajectories: &[Trajectory],
    mut out: W,
) -> Result<(), KoopmanError> {
    let n = trajectories
        .first()
        .and_then(|t| t.states.first())
        .map_or(0, |s| s.len());
    let m = trajectories
        .first()
        .and_then(|t| t.inputs.first())
        .map_or(0, |s| s.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("w_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for traj in trajectories {
        for (t, (x, w)) in traj.states.iter().zip(&traj.inputs).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| fmt_g12(*v)));
            row.extend(w.iter().map(|v| fmt_g12(*v)));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Read the CSV written by [`write_trajectories_csv`].
pub fn read_trajectories_csv<R: Read>(
    reader: R,
    state_dim: usize,
    input_dim: usize,
) -> Result<Vec<Trajectory>, KoopmanError> {
    let buf = BufReader::new(reader);
    let mut lines = buf.lines();
    let header = lines
        .next()
        .ok_or_else(|| KoopmanError::Parse("empty trajectory file".into()))?
        .map_err(KoopmanError::from)?;
    let expected_cols = 1 + state_dim + input_dim;
    if header.split(',').count() != expected_cols {
        return Err(KoopmanError::Parse(format!(
            "header has {} columns, expected {expected_cols}",
            header.split(',').count()
        )));
    }
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut last_t: Option<i64> = None;
    for line in lines {
        let line = line.map_err(KoopmanError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(KoopmanError::Parse(format!(
                "row has {} columns, expected {expected_cols}",
                fields.len()
            )));
        }
        let t: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| KoopmanError::Parse(format!("bad t {:?}: {e}", fields[0])))?;
        let values: Result<Vec<f64>, KoopmanError> = fields[1..]
            .iter()
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| KoopmanError::Parse(format!("bad value {tok:?}: {e}")))
            })
            .collect();
        let values = values?;
        let new_trajectory = match last_t {
            None => true,
            Some(prev) => t <= prev,
        };
        if new_trajectory {
            trajectories.push(Trajectory {
                states: Vec::new(),
                inputs: Vec::new(),
            });
        }
        let traj = trajectories.last_mut().unwrap();
        traj.states.push(values[..state_dim].to_vec());
        traj.inputs.push(values[state_dim..].to_vec());
        last_t = Some(t);
    }
    if trajectories.is_empty() {
        return Err(KoopmanError::Parse("no data rows".into()));
    }
    Ok(trajectories)
}

/// Snapshot triples with a train/test split and normalization metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub snapshots: Vec<Snapshot>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub scaling: Scaling,
    state_dim: usize,
    input_dim: usize,
}

impl TrajectoryDataset {
    /// Build from snapshots with the first `train_fraction` (by order) as the
    /// training split. Scaling starts as the identity.
    pub fn from_snapshots(
        snapshots: Vec<Snapshot>,
        train_fraction: f64,
    ) -> Result<TrajectoryDataset, KoopmanError> {
        let count = snapshots.len();
        let n_train = ((count as f64) * train_fraction).round() as usize;
        let train: Vec<usize> = (0..n_train.min(count)).collect();
        let test: Vec<usize> = (n_train.min(count)..count).collect();
        Self::with_split(snapshots, train, test)
    }

    /// Build with an explicit split; validates disjointness and shapes.
    pub fn with_split(
        snapshots: Vec<Snapshot>,
        train_indices: Vec<usize>,
        test_indices: Vec<usize>,
    ) -> Result<TrajectoryDataset, KoopmanError> {
        if snapshots.is_empty() {
            return Err(KoopmanError::EmptyDataset);
        }
        let state_dim = snapshots[0].x.len();
        let input_dim = snapshots[0].w.len();
        for s in &snapshots {
            if s.x.len() != state_dim || s.x_next.len() != state_dim || s.w.len() != input_dim {
                return Err(KoopmanError::DimensionMismatch(
                    "snapshot dimensions are inconsistent".into(),
                ));
            }
            if !(s.x.iter().chain(&s.w).chain(&s.x_next)).all(|v| v.is_finite()) {
                return Err(KoopmanError::DimensionMismatch(
                    "snapshot contains non-finite values".into(),
                ));
            }
        }
        let mut seen = vec![false; snapshots.len()];
        for &i in train_indices.iter().chain(&test_indices) {
            if i >= snapshots.len() {
                return Err(KoopmanError::InvalidSplit(format!(
                    "index {i} out of range for {} snapshots",
                    snapshots.len()
                )));
            }
            if seen[i] {
                return Err(KoopmanError::InvalidSplit(format!(
                    "index {i} appears in both splits"
                )));
            }
            seen[i] = true;
        }
        Ok(TrajectoryDataset {
            scaling: Scaling::identity(state_dim, input_dim),
            snapshots,
            train_indices,
            test_indices,
            state_dim,
            input_dim,
        })
    }

    /// Concatenate trajectories. With `split_by_trajectory`, the first
    /// `train_fraction` of whole trajectories form the training split;
    /// otherwise the split cuts the concatenated snapshot sequence.
    pub fn from_trajectories(
        trajectories: &[Trajectory],
        train_fraction: f64,
        split_by_trajectory: bool,
    ) -> Result<TrajectoryDataset, KoopmanError> {
        if split_by_trajectory {
            let n_train_traj = ((trajectories.len() as f64) * train_fraction).round() as usize;
            let mut snapshots = Vec::new();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (k, traj) in trajectories.iter().enumerate() {
                for s in traj.snapshots() {
                    if k < n_train_traj {
                        train.push(snapshots.len());
                    } else {
                        test.push(snapshots.len());
                    }
                    snapshots.push(s);
                }
            }
            Self::with_split(snapshots, train, test)
        } else {
            let snapshots: Vec<Snapshot> =
                trajectories.iter().flat_map(|t| t.snapshots()).collect();
            Self::from_snapshots(snapshots, train_fraction)
        }
    }

    /// Replace the identity scaling by mean/std statistics of the training
    /// split.
    pub fn with_normalization(mut self) -> TrajectoryDataset {
        let train: Vec<&Snapshot> = self.train_indices.iter().map(|&i| &self.snapshots[i]).collect();
        if !train.is_empty() {
            self.scaling = Scaling::from_snapshots(train.into_iter());
        }
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn train_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.train_indices.iter().map(|&i| &self.snapshots[i])
    }

    pub fn test_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        self.test_indices.iter().map(|&i| &self.snapshots[i])
    }
}

/// One line of the deep-DMD training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Fit diagnostics attached to a fitted model. Errors are vector-norm
/// relative, averaged over snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub ridge: f64,
    /// Mean `||psi(x') - prediction|| / ||psi(x')||` over the train split.
    pub lifted_train_error: f64,
    /// Same over the test split (absent when the split is empty).
    pub lifted_test_error: Option<f64>,
    /// Mean one-step relative error of the state read-out, train split.
    pub state_train_error: f64,
    pub state_test_error: Option<f64>,
    pub rank_deficient: bool,
    pub training_log: Vec<EpochLog>,
    pub diverged: bool,
    pub notes: Vec<String>,
}

impl FitReport {
    fn new(method: &str, ridge: f64) -> FitReport {
        FitReport {
            method: method.to_string(),
            ridge,
            lifted_train_error: f64::NAN,
            lifted_test_error: None,
            state_train_error: f64::NAN,
            state_test_error: None,
            rank_deficient: false,
            training_log: Vec::new(),
            diverged: false,
            notes: Vec::new(),
        }
    }
}

/// The fitted affine Koopman control model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub state_dict: Dictionary,
    pub input_dict: Dictionary,
    pub cross_dict: Option<Dictionary>,
    pub k_x: Matrix,
    pub k_u: Matrix,
    pub k_xw: Option<Matrix>,
    pub w_h: Matrix,
    pub scaling: Scaling,
    pub report: FitReport,
}

impl KoopmanModel {
    pub fn state_dim(&self) -> usize {
        self.state_dict.input_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dict.input_dim()
    }

    pub fn lifted_state_dim(&self) -> usize {
        self.state_dict.lifted_dim()
    }

    /// Assemble a model directly from its parts; `w_h` defaults to the
    /// selector of the first `n` lifted coordinates.
    pub fn from_parts(
        state_dict: Dictionary,
        input_dict: Dictionary,
        k_x: Matrix,
        k_u: Matrix,
        w_h: Option<Matrix>,
    ) -> Result<KoopmanModel, KoopmanError> {
        let n_l = state_dict.lifted_dim();
        let m_l = input_dict.lifted_dim();
        if k_x.rows() != n_l || k_x.cols() != n_l {
            return Err(KoopmanError::DimensionMismatch(format!(
                "K_x must be {n_l}x{n_l}, got {}x{}",
                k_x.rows(),
                k_x.cols()
            )));
        }
        if k_u.rows() != n_l || k_u.cols() != m_l {
            return Err(KoopmanError::DimensionMismatch(format!(
                "K_u must be {n_l}x{m_l}, got {}x{}",
                k_u.rows(),
                k_u.cols()
            )));
        }
        let n = state_dict.input_dim();
        let w_h = w_h.unwrap_or_else(|| state_selector(n, n_l));
        if w_h.cols() != n_l {
            return Err(KoopmanError::DimensionMismatch(format!(
                "W_h must have {n_l} columns, got {}",
                w_h.cols()
            )));
        }
        let scaling = Scaling::identity(n, input_dict.input_dim());
        Ok(KoopmanModel {
            state_dict,
            input_dict,
            cross_dict: None,
            k_x,
            k_u,
            k_xw: None,
            w_h,
            scaling,
            report: FitReport::new("direct", 0.0),
        })
    }

    /// Relative share of the cross-term block,
    /// `||K_xw||_F / (||K_x||_F + ||K_u||_F + ||K_xw||_F)`.
    pub fn cross_term_ratio(&self) -> Result<f64, KoopmanError> {
        let k_xw = self.k_xw.as_ref().ok_or(KoopmanError::CrossDictMissing)?;
        let num = k_xw.frobenius_norm();
        let den = self.k_x.frobenius_norm() + self.k_u.frobenius_norm() + num;
        Ok(if den == 0.0 { 0.0 } else { num / den })
    }

    /// Roll the model forward `steps` steps from `x0` under the given input
    /// sequence, re-lifting the predicted state at every step. One-step
    /// errors then compound through the (stable) state dynamics rather than
    /// through the fitted lifted operator, whose action off the data manifold
    /// is unconstrained by the regression and routinely amplifies tiny
    /// feature inconsistencies beyond usefulness within a few steps.
    pub fn predict_multistep_relift(
        &self,
        x0: &[f64],
        inputs: &[Vec<f64>],
        steps: usize,
    ) -> Result<Vec<Vec<f64>>, KoopmanError> {
        if steps > inputs.len() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "{steps} steps requested but only {} inputs supplied",
                inputs.len()
            )));
        }
        let n = self.state_dim();
        if x0.len() != n {
            return Err(KoopmanError::DimensionMismatch(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        let mut x = x0.to_vec();
        let mut out = Vec::with_capacity(steps);
        for (t, w) in inputs.iter().take(steps).enumerate() {
            let x_norm = self.scaling.normalize_state(&x);
            let w_norm = self.scaling.normalize_input(w);
            let mut z_next = self.k_x.mul_vec(&self.state_dict.lift(&x_norm)?);
            for (a, b) in z_next
                .iter_mut()
                .zip(self.k_u.mul_vec(&self.input_dict.lift(&w_norm)?))
            {
                *a += b;
            }
            if let (Some(cross), Some(k_xw)) = (&self.cross_dict, &self.k_xw) {
                let mut xw = x_norm.clone();
                xw.extend_from_slice(&w_norm);
                for (a, b) in z_next.iter_mut().zip(k_xw.mul_vec(&cross.lift(&xw)?)) {
                    *a += b;
                }
            }
            if !z_next.iter().all(|v| v.is_finite()) {
                return Err(KoopmanError::Diverged { step: t });
            }
            x = self.scaling.denormalize_state(&z_next[..n]);
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Roll the lifted dynamics forward `steps` steps from `x0` under the
    /// given input sequence. The state read-out is the first `n` lifted
    /// coordinates; intermediate states are never re-lifted. Returns the
    /// predicted states for t = 1..=steps.
    pub fn predict_multistep(
        &self,
        x0: &[f64],
        inputs: &[Vec<f64>],
        steps: usize,
    ) -> Result<Vec<Vec<f64>>, KoopmanError> {
        if steps > inputs.len() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "{steps} steps requested but only {} inputs supplied",
                inputs.len()
            )));
        }
        let n = self.state_dim();
        if x0.len() != n {
            return Err(KoopmanError::DimensionMismatch(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        let mut z = self.state_dict.lift(&self.scaling.normalize_state(x0))?;
        let mut out = Vec::with_capacity(steps);
        for (t, w) in inputs.iter().take(steps).enumerate() {
            let w_norm = self.scaling.normalize_input(w);
            let u_lift = self.input_dict.lift(&w_norm)?;
            let mut z_next = self.k_x.mul_vec(&z);
            let ku_w = self.k_u.mul_vec(&u_lift);
            for (a, b) in z_next.iter_mut().zip(&ku_w) {
                *a += b;
            }
            if let (Some(cross), Some(k_xw)) = (&self.cross_dict, &self.k_xw) {
                // Cross features are exogenous signals recomputed from the
                // current read-out state and the input.
                let mut xw = z[..n].to_vec();
                xw.extend_from_slice(&w_norm);
                let c_lift = cross.lift(&xw)?;
                let kc = k_xw.mul_vec(&c_lift);
                for (a, b) in z_next.iter_mut().zip(&kc) {
                    *a += b;
                }
            }
            if !z_next.iter().all(|v| v.is_finite()) {
                return Err(KoopmanError::Diverged { step: t });
            }
            out.push(self.scaling.denormalize_state(&z_next[..n]));
            z = z_next;
        }
        Ok(out)
    }
}

/// The `p = n` output map that reads the state out of a state-inclusive lift.
pub fn state_selector(n: usize, n_lifted: usize) -> Matrix {
    Matrix::from_fn(n, n_lifted, |i, j| if i == j { 1.0 } else { 0.0 })
}
