//! Koopman controllability/observability Gramians, input-output energies, and
//! the subset scores that drive the decomposition.
//!
//! For a stable lifted system the Gramians solve the discrete Lyapunov
//! equations `X_o = K_x^T X_o K_x + W_h^T W_h` and
//! `X_c = K_x X_c K_x^T + K_u K_u^T`; otherwise truncated sums over a finite
//! horizon stand in. Subset scores lift the 0/1 indicator vector of a state
//! subset through the full nonlinear dictionary (not a coordinate selection)
//! and compare the resulting quadratic form against the complement's.

use crate::dictionary::DictionaryError;
use crate::koopman::KoopmanModel;
use crate::numerics::{
    pseudo_inverse, solve_discrete_lyapunov, solve_least_squares, spectral_radius, Matrix,
    NumericsError, EPS_STAB,
};
use crate::util::fmt_g12;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

/// Tolerance used for the controllability Gramian pseudo-inverse; fitted
/// lifted systems are routinely uncontrollable in psi-space.
pub const XC_PINV_TOL: f64 = 1e-10;

/// Default horizon for the truncated-sum fallback.
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum GramianError {
    Numerics(NumericsError),
    Dictionary(DictionaryError),
    /// Empty or full subsets make the complement indicator the zero vector;
    /// constant-free dictionaries then give kappa = 0/0.
    EmptyOrFullSubset { subset: BTreeSet<usize> },
    DegenerateDenominator { subset: BTreeSet<usize> },
    SubsetOutOfRange { index: usize, states: usize },
    InvalidNormalization { mean_o: f64, mean_c: f64 },
    InvalidLambda { lambda: f64 },
    Io(String),
}

impl fmt::Display for GramianError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GramianError::Numerics(e) => write!(f, "numerics error: {e}"),
            GramianError::Dictionary(e) => write!(f, "dictionary error: {e}"),
            GramianError::EmptyOrFullSubset { subset } => write!(
                f,
                "complement indicator is the zero vector; kappa undefined for subset {subset:?}"
            ),
            GramianError::DegenerateDenominator { subset } => write!(
                f,
                "degenerate denominator (quadratic form below 1e-14) for subset {subset:?}"
            ),
            GramianError::SubsetOutOfRange { index, states } => {
                write!(f, "subset index {index} out of range for {states} states")
            }
            GramianError::InvalidNormalization { mean_o, mean_c } => write!(
                f,
                "normalization means must be positive, got ({mean_o}, {mean_c})"
            ),
            GramianError::InvalidLambda { lambda } => {
                write!(f, "lambda must be finite and nonnegative, got {lambda}")
            }
            GramianError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for GramianError {}

impl From<NumericsError> for GramianError {
    fn from(e: NumericsError) -> Self {
        GramianError::Numerics(e)
    }
}

impl From<DictionaryError> for GramianError {
    fn from(e: DictionaryError) -> Self {
        GramianError::Dictionary(e)
    }
}

impl From<std::io::Error> for GramianError {
    fn from(e: std::io::Error) -> Self {
        GramianError::Io(e.to_string())
    }
}

/// How a Gramian pair was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramianMethod {
    LyapunovExact,
    FiniteHorizon { horizon: usize },
}

/// The Gramian pair with provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KoopmanGramians {
    pub x_o: Matrix,
    pub x_c: Matrix,
    pub x_c_pinv: Matrix,
    pub method: GramianMethod,
    pub spectral_radius_kx: f64,
}

/// Compute the Gramian pair for a fitted model. Uses the exact Lyapunov path
/// when the lifted dynamics are stable and no horizon override is given;
/// otherwise sums `horizon` terms directly (default 200).
pub fn compute_gramians(
    model: &KoopmanModel,
    horizon_override: Option<usize>,
) -> Result<KoopmanGramians, GramianError> {
    let rho = spectral_radius(&model.k_x)?;
    let q_o = &model.w_h.transpose() * &model.w_h;
    let q_c = &model.k_u * &model.k_u.transpose();

    let (x_o, x_c, method) = if horizon_override.is_none() && rho < 1.0 - EPS_STAB {
        let x_o = solve_discrete_lyapunov(&model.k_x.transpose(), &q_o)?;
        let x_c = solve_discrete_lyapunov(&model.k_x, &q_c)?;
        (x_o, x_c, GramianMethod::LyapunovExact)
    } else {
        let horizon = horizon_override.unwrap_or(DEFAULT_HORIZON);
        let x_o = finite_horizon_sum(&model.k_x.transpose(), &q_o, horizon);
        let x_c = finite_horizon_sum(&model.k_x, &q_c, horizon);
        (x_o, x_c, GramianMethod::FiniteHorizon { horizon })
    };
    let x_c_pinv = pseudo_inverse(&x_c, XC_PINV_TOL)?;
    Ok(KoopmanGramians {
        x_o,
        x_c,
        x_c_pinv,
        method,
        spectral_radius_kx: rho,
    })
}

/// `sum_{t=0}^{horizon-1} A^t Q (A^T)^t` via the recursion
/// `X_{k+1} = Q + A X_k A^T`.
pub fn finite_horizon_sum(a: &Matrix, q: &Matrix, horizon: usize) -> Matrix {
    let q = q.symmetrized();
    if horizon == 0 {
        return Matrix::zeros(q.rows(), q.cols());
    }
    let mut x = q.clone();
    for _ in 1..horizon {
        x = &q + &(&(a * &x) * &a.transpose());
    }
    x.symmetrized()
}

/// Output energy `psi_x(x0)^T X_o psi_x(x0)` released from an initial state.
pub fn output_energy(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
    x0: &[f64],
) -> Result<f64, GramianError> {
    let lifted = model.state_dict.lift(x0)?;
    Ok(grams.x_o.quadratic_form(&lifted))
}

/// Minimum disturbance energy to reach `x0` from rest, with a reachability
/// diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEnergy {
    pub energy: f64,
    /// Set when `psi_x(x0)` has a component outside `range(X_c)` larger than
    /// `1e-8 * ||psi_x(x0)||`: the target is unreachable in lifted space.
    pub unreachable: bool,
}

/// `psi_x(x0)^T X_c^+ psi_x(x0)` plus the range-membership flag.
pub fn min_input_energy(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
    x0: &[f64],
) -> Result<InputEnergy, GramianError> {
    let lifted = model.state_dict.lift(x0)?;
    let energy = grams.x_c_pinv.quadratic_form(&lifted);
    // Residual of the projection onto range(X_c).
    let projected = grams.x_c.mul_vec(&grams.x_c_pinv.mul_vec(&lifted));
    let residual: Vec<f64> = lifted.iter().zip(&projected).map(|(a, b)| a - b).collect();
    let norm = crate::util::vec_norm(&lifted);
    let unreachable = crate::util::vec_norm(&residual) > 1e-8 * norm.max(f64::MIN_POSITIVE);
    Ok(InputEnergy {
        energy,
        unreachable,
    })
}

fn indicator(subset: &BTreeSet<usize>, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &i in subset {
        v[i] = 1.0;
    }
    v
}

fn validate_subset(subset: &BTreeSet<usize>, n: usize) -> Result<(), GramianError> {
    for &i in subset {
        if i >= n {
            return Err(GramianError::SubsetOutOfRange { index: i, states: n });
        }
    }
    if subset.is_empty() || subset.len() == n {
        return Err(GramianError::EmptyOrFullSubset {
            subset: subset.clone(),
        });
    }
    Ok(())
}

fn kappa_ratio(
    model: &KoopmanModel,
    metric: &Matrix,
    subset: &BTreeSet<usize>,
) -> Result<f64, GramianError> {
    let n = model.state_dim();
    validate_subset(subset, n)?;
    let ind = indicator(subset, n);
    let complement: Vec<f64> = ind.iter().map(|v| 1.0 - v).collect();
    let q_num = metric.quadratic_form(&model.state_dict.lift(&ind)?);
    let q_den = metric.quadratic_form(&model.state_dict.lift(&complement)?);
    if q_den.abs() <= 1e-14 {
        return Err(GramianError::DegenerateDenominator {
            subset: subset.clone(),
        });
    }
    Ok(q_num / q_den)
}

/// Relative internal observability of a subset: the lifted-indicator
/// quadratic form in `X_o` over the complement's.
pub fn kappa_o(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
    subset: &BTreeSet<usize>,
) -> Result<f64, GramianError> {
    kappa_ratio(model, &grams.x_o, subset)
}

/// Relative disturbance sensitivity: same ratio in `X_c^+`.
pub fn kappa_c(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
    subset: &BTreeSet<usize>,
) -> Result<f64, GramianError> {
    kappa_ratio(model, &grams.x_c_pinv, subset)
}

/// Means of the singleton kappa values, computed once per run and used to
/// make the two terms of the combined criterion commensurate.
pub fn singleton_normalization(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
) -> Result<(f64, f64), GramianError> {
    let n = model.state_dim();
    let mut sum_o = 0.0;
    let mut sum_c = 0.0;
    for i in 0..n {
        let singleton: BTreeSet<usize> = [i].into();
        sum_o += kappa_o(model, grams, &singleton)?;
        sum_c += kappa_c(model, grams, &singleton)?;
    }
    Ok((sum_o / n as f64, sum_c / n as f64))
}

/// A subset with its raw and combined scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: BTreeSet<usize>,
    pub kappa_o: f64,
    pub kappa_c: f64,
    /// `kappa_o / mean_o + lambda * kappa_c / mean_c`.
    pub kappa: f64,
    pub lambda: f64,
    pub normalization: (f64, f64),
}

/// Combined criterion `kappa = kappa_o/mean_o + lambda * kappa_c/mean_c`.
pub fn kappa_combined(
    model: &KoopmanModel,
    grams: &KoopmanGramians,
    subset: &BTreeSet<usize>,
    lambda: f64,
    normalization: (f64, f64),
) -> Result<SubsetScore, GramianError> {
    let (mean_o, mean_c) = normalization;
    if !(mean_o > 0.0 && mean_c > 0.0 && mean_o.is_finite() && mean_c.is_finite()) {
        return Err(GramianError::InvalidNormalization { mean_o, mean_c });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(GramianError::InvalidLambda { lambda });
    }
    let k_o = kappa_o(model, grams, subset)?;
    let k_c = kappa_c(model, grams, subset)?;
    Ok(SubsetScore {
        subset: subset.clone(),
        kappa_o: k_o,
        kappa_c: k_c,
        kappa: k_o / mean_o + lambda * k_c / mean_c,
        lambda,
        normalization,
    })
}

/// CSV report: one row per subset with columns
/// `subset;kappa_o;kappa_c;kappa` (subset as pipe-separated 0-based indices).
pub fn write_kappa_csv<W: Write>(scores: &[SubsetScore], mut out: W) -> Result<(), GramianError> {
    writeln!(out, "subset,kappa_o,kappa_c,kappa")?;
    for s in scores {
        let subset = s
            .subset
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("|");
        writeln!(
            out,
            "{subset},{},{},{}",
            fmt_g12(s.kappa_o),
            fmt_g12(s.kappa_c),
            fmt_g12(s.kappa)
        )?;
    }
    Ok(())
}
