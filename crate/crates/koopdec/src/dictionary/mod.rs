//! Observable dictionaries: maps from states (or inputs) to lifted feature
//! vectors.
//!
//! Every state dictionary is *state inclusive*: the first `input_dim` entries
//! of `lift(v)` are `v` itself, verbatim. The remaining entries are the
//! dictionary's nonlinear features in a fixed documented order:
//!
//! - `polynomial`: monomials of total degree 2..=max_degree in graded
//!   lexicographic order (within one degree, larger exponent on an earlier
//!   coordinate sorts first), after the verbatim degree-1 block. No constant
//!   term unless explicitly enabled; an enabled constant is appended last.
//! - `thin_plate_rbf`: `phi(r) = r^2 ln r` with `r = ||v - c_j|| / scale`,
//!   one feature per center, in center order.
//! - `neural`: the network outputs, optionally shifted by the network's value
//!   at the origin so that `lift(0) = 0` (used for input dictionaries).
//! - `mixed_polynomial`: monomials `x^a w^b` with both `|a| >= 1` and
//!   `|b| >= 1`, graded lexicographic over the concatenated exponent vector.
//!   This kind is *not* state inclusive; it only ever feeds cross terms.

mod network;

pub use network::{Activation, Adam, NetworkGradient, NetworkParams};

use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryError {
    DimensionMismatch { expected: usize, got: usize },
    NonFiniteInput,
    NotNeural,
    InvalidSpec(String),
}

impl fmt::Display for DictionaryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DictionaryError::DimensionMismatch { expected, got } => {
                write!(f, "dictionary input has length {got}, expected {expected}")
            }
            DictionaryError::NonFiniteInput => write!(f, "dictionary input is not finite"),
            DictionaryError::NotNeural => {
                write!(f, "operation requires a neural dictionary")
            }
            DictionaryError::InvalidSpec(msg) => write!(f, "invalid dictionary spec: {msg}"),
        }
    }
}

impl std::error::Error for DictionaryError {}

/// Exponent vectors of all monomials with total degree in `lo..=hi` over
/// `dim` variables, graded lexicographic.
fn monomials(dim: usize, lo: u32, hi: u32) -> Vec<Vec<u32>> {
    fn fill(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if dim == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(dim - 1, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in lo..=hi {
        fill(dim, degree, &mut Vec::new(), &mut out);
    }
    out
}

fn eval_monomial(exponents: &[u32], v: &[f64]) -> f64 {
    exponents
        .iter()
        .zip(v)
        .map(|(&e, &x)| x.powi(e as i32))
        .product()
}

/// d/dx_j of the monomial at `v`.
fn monomial_partial(exponents: &[u32], v: &[f64], j: usize) -> f64 {
    let e = exponents[j];
    if e == 0 {
        return 0.0;
    }
    let mut acc = e as f64 * v[j].powi(e as i32 - 1);
    for (i, (&ei, &x)) in exponents.iter().zip(v).enumerate() {
        if i != j {
            acc *= x.powi(ei as i32);
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDictionary {
    dim: usize,
    max_degree: u32,
    include_constant: bool,
    /// Degree >= 2 monomials; the degree-1 block is the verbatim state copy.
    higher: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlateRbf {
    dim: usize,
    centers: Vec<Vec<f64>>,
    scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralDictionary {
    pub params: NetworkParams,
    /// When set, the network's output at the origin is subtracted so that
    /// `lift(0) = 0`; input dictionaries need this (no constant features).
    pub subtract_origin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolynomial {
    state_dim: usize,
    input_dim: usize,
    max_degree: u32,
    monomials: Vec<Vec<u32>>,
}

/// A finite observable dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionarySpec", into = "DictionarySpec")]
pub enum Dictionary {
    Identity { dim: usize },
    Polynomial(PolynomialDictionary),
    ThinPlateRbf(ThinPlateRbf),
    Neural(NeuralDictionary),
    MixedPolynomial(MixedPolynomial),
}

impl Dictionary {
    pub fn identity(dim: usize) -> Dictionary {
        assert!(dim >= 1);
        Dictionary::Identity { dim }
    }

    pub fn polynomial(dim: usize, max_degree: u32) -> Dictionary {
        Self::polynomial_opts(dim, max_degree, false)
    }

    pub fn polynomial_opts(dim: usize, max_degree: u32, include_constant: bool) -> Dictionary {
        assert!(dim >= 1 && max_degree >= 1);
        let higher = if max_degree >= 2 {
            monomials(dim, 2, max_degree)
        } else {
            Vec::new()
        };
        Dictionary::Polynomial(PolynomialDictionary {
            dim,
            max_degree,
            include_constant,
            higher,
        })
    }

    pub fn thin_plate_rbf(centers: Vec<Vec<f64>>, scale: f64) -> Dictionary {
        assert!(!centers.is_empty() && scale > 0.0);
        let dim = centers[0].len();
        assert!(centers.iter().all(|c| c.len() == dim));
        Dictionary::ThinPlateRbf(ThinPlateRbf { dim, centers, scale })
    }

    /// Thin-plate dictionary with centers drawn by uniform subsampling of the
    /// supplied training states (fixed seed, without replacement).
    pub fn thin_plate_from_states(
        states: &[Vec<f64>],
        count: usize,
        scale: f64,
        seed: u64,
    ) -> Dictionary {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        assert!(!states.is_empty());
        let mut idx: Vec<usize> = (0..states.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let centers: Vec<Vec<f64>> = idx
            .into_iter()
            .take(count.min(states.len()))
            .map(|i| states[i].clone())
            .collect();
        Dictionary::thin_plate_rbf(centers, scale)
    }

    /// Trainable state dictionary: verbatim state copy plus network features.
    pub fn neural_state(
        input_dim: usize,
        width: usize,
        depth: usize,
        activation: Activation,
        seed: u64,
    ) -> Dictionary {
        Dictionary::Neural(NeuralDictionary {
            params: NetworkParams::random(input_dim, width, depth, activation, seed),
            subtract_origin: false,
        })
    }

    /// Trainable input dictionary; the origin shift keeps `lift(0) = 0`.
    pub fn neural_input(
        input_dim: usize,
        width: usize,
        depth: usize,
        activation: Activation,
        seed: u64,
    ) -> Dictionary {
        Dictionary::Neural(NeuralDictionary {
            params: NetworkParams::random(input_dim, width, depth, activation, seed),
            subtract_origin: true,
        })
    }

    /// Cross-term dictionary over concatenated `(x, w)`: genuinely mixed
    /// monomials only, so `lift(x, 0) = 0` and `lift(0, w) = 0`.
    pub fn mixed_polynomial(state_dim: usize, input_dim: usize, max_degree: u32) -> Dictionary {
        assert!(state_dim >= 1 && input_dim >= 1 && max_degree >= 2);
        let all = monomials(state_dim + input_dim, 2, max_degree);
        let mixed: Vec<Vec<u32>> = all
            .into_iter()
            .filter(|e| {
                let sx: u32 = e[..state_dim].iter().sum();
                let sw: u32 = e[state_dim..].iter().sum();
                sx >= 1 && sw >= 1
            })
            .collect();
        Dictionary::MixedPolynomial(MixedPolynomial {
            state_dim,
            input_dim,
            max_degree,
            monomials: mixed,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dictionary::Identity { dim } => *dim,
            Dictionary::Polynomial(p) => p.dim,
            Dictionary::ThinPlateRbf(r) => r.dim,
            Dictionary::Neural(n) => n.params.input_dim(),
            Dictionary::MixedPolynomial(m) => m.state_dim + m.input_dim,
        }
    }

    pub fn lifted_dim(&self) -> usize {
        match self {
            Dictionary::Identity { dim } => *dim,
            Dictionary::Polynomial(p) => {
                p.dim + p.higher.len() + usize::from(p.include_constant)
            }
            Dictionary::ThinPlateRbf(r) => r.dim + r.centers.len(),
            Dictionary::Neural(n) => n.params.input_dim() + n.params.output_dim(),
            Dictionary::MixedPolynomial(m) => m.monomials.len(),
        }
    }

    /// Whether `lift` starts with a verbatim copy of the input.
    pub fn is_state_inclusive(&self) -> bool {
        !matches!(self, Dictionary::MixedPolynomial(_))
    }

    pub fn as_neural(&self) -> Option<&NeuralDictionary> {
        match self {
            Dictionary::Neural(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_neural_mut(&mut self) -> Option<&mut NeuralDictionary> {
        match self {
            Dictionary::Neural(n) => Some(n),
            _ => None,
        }
    }

    fn check_input(&self, v: &[f64]) -> Result<(), DictionaryError> {
        if v.len() != self.input_dim() {
            return Err(DictionaryError::DimensionMismatch {
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(DictionaryError::NonFiniteInput);
        }
        Ok(())
    }

    /// Evaluate the dictionary at `v`. Deterministic: identical inputs give
    /// bit-identical outputs.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>, DictionaryError> {
        self.check_input(v)?;
        let mut out = Vec::with_capacity(self.lifted_dim());
        match self {
            Dictionary::Identity { .. } => out.extend_from_slice(v),
            Dictionary::Polynomial(p) => {
                out.extend_from_slice(v);
                for e in &p.higher {
                    out.push(eval_monomial(e, v));
                }
                if p.include_constant {
                    out.push(1.0);
                }
            }
            Dictionary::ThinPlateRbf(r) => {
                out.extend_from_slice(v);
                for c in &r.centers {
                    out.push(thin_plate(v, c, r.scale));
                }
            }
            Dictionary::Neural(n) => {
                out.extend_from_slice(v);
                let mut feats = n.params.output(v);
                if n.subtract_origin {
                    let origin = n.params.output(&vec![0.0; v.len()]);
                    for (f, o) in feats.iter_mut().zip(origin) {
                        *f -= o;
                    }
                }
                out.extend(feats);
            }
            Dictionary::MixedPolynomial(m) => {
                for e in &m.monomials {
                    out.push(eval_monomial(e, v));
                }
            }
        }
        Ok(out)
    }

    /// Exact Jacobian of `lift` at `v` (`lifted_dim x input_dim`).
    pub fn jacobian(&self, v: &[f64]) -> Result<Matrix, DictionaryError> {
        self.check_input(v)?;
        let n = self.input_dim();
        let rows = self.lifted_dim();
        let mut jac = Matrix::zeros(rows, n);
        match self {
            Dictionary::Identity { .. } => {
                for i in 0..n {
                    jac.set(i, i, 1.0);
                }
            }
            Dictionary::Polynomial(p) => {
                for i in 0..n {
                    jac.set(i, i, 1.0);
                }
                for (k, e) in p.higher.iter().enumerate() {
                    for j in 0..n {
                        jac.set(n + k, j, monomial_partial(e, v, j));
                    }
                }
                // constant row (if any) stays zero
            }
            Dictionary::ThinPlateRbf(r) => {
                for i in 0..n {
                    jac.set(i, i, 1.0);
                }
                for (k, c) in r.centers.iter().enumerate() {
                    let g = thin_plate_gradient(v, c, r.scale);
                    for j in 0..n {
                        jac.set(n + k, j, g[j]);
                    }
                }
            }
            Dictionary::Neural(nd) => {
                for i in 0..n {
                    jac.set(i, i, 1.0);
                }
                // The origin shift is constant in v, so the Jacobian is the
                // plain network Jacobian either way.
                let net_jac = nd.params.jacobian(v);
                for r in 0..net_jac.rows() {
                    for c in 0..n {
                        jac.set(n + r, c, net_jac.get(r, c));
                    }
                }
            }
            Dictionary::MixedPolynomial(m) => {
                for (k, e) in m.monomials.iter().enumerate() {
                    for j in 0..n {
                        jac.set(k, j, monomial_partial(e, v, j));
                    }
                }
            }
        }
        Ok(jac)
    }

    /// Gradient of `<upstream, lift(v)>` with respect to every network weight
    /// and bias. Only neural dictionaries have trainable parameters.
    pub fn parameter_gradient(
        &self,
        v: &[f64],
        upstream: &[f64],
    ) -> Result<NetworkGradient, DictionaryError> {
        let nd = self.as_neural().ok_or(DictionaryError::NotNeural)?;
        self.check_input(v)?;
        if upstream.len() != self.lifted_dim() {
            return Err(DictionaryError::DimensionMismatch {
                expected: self.lifted_dim(),
                got: upstream.len(),
            });
        }
        let n = self.input_dim();
        // The verbatim copy does not depend on the parameters.
        let up_net = &upstream[n..];
        let mut grad = nd.params.parameter_gradient(v, up_net);
        if nd.subtract_origin {
            let origin_grad = nd.params.parameter_gradient(&vec![0.0; n], up_net);
            grad.sub_assign(&origin_grad);
        }
        Ok(grad)
    }
}

fn thin_plate(v: &[f64], center: &[f64], scale: f64) -> f64 {
    let r2: f64 = v
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (scale * scale);
    if r2 == 0.0 {
        0.0
    } else {
        // r^2 ln r = r2 * ln(r2) / 2
        0.5 * r2 * r2.ln()
    }
}

fn thin_plate_gradient(v: &[f64], center: &[f64], scale: f64) -> Vec<f64> {
    let s2 = scale * scale;
    let r2: f64 = v
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / s2;
    if r2 == 0.0 {
        return vec![0.0; v.len()];
    }
    // d/dx [r^2 ln r] = (2 ln r + 1) (x - c) / scale^2, ln r = ln(r2)/2
    let factor = (r2.ln() + 1.0) / s2;
    v.iter().zip(center).map(|(a, b)| factor * (a - b)).collect()
}

/// Serialized form: `{"kind": "...", parameters per kind}`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DictionarySpec {
    Identity {
        input_dim: usize,
    },
    Polynomial {
        input_dim: usize,
        max_degree: u32,
        #[serde(default)]
        include_constant: bool,
    },
    ThinPlateRbf {
        input_dim: usize,
        centers: Vec<Vec<f64>>,
        scale: f64,
    },
    Neural {
        input_dim: usize,
        activation: Activation,
        weights: Vec<Vec<Vec<f64>>>,
        biases: Vec<Vec<f64>>,
        #[serde(default)]
        subtract_origin: bool,
    },
    MixedPolynomial {
        state_dim: usize,
        input_dim: usize,
        max_degree: u32,
    },
}

impl TryFrom<DictionarySpec> for Dictionary {
    type Error = DictionaryError;

    fn try_from(spec: DictionarySpec) -> Result<Self, DictionaryError> {
        let bad = |msg: &str| DictionaryError::InvalidSpec(msg.to_string());
        match spec {
            DictionarySpec::Identity { input_dim } => {
                if input_dim == 0 {
                    return Err(bad("input_dim must be positive"));
                }
                Ok(Dictionary::identity(input_dim))
            }
            DictionarySpec::Polynomial {
                input_dim,
                max_degree,
                include_constant,
            } => {
                if input_dim == 0 || max_degree == 0 {
                    return Err(bad("input_dim and max_degree must be positive"));
                }
                Ok(Dictionary::polynomial_opts(input_dim, max_degree, include_constant))
            }
            DictionarySpec::ThinPlateRbf {
                input_dim,
                centers,
                scale,
            } => {
                if centers.is_empty() || centers.iter().any(|c| c.len() != input_dim) {
                    return Err(bad("centers must be nonempty with length input_dim each"));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(bad("scale must be finite and positive"));
                }
                Ok(Dictionary::thin_plate_rbf(centers, scale))
            }
            DictionarySpec::Neural {
                input_dim,
                activation,
                weights,
                biases,
                subtract_origin,
            } => {
                if weights.is_empty() || weights.len() != biases.len() {
                    return Err(bad("weights and biases must be nonempty and aligned"));
                }
                let mut mats = Vec::with_capacity(weights.len());
                let mut fan_in = input_dim;
                for (w, b) in weights.iter().zip(&biases) {
                    let m = Matrix::from_rows(w)
                        .map_err(|e| DictionaryError::InvalidSpec(e.to_string()))?;
                    if m.cols() != fan_in || m.rows() != b.len() {
                        return Err(bad("layer dimensions do not chain"));
                    }
                    fan_in = m.rows();
                    mats.push(m);
                }
                Ok(Dictionary::Neural(NeuralDictionary {
                    params: NetworkParams {
                        weights: mats,
                        biases,
                        activation,
                    },
                    subtract_origin,
                }))
            }
            DictionarySpec::MixedPolynomial {
                state_dim,
                input_dim,
                max_degree,
            } => {
                if state_dim == 0 || input_dim == 0 || max_degree < 2 {
                    return Err(bad("mixed dictionary needs positive dims and degree >= 2"));
                }
                Ok(Dictionary::mixed_polynomial(state_dim, input_dim, max_degree))
            }
        }
    }
}

impl From<Dictionary> for DictionarySpec {
    fn from(d: Dictionary) -> DictionarySpec {
        match d {
            Dictionary::Identity { dim } => DictionarySpec::Identity { input_dim: dim },
            Dictionary::Polynomial(p) => DictionarySpec::Polynomial {
                input_dim: p.dim,
                max_degree: p.max_degree,
                include_constant: p.include_constant,
            },
            Dictionary::ThinPlateRbf(r) => DictionarySpec::ThinPlateRbf {
                input_dim: r.dim,
                centers: r.centers,
                scale: r.scale,
            },
            Dictionary::Neural(n) => DictionarySpec::Neural {
                input_dim: n.params.input_dim(),
                activation: n.params.activation,
                weights: n
                    .params
                    .weights
                    .iter()
                    .map(|w| (0..w.rows()).map(|i| w.row(i)).collect())
                    .collect(),
                biases: n.params.biases,
                subtract_origin: n.subtract_origin,
            },
            Dictionary::MixedPolynomial(m) => DictionarySpec::MixedPolynomial {
                state_dim: m.state_dim,
                input_dim: m.input_dim,
                max_degree: m.max_degree,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn binomial(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut acc = 1usize;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        acc
    }

    #[test]
    fn identity_lift_is_verbatim() {
        let d = Dictionary::identity(2);
        assert_eq!(d.lift(&[0.5, -0.1]).unwrap(), vec![0.5, -0.1]);
        assert_eq!(d.lifted_dim(), 2);
    }

    #[test]
    fn polynomial_monomial_order_is_graded_lex() {
        // n = 2, degree 2, v = (1, 2): features x1, x2, x1^2, x1 x2, x2^2.
        let d = Dictionary::polynomial(2, 2);
        assert_eq!(d.lift(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn polynomial_feature_count_matches_binomial() {
        for n in 1..5usize {
            for deg in 1..5u32 {
                let d = Dictionary::polynomial(n, deg);
                let expected = binomial(n + deg as usize, deg as usize) - 1;
                assert_eq!(d.lifted_dim(), expected, "n={n}, degree={deg}");
            }
        }
    }

    #[test]
    fn polynomial_constant_flag_appends_one() {
        let d = Dictionary::polynomial_opts(2, 2, true);
        let lifted = d.lift(&[1.0, 2.0]).unwrap();
        assert_eq!(lifted.last(), Some(&1.0));
        assert_eq!(lifted.len(), 6);
    }

    #[test]
    fn polynomial_jacobian_single_variable() {
        // Features (x, x^2) at x = 3: column (1, 6).
        let d = Dictionary::polynomial(1, 2);
        let jac = d.jacobian(&[3.0]).unwrap();
        assert_eq!((jac.rows(), jac.cols()), (2, 1));
        assert_eq!(jac.get(0, 0), 1.0);
        assert_eq!(jac.get(1, 0), 6.0);
    }

    #[test]
    fn neural_lift_matches_layer_by_layer_oracle() {
        // Straight-line forward pass written out with plain loops.
        let d = Dictionary::neural_state(2, 3, 2, Activation::Elu, 42);
        let nd = d.as_neural().unwrap();
        let v = [0.0, 0.0];
        let lifted = d.lift(&v).unwrap();
        assert_eq!(&lifted[..2], &v);

        let elu = |x: f64| if x > 0.0 { x } else { x.exp() - 1.0 };
        let w0 = &nd.params.weights[0];
        let b0 = &nd.params.biases[0];
        let mut h: Vec<f64> = (0..3)
            .map(|r| elu(w0.get(r, 0) * v[0] + w0.get(r, 1) * v[1] + b0[r]))
            .collect();
        let w1 = &nd.params.weights[1];
        let b1 = &nd.params.biases[1];
        h = (0..3)
            .map(|r| (0..3).map(|c| w1.get(r, c) * h[c]).sum::<f64>() + b1[r])
            .collect();
        for (a, b) in lifted[2..].iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn state_inclusive_for_every_state_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let kinds = vec![
            Dictionary::identity(3),
            Dictionary::polynomial(3, 3),
            Dictionary::thin_plate_from_states(&states, 5, 1.0, 1),
            Dictionary::neural_state(3, 6, 3, Activation::Elu, 2),
            Dictionary::neural_input(3, 6, 2, Activation::Tanh, 3),
        ];
        for d in &kinds {
            assert!(d.is_state_inclusive());
            assert!(d.lifted_dim() >= d.input_dim());
            for v in &states {
                let lifted = d.lift(v).unwrap();
                assert_eq!(&lifted[..3], v.as_slice());
            }
        }
    }

    #[test]
    fn neural_input_dictionary_vanishes_at_origin() {
        let d = Dictionary::neural_input(2, 5, 3, Activation::Elu, 11);
        let lifted = d.lift(&[0.0, 0.0]).unwrap();
        assert!(lifted.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mixed_polynomial_contains_only_cross_terms() {
        let d = Dictionary::mixed_polynomial(2, 1, 2);
        // Degree-2 mixed monomials over (x1, x2, w): x1 w, x2 w.
        assert_eq!(d.lifted_dim(), 2);
        assert!(!d.is_state_inclusive());
        // Vanishes when either block is zero.
        assert!(d.lift(&[1.0, 2.0, 0.0]).unwrap().iter().all(|&x| x == 0.0));
        assert!(d.lift(&[0.0, 0.0, 3.0]).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(d.lift(&[1.0, 2.0, 3.0]).unwrap(), vec![3.0, 6.0]);
    }

    #[test]
    fn jacobians_match_finite_differences_per_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let kinds = vec![
            Dictionary::identity(3),
            Dictionary::polynomial(3, 3),
            Dictionary::thin_plate_from_states(&states, 4, 1.3, 7),
            Dictionary::neural_state(3, 8, 3, Activation::Elu, 13),
            Dictionary::neural_input(3, 8, 2, Activation::Tanh, 17),
            Dictionary::mixed_polynomial(2, 1, 3),
        ];
        let h = 1e-5;
        for d in &kinds {
            for _ in 0..50 {
                let v: Vec<f64> = (0..d.input_dim())
                    .map(|_| rng.random_range(-1.5..1.5))
                    .collect();
                let jac = d.jacobian(&v).unwrap();
                for c in 0..d.input_dim() {
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[c] += h;
                    vm[c] -= h;
                    let fp = d.lift(&vp).unwrap();
                    let fm = d.lift(&vm).unwrap();
                    for r in 0..d.lifted_dim() {
                        let fd = (fp[r] - fm[r]) / (2.0 * h);
                        let an = jac.get(r, c);
                        let scale = an.abs().max(1e-2);
                        assert!(
                            (fd - an).abs() / scale < 1e-4,
                            "kind {d:?} entry ({r},{c}): fd {fd} vs {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_zero_upstream_is_zero() {
        let d = Dictionary::neural_state(2, 4, 2, Activation::Elu, 3);
        let grad = d
            .parameter_gradient(&[0.5, -0.2], &vec![0.0; d.lifted_dim()])
            .unwrap();
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn parameter_gradient_single_affine_layer() {
        // lift = (v, w v + b); <e_first_feature, lift> = w_1^T v + b_1, so
        // dW = e_1 v^T and db = e_1.
        let d = Dictionary::Neural(NeuralDictionary {
            params: NetworkParams {
                weights: vec![Matrix::zeros(2, 2)],
                biases: vec![vec![0.0, 0.0]],
                activation: Activation::Elu,
            },
            subtract_origin: false,
        });
        let v = [0.7, -0.3];
        let mut upstream = vec![0.0; d.lifted_dim()];
        upstream[2] = 1.0; // first network feature
        let grad = d.parameter_gradient(&v, &upstream).unwrap();
        assert_eq!(grad.weights[0].row(0), vec![0.7, -0.3]);
        assert_eq!(grad.weights[0].row(1), vec![0.0, 0.0]);
        assert_eq!(grad.biases[0], vec![1.0, 0.0]);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..4u64 {
            for subtract_origin in [false, true] {
                let mut d = Dictionary::Neural(NeuralDictionary {
                    params: NetworkParams::random(2, 4, 2, Activation::Elu, seed),
                    subtract_origin,
                });
                let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let upstream: Vec<f64> = (0..d.lifted_dim())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let grad = d.parameter_gradient(&v, &upstream).unwrap();

                let h = 1e-6;
                let value = |d: &Dictionary, v: &[f64], up: &[f64]| -> f64 {
                    d.lift(v).unwrap().iter().zip(up).map(|(a, b)| a * b).sum()
                };
                let layers = d.as_neural().unwrap().params.weights.len();
                for li in 0..layers {
                    let (rows, cols) = {
                        let w = &d.as_neural().unwrap().params.weights[li];
                        (w.rows(), w.cols())
                    };
                    for r in 0..rows {
                        for c in 0..cols {
                            let orig = d.as_neural().unwrap().params.weights[li].get(r, c);
                            d.as_neural_mut().unwrap().params.weights[li].set(r, c, orig + h);
                            let fp = value(&d, &v, &upstream);
                            d.as_neural_mut().unwrap().params.weights[li].set(r, c, orig - h);
                            let fm = value(&d, &v, &upstream);
                            d.as_neural_mut().unwrap().params.weights[li].set(r, c, orig);
                            let fd = (fp - fm) / (2.0 * h);
                            let an = grad.weights[li].get(r, c);
                            assert!(
                                (fd - an).abs() / an.abs().max(1e-2) < 1e-4,
                                "seed {seed} layer {li} W({r},{c}): fd {fd} vs {an}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lift_rejects_bad_inputs() {
        let d = Dictionary::polynomial(2, 2);
        assert!(matches!(
            d.lift(&[1.0]),
            Err(DictionaryError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            d.lift(&[1.0, f64::NAN]),
            Err(DictionaryError::NonFiniteInput)
        ));
        assert!(matches!(
            Dictionary::identity(2).parameter_gradient(&[1.0, 2.0], &[0.0, 0.0]),
            Err(DictionaryError::NotNeural)
        ));
    }

    #[test]
    fn spec_json_round_trip() {
        let states: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6]];
        let kinds = vec![
            Dictionary::identity(2),
            Dictionary::polynomial(2, 3),
            Dictionary::thin_plate_from_states(&states, 2, 0.8, 5),
            Dictionary::neural_state(2, 4, 3, Activation::Elu, 6),
            Dictionary::mixed_polynomial(2, 1, 2),
        ];
        for d in kinds {
            let text = serde_json::to_string(&d).unwrap();
            let back: Dictionary = serde_json::from_str(&text).unwrap();
            // Behavioral equality: same lift on a probe point.
            let v: Vec<f64> = (0..d.input_dim()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
            assert_eq!(d.lift(&v).unwrap(), back.lift(&v).unwrap());
            assert_eq!(d.lifted_dim(), back.lifted_dim());
        }
    }

    #[test]
    fn lift_is_deterministic() {
        let d = Dictionary::neural_state(2, 6, 3, Activation::Elu, 99);
        let v = [0.123456789, -0.987654321];
        let a = d.lift(&v).unwrap();
        let b = d.lift(&v).unwrap();
        assert_eq!(a, b);
    }
}
