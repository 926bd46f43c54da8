//! Random stable LTI systems; the oracle factory for the Gramian-equivalence
//! tests.

use crate::koopman::Trajectory;
use crate::numerics::{spectral_radius, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Discrete-time `x' = A x + B w`, `y = C x`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl LtiSystem {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn step(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut next = self.a.mul_vec(x);
        for (a, b) in next.iter_mut().zip(self.b.mul_vec(w)) {
            *a += b;
        }
        next
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.c.mul_vec(x)
    }

    pub fn simulate(&self, x0: &[f64], inputs: &[Vec<f64>]) -> Trajectory {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut x = x0.to_vec();
        states.push(x.clone());
        for w in inputs {
            x = self.step(&x, w);
            states.push(x.clone());
        }
        let mut padded = inputs.to_vec();
        padded.push(vec![0.0; self.input_dim()]);
        Trajectory {
            states,
            inputs: padded,
        }
    }
}

/// Standard-normal `(A, B, C)` with `A` rescaled so its spectral radius hits
/// `rho_target`. Deterministic per seed.
pub fn random_stable_lti(n: usize, m: usize, p: usize, rho_target: f64, seed: u64) -> LtiSystem {
    assert!(rho_target > 0.0 && rho_target < 1.0, "rho_target must lie in (0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let a_raw = Matrix::from_fn(n, n, |_, _| normal.sample(&mut rng));
        let rho = spectral_radius(&a_raw).expect("square matrix");
        if rho < 1e-8 {
            continue; // essentially nilpotent draw; rescaling would misbehave
        }
        let a = a_raw.scale(rho_target / rho);
        let b = Matrix::from_fn(n, m, |_, _| normal.sample(&mut rng));
        let c = Matrix::from_fn(p, n, |_, _| normal.sample(&mut rng));
        return LtiSystem { a, b, c };
    }
}
