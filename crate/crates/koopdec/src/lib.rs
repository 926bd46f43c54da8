//! Input-Koopman model learning and Gramian-based decomposition of nonlinear
//! control systems.
//!
//! The toolkit fits affine Koopman control models
//! `psi_x(x_{t+1}) = K_x psi_x(x_t) + K_u psi_u(w_t)` from snapshot data with
//! fixed or trainable observable dictionaries, computes the lifted
//! controllability/observability Gramians, scores state subsets by relative
//! internal observability and disturbance sensitivity, and splits the state
//! set into `k` balanced clusters with a heap-merge multi-way partitioning
//! heuristic (plus an exhaustive oracle for small instances).

pub mod dictionary;
pub mod gramians;
pub mod koopman;
pub mod numerics;
pub mod partition;
pub mod pipeline;
pub mod systems;
pub mod verify;

pub(crate) mod util;
