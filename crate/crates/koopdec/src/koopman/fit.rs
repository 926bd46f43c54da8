//! Closed-form EDMD fitting and gradient-trained deep DMD.

use super::{
    state_selector, FitReport, KoopmanError, KoopmanModel, Scaling, Snapshot, TrajectoryDataset,
};
use crate::dictionary::{Adam, Dictionary, NetworkGradient};
use crate::koopman::EpochLog;
use crate::numerics::{solve_least_squares, Matrix};
use crate::util::vec_norm;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hyperparameters for [`fit_deep`].
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepHyperParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ridge: f64,
    pub seed: u64,
    /// Multiplier applied to the learning rate ten times over the run
    /// (1.0 disables the schedule).
    pub lr_decay: f64,
}

impl Default for DeepHyperParams {
    fn default() -> Self {
        DeepHyperParams {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            ridge: 1e-8,
            seed: 0,
            lr_decay: 1.0,
        }
    }
}

struct LiftedData {
    targets: Matrix,    // n_L x N, psi_x(x_next)
    regressors: Matrix, // (n_L + m_L + c_L) x N
}

fn lift_split(
    snapshots: &[&Snapshot],
    scaling: &Scaling,
    state_dict: &Dictionary,
    input_dict: &Dictionary,
    cross_dict: Option<&Dictionary>,
) -> Result<LiftedData, KoopmanError> {
    let mut target_cols = Vec::with_capacity(snapshots.len());
    let mut regressor_cols = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let x = scaling.normalize_state(&s.x);
        let w = scaling.normalize_input(&s.w);
        let x_next = scaling.normalize_state(&s.x_next);
        target_cols.push(state_dict.lift(&x_next)?);
        let mut col = state_dict.lift(&x)?;
        col.extend(input_dict.lift(&w)?);
        if let Some(cross) = cross_dict {
            let mut xw = x.clone();
            xw.extend_from_slice(&w);
            col.extend(cross.lift(&xw)?);
        }
        regressor_cols.push(col);
    }
    Ok(LiftedData {
        targets: Matrix::from_columns(&target_cols)?,
        regressors: Matrix::from_columns(&regressor_cols)?,
    })
}

/// Mean one-step relative errors over the given snapshots:
/// `(lifted, state read-out)`.
fn one_step_errors(
    snapshots: &[&Snapshot],
    scaling: &Scaling,
    state_dict: &Dictionary,
    input_dict: &Dictionary,
    cross_dict: Option<&Dictionary>,
    k_x: &Matrix,
    k_u: &Matrix,
    k_xw: Option<&Matrix>,
) -> Result<(f64, f64), KoopmanError> {
    if snapshots.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let n = state_dict.input_dim();
    let mut lifted_acc = 0.0;
    let mut state_acc = 0.0;
    for s in snapshots {
        let x = scaling.normalize_state(&s.x);
        let w = scaling.normalize_input(&s.w);
        let x_next = scaling.normalize_state(&s.x_next);
        let target = state_dict.lift(&x_next)?;
        let mut pred = k_x.mul_vec(&state_dict.lift(&x)?);
        let ku_w = k_u.mul_vec(&input_dict.lift(&w)?);
        for (a, b) in pred.iter_mut().zip(&ku_w) {
            *a += b;
        }
        if let (Some(cross), Some(k_xw)) = (cross_dict, k_xw) {
            let mut xw = x.clone();
            xw.extend_from_slice(&w);
            let kc = k_xw.mul_vec(&cross.lift(&xw)?);
            for (a, b) in pred.iter_mut().zip(&kc) {
                *a += b;
            }
        }
        let diff: Vec<f64> = target.iter().zip(&pred).map(|(a, b)| a - b).collect();
        lifted_acc += vec_norm(&diff) / vec_norm(&target).max(1e-12);

        let state_pred = scaling.denormalize_state(&pred[..n]);
        let state_diff: Vec<f64> = s.x_next.iter().zip(&state_pred).map(|(a, b)| a - b).collect();
        state_acc += vec_norm(&state_diff) / vec_norm(&s.x_next).max(1e-12);
    }
    let count = snapshots.len() as f64;
    Ok((lifted_acc / count, state_acc / count))
}

/// Fit `(K_x, K_u, K_xw)` by one least-squares solve over the training split
/// of `data`, stacking lifted regressors `[psi_x; psi_u; psi_xw]` against
/// lifted targets `psi_x(x_next)`.
pub fn fit_edmd(
    data: &TrajectoryDataset,
    state_dict: Dictionary,
    input_dict: Dictionary,
    cross_dict: Option<Dictionary>,
    ridge: f64,
) -> Result<KoopmanModel, KoopmanError> {
    validate_dictionaries(data, &state_dict, &input_dict, cross_dict.as_ref())?;
    let n_l = state_dict.lifted_dim();
    let m_l = input_dict.lifted_dim();
    let c_l = cross_dict.as_ref().map_or(0, |d| d.lifted_dim());
    let train: Vec<&Snapshot> = data.train_snapshots().collect();
    if train.len() < n_l + m_l + c_l {
        return Err(KoopmanError::InsufficientSnapshots {
            needed: n_l + m_l + c_l,
            got: train.len(),
        });
    }

    let lifted = lift_split(&train, &data.scaling, &state_dict, &input_dict, cross_dict.as_ref())?;
    let solve = solve_least_squares(&lifted.targets, &lifted.regressors, ridge)?;
    let k = solve.solution;
    let k_x = k.block(0, 0, n_l, n_l);
    let k_u = k.block(0, n_l, n_l, m_l);
    let k_xw = cross_dict.as_ref().map(|_| k.block(0, n_l + m_l, n_l, c_l));

    let mut report = FitReport::new("edmd", ridge);
    report.rank_deficient = solve.rank_deficient;
    if solve.rank_deficient {
        report
            .notes
            .push("rank-deficient regressors; supply ridge or accept minimum-norm solution".into());
    }
    let (lifted_train, state_train) = one_step_errors(
        &train,
        &data.scaling,
        &state_dict,
        &input_dict,
        cross_dict.as_ref(),
        &k_x,
        &k_u,
        k_xw.as_ref(),
    )?;
    report.lifted_train_error = lifted_train;
    report.state_train_error = state_train;
    let test: Vec<&Snapshot> = data.test_snapshots().collect();
    if !test.is_empty() {
        let (lifted_test, state_test) = one_step_errors(
            &test,
            &data.scaling,
            &state_dict,
            &input_dict,
            cross_dict.as_ref(),
            &k_x,
            &k_u,
            k_xw.as_ref(),
        )?;
        report.lifted_test_error = Some(lifted_test);
        report.state_test_error = Some(state_test);
    }

    let n = state_dict.input_dim();
    Ok(KoopmanModel {
        w_h: state_selector(n, n_l),
        state_dict,
        input_dict,
        cross_dict,
        k_x,
        k_u,
        k_xw,
        scaling: data.scaling.clone(),
        report,
    })
}

fn validate_dictionaries(
    data: &TrajectoryDataset,
    state_dict: &Dictionary,
    input_dict: &Dictionary,
    cross_dict: Option<&Dictionary>,
) -> Result<(), KoopmanError> {
    if state_dict.input_dim() != data.state_dim() {
        return Err(KoopmanError::DimensionMismatch(format!(
            "state dictionary expects dimension {}, data has {}",
            state_dict.input_dim(),
            data.state_dim()
        )));
    }
    if input_dict.input_dim() != data.input_dim() {
        return Err(KoopmanError::DimensionMismatch(format!(
            "input dictionary expects dimension {}, data has {}",
            input_dict.input_dim(),
            data.input_dim()
        )));
    }
    if !state_dict.is_state_inclusive() || !input_dict.is_state_inclusive() {
        return Err(KoopmanError::DimensionMismatch(
            "state and input dictionaries must be state inclusive".into(),
        ));
    }
    if let Some(cross) = cross_dict {
        if cross.input_dim() != data.state_dim() + data.input_dim() {
            return Err(KoopmanError::DimensionMismatch(format!(
                "cross dictionary expects dimension {}, data has {}",
                cross.input_dim(),
                data.state_dim() + data.input_dim()
            )));
        }
    }
    Ok(())
}

/// Least-squares output map `W_h` for recorded outputs `y_t` aligned with the
/// dataset snapshots; fitted on the training split.
pub fn fit_output_map(
    data: &TrajectoryDataset,
    model: &KoopmanModel,
    outputs: &[Vec<f64>],
) -> Result<Matrix, KoopmanError> {
    if outputs.len() != data.snapshots.len() {
        return Err(KoopmanError::MisalignedOutputs {
            expected: data.snapshots.len(),
            got: outputs.len(),
        });
    }
    let mut target_cols = Vec::new();
    let mut regressor_cols = Vec::new();
    for &i in &data.train_indices {
        let x = data.scaling.normalize_state(&data.snapshots[i].x);
        regressor_cols.push(model.state_dict.lift(&x)?);
        target_cols.push(outputs[i].clone());
    }
    let targets = Matrix::from_columns(&target_cols)?;
    let regressors = Matrix::from_columns(&regressor_cols)?;
    let solve = solve_least_squares(&targets, &regressors, 0.0)?;
    Ok(solve.solution)
}

/// Jointly optimize the neural dictionaries and the Koopman matrices by
/// mini-batch Adam on the dictionary parameters with a closed-form
/// least-squares refresh of `(K_x, K_u)` after every epoch. Returns the
/// best-test-loss iterate; the per-epoch log is kept in the fit report.
pub fn fit_deep(
    data: &TrajectoryDataset,
    state_dict: Dictionary,
    input_dict: Dictionary,
    hyper: &DeepHyperParams,
) -> Result<KoopmanModel, KoopmanError> {
    validate_dictionaries(data, &state_dict, &input_dict, None)?;
    if state_dict.as_neural().is_none() || input_dict.as_neural().is_none() {
        return Err(KoopmanError::NotNeural);
    }
    let train: Vec<&Snapshot> = data.train_snapshots().collect();
    if train.is_empty() {
        return Err(KoopmanError::EmptyDataset);
    }
    let test: Vec<&Snapshot> = data.test_snapshots().collect();
    let n_l = state_dict.lifted_dim();
    let m_l = input_dict.lifted_dim();
    let scaling = &data.scaling;

    let mut sd = state_dict;
    let mut id = input_dict;

    let solve_k = |sd: &Dictionary, id: &Dictionary| -> Result<(Matrix, Matrix, bool), KoopmanError> {
        let lifted = lift_split(&train, scaling, sd, id, None)?;
        let solve = solve_least_squares(&lifted.targets, &lifted.regressors, hyper.ridge)?;
        Ok((
            solve.solution.block(0, 0, n_l, n_l),
            solve.solution.block(0, n_l, n_l, m_l),
            solve.rank_deficient,
        ))
    };

    let mse = |sd: &Dictionary,
               id: &Dictionary,
               k_x: &Matrix,
               k_u: &Matrix,
               snaps: &[&Snapshot]|
     -> Result<f64, KoopmanError> {
        if snaps.is_empty() {
            return Ok(f64::NAN);
        }
        let mut acc = 0.0;
        for s in snaps {
            let x = scaling.normalize_state(&s.x);
            let w = scaling.normalize_input(&s.w);
            let x_next = scaling.normalize_state(&s.x_next);
            let target = sd.lift(&x_next)?;
            let mut pred = k_x.mul_vec(&sd.lift(&x)?);
            for (a, b) in pred.iter_mut().zip(k_u.mul_vec(&id.lift(&w)?)) {
                *a += b;
            }
            acc += target
                .iter()
                .zip(&pred)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(acc / snaps.len() as f64)
    };

    let (mut k_x, mut k_u, mut rank_deficient) = solve_k(&sd, &id)?;
    let mut log = Vec::with_capacity(hyper.epochs + 1);
    let mut train_loss = mse(&sd, &id, &k_x, &k_u, &train)?;
    let mut test_loss = mse(&sd, &id, &k_x, &k_u, &test)?;
    log.push(EpochLog {
        epoch: 0,
        train_loss,
        test_loss,
    });

    // Best iterate by test loss; falls back to train loss without a test split.
    let selector = |train_loss: f64, test_loss: f64| {
        if test_loss.is_nan() {
            train_loss
        } else {
            test_loss
        }
    };
    let mut best = (sd.clone(), id.clone(), k_x.clone(), k_u.clone());
    let mut best_metric = selector(train_loss, test_loss);
    let mut diverged = false;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam_x = Adam::new(&sd.as_neural().unwrap().params);
    let mut adam_u = Adam::new(&id.as_neural().unwrap().params);
    let batch_size = hyper.batch_size.max(1);
    let decay_every = (hyper.epochs / 10).max(1);
    let mut lr = hyper.learning_rate;

    'epochs: for epoch in 1..=hyper.epochs {
        if epoch > 1 && (epoch - 1) % decay_every == 0 {
            lr *= hyper.lr_decay;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let mut grad_x = NetworkGradient::zeros_like(&sd.as_neural().unwrap().params);
            let mut grad_u = NetworkGradient::zeros_like(&id.as_neural().unwrap().params);
            for &bi in batch {
                let s = train[bi];
                let x = scaling.normalize_state(&s.x);
                let w = scaling.normalize_input(&s.w);
                let x_next = scaling.normalize_state(&s.x_next);
                let target = sd.lift(&x_next)?;
                let mut pred = k_x.mul_vec(&sd.lift(&x)?);
                for (a, b) in pred.iter_mut().zip(k_u.mul_vec(&id.lift(&w)?)) {
                    *a += b;
                }
                let residual: Vec<f64> =
                    target.iter().zip(&pred).map(|(a, b)| a - b).collect();
                if !residual.iter().all(|v| v.is_finite()) {
                    diverged = true;
                    break 'epochs;
                }
                // d||r||^2 with r = psi(x') - K_x psi(x) - K_u psi(w):
                let up_next: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
                let up_x: Vec<f64> = k_x
                    .transpose()
                    .mul_vec(&residual)
                    .iter()
                    .map(|v| -2.0 * v)
                    .collect();
                let up_w: Vec<f64> = k_u
                    .transpose()
                    .mul_vec(&residual)
                    .iter()
                    .map(|v| -2.0 * v)
                    .collect();
                grad_x.add_assign(&sd.parameter_gradient(&x_next, &up_next)?);
                grad_x.add_assign(&sd.parameter_gradient(&x, &up_x)?);
                grad_u.add_assign(&id.parameter_gradient(&w, &up_w)?);
            }
            let inv = 1.0 / batch.len() as f64;
            grad_x.scale(inv);
            grad_u.scale(inv);
            adam_x.step(
                &mut sd.as_neural_mut().unwrap().params,
                &grad_x,
                lr,
            );
            adam_u.step(
                &mut id.as_neural_mut().unwrap().params,
                &grad_u,
                lr,
            );
        }

        // Alternating refresh: the objective is linear least squares in the
        // Koopman matrices for fixed dictionaries.
        let refreshed = solve_k(&sd, &id)?;
        (k_x, k_u, rank_deficient) = refreshed;
        train_loss = mse(&sd, &id, &k_x, &k_u, &train)?;
        test_loss = mse(&sd, &id, &k_x, &k_u, &test)?;
        if !train_loss.is_finite() {
            diverged = true;
            break;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            test_loss,
        });
        let metric = selector(train_loss, test_loss);
        if metric < best_metric {
            best_metric = metric;
            best = (sd.clone(), id.clone(), k_x.clone(), k_u.clone());
        }
    }

    let (sd, id, k_x, k_u) = best;
    let mut report = FitReport::new("deep", hyper.ridge);
    report.training_log = log;
    report.diverged = diverged;
    report.rank_deficient = rank_deficient;
    if diverged {
        report
            .notes
            .push("training loss became non-finite; returned the last finite iterate".into());
    }
    let (lifted_train, state_train) =
        one_step_errors(&train, scaling, &sd, &id, None, &k_x, &k_u, None)?;
    report.lifted_train_error = lifted_train;
    report.state_train_error = state_train;
    if !test.is_empty() {
        let (lifted_test, state_test) =
            one_step_errors(&test, scaling, &sd, &id, None, &k_x, &k_u, None)?;
        report.lifted_test_error = Some(lifted_test);
        report.state_test_error = Some(state_test);
    }

    let n = sd.input_dim();
    Ok(KoopmanModel {
        w_h: state_selector(n, n_l),
        state_dict: sd,
        input_dict: id,
        cross_dict: None,
        k_x,
        k_u,
        k_xw: None,
        scaling: data.scaling.clone(),
        report,
    })
}
