//! Local-objective strategies: plain cross-entropy (fedavg), proximal
//! regularization (fedprox), and the fused-logits objective over the shared
//! model and the private weak learner (fedbalance).

use crate::data::AlphaWeights;
use crate::error::{Error, Result};
use crate::nn::{
    backward, forward, softmax, softmax_cross_entropy, Batch, ArchDescriptor, Mat, ModelParams,
};

/// Which local objective a run uses, with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    FedAvg,
    /// Cross-entropy plus `(mu/2) * ||local - global||^2`.
    FedProx { mu: f64 },
    /// Fused-logits objective; each client keeps a private weak learner of
    /// this architecture.
    FedBalance { weak_arch: ArchDescriptor },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::FedAvg => "fedavg",
            MethodSpec::FedProx { .. } => "fedprox",
            MethodSpec::FedBalance { .. } => "fedbalance",
        }
    }
}

/// Value and logit-space gradients of the fused objective.
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    pub dlogits_phi: Mat,
    pub dlogits_psi: Option<Mat>,
}

/// Per-class weighted fusion:
/// `out[b][c] = phi_logits[b][c] + alpha[c] * psi_logits[b][c]`.
pub fn fused_logits(phi_logits: &Mat, psi_logits: &Mat, alpha: &AlphaWeights) -> Result<Mat> {
    let (rows, cols) = (phi_logits.rows(), phi_logits.cols());
    if psi_logits.rows() != rows || psi_logits.cols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "fusing {}x{} with {}x{} logits",
            rows,
            cols,
            psi_logits.rows(),
            psi_logits.cols()
        )));
    }
    if alpha.len() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{} fusion weights for {cols} classes",
            alpha.len()
        )));
    }
    let a = alpha.values();
    let mut out = Mat::zeros(rows, cols);
    for r in 0..rows {
        let (phi_row, psi_row) = (phi_logits.row(r), psi_logits.row(r));
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = phi_row[c] + a[c] * psi_row[c];
        }
    }
    Ok(out)
}

/// Cross-entropy of the fused logits plus its gradients with respect to both
/// logit blocks; the weak learner's gradient is the fused gradient scaled by
/// `alpha` per class (exact chain rule, no stop-gradient).
pub fn fedbalance_loss(
    phi_logits: &Mat,
    psi_logits: &Mat,
    alpha: &AlphaWeights,
    labels: &[usize],
) -> Result<LossResult> {
    let fused = fused_logits(phi_logits, psi_logits, alpha)?;
    let (loss, dfused) = softmax_cross_entropy(&fused, labels)?;
    let a = alpha.values();
    let mut dpsi = Mat::zeros(dfused.rows(), dfused.cols());
    for r in 0..dfused.rows() {
        let src = dfused.row(r);
        for (c, d) in dpsi.row_mut(r).iter_mut().enumerate() {
            *d = a[c] * src[c];
        }
    }
    Ok(LossResult {
        loss,
        dlogits_phi: dfused,
        dlogits_psi: Some(dpsi),
    })
}

/// Proximal term `(mu/2) * ||local - global||^2` and its gradient
/// `mu * (local - global)` with respect to the local parameters.
pub fn fedprox_penalty(
    local: &ModelParams,
    global_snapshot: &ModelParams,
    mu: f64,
) -> Result<(f64, Vec<f64>)> {
    if local.arch() != global_snapshot.arch() {
        return Err(Error::ShapeMismatch(
            "proximal term needs local and global models of the same architecture".into(),
        ));
    }
    let mut penalty = 0.0;
    let grad: Vec<f64> = local
        .values()
        .iter()
        .zip(global_snapshot.values())
        .map(|(l, g)| {
            let diff = l - g;
            penalty += diff * diff;
            mu * diff
        })
        .collect();
    Ok((0.5 * mu * penalty, grad))
}

/// One loss evaluation on a batch: scalar loss plus parameter gradients for
/// the shared model and, under fedbalance, the private weak learner.
#[derive(Debug, Clone)]
pub struct LocalStep {
    pub loss: f64,
    pub phi_grad: Vec<f64>,
    pub psi_grad: Option<Vec<f64>>,
    /// Softmax of the shared model's logits and of the fused logits, for the
    /// local-vs-ensemble KL diagnostic. Present only under fedbalance.
    pub probs: Option<(Mat, Mat)>,
}

/// Dispatches the batch through the method's objective and backpropagates
/// each logit-space gradient through its own network.
pub fn local_loss_step(
    method: &MethodSpec,
    phi: &ModelParams,
    psi: Option<&ModelParams>,
    alpha: &AlphaWeights,
    global_snapshot: &ModelParams,
    batch: &Batch,
) -> Result<LocalStep> {
    let phi_fwd = forward(phi, batch)?;
    match method {
        MethodSpec::FedAvg => {
            let (loss, dlogits) = softmax_cross_entropy(&phi_fwd.logits, batch.labels())?;
            let phi_grad = backward(phi, &phi_fwd.tape, &dlogits)?;
            Ok(LocalStep {
                loss,
                phi_grad,
                psi_grad: None,
                probs: None,
            })
        }
        MethodSpec::FedProx { mu } => {
            let (ce, dlogits) = softmax_cross_entropy(&phi_fwd.logits, batch.labels())?;
            let mut phi_grad = backward(phi, &phi_fwd.tape, &dlogits)?;
            let (penalty, pgrad) = fedprox_penalty(phi, global_snapshot, *mu)?;
            for (g, p) in phi_grad.iter_mut().zip(&pgrad) {
                *g += p;
            }
            Ok(LocalStep {
                loss: ce + penalty,
                phi_grad,
                psi_grad: None,
                probs: None,
            })
        }
        MethodSpec::FedBalance { .. } => {
            let psi = psi.ok_or_else(|| {
                Error::InvalidArgument("fedbalance requires a private weak learner".into())
            })?;
            let psi_fwd = forward(psi, batch)?;
            let result =
                fedbalance_loss(&phi_fwd.logits, &psi_fwd.logits, alpha, batch.labels())?;
            let fused = fused_logits(&phi_fwd.logits, &psi_fwd.logits, alpha)?;
            let phi_grad = backward(phi, &phi_fwd.tape, &result.dlogits_phi)?;
            let dpsi = result.dlogits_psi.expect("fedbalance_loss sets psi gradient");
            let psi_grad = backward(psi, &psi_fwd.tape, &dpsi)?;
            Ok(LocalStep {
                loss: result.loss,
                phi_grad,
                psi_grad: Some(psi_grad),
                probs: Some((softmax(&phi_fwd.logits), softmax(&fused))),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, InputShape, LayerSpec};

    fn alpha(values: &[f64]) -> AlphaWeights {
        AlphaWeights::from_values(values.to_vec()).unwrap()
    }

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn fusion_with_zero_alpha_is_identity_on_phi() {
        let phi = mat(2, 3, &[1.0, -2.0, 0.5, 0.0, 4.0, -1.0]);
        let psi = mat(2, 3, &[9.0, 9.0, 9.0, -9.0, -9.0, -9.0]);
        let fused = fused_logits(&phi, &psi, &alpha(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(fused.data(), phi.data());
    }

    #[test]
    fn fusion_arithmetic() {
        let phi = mat(1, 2, &[2.0, 1.0]);
        let psi = mat(1, 2, &[1.0, 3.0]);
        let fused = fused_logits(&phi, &psi, &alpha(&[0.5, 0.5])).unwrap();
        assert_eq!(fused.data(), &[2.5, 2.5]);
    }

    #[test]
    fn onehot_alpha_shifts_only_that_class() {
        let phi = mat(1, 3, &[1.0, 2.0, 3.0]);
        let psi = mat(1, 3, &[5.0, 5.0, 5.0]);
        let fused = fused_logits(&phi, &psi, &alpha(&[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(fused.data(), &[1.0, 7.0, 3.0]);
    }

    #[test]
    fn fusion_rejects_shape_mismatch() {
        let phi = mat(1, 3, &[1.0, 2.0, 3.0]);
        let psi = mat(1, 2, &[5.0, 5.0]);
        assert!(fused_logits(&phi, &psi, &alpha(&[0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn fedbalance_loss_with_zero_alpha_reduces_to_cross_entropy() {
        let phi = mat(2, 3, &[0.2, -1.0, 0.7, 2.0, 0.1, -0.4]);
        let psi = mat(2, 3, &[3.0, -2.0, 1.0, 0.5, 0.5, 0.5]);
        let labels = [2, 0];
        let res = fedbalance_loss(&phi, &psi, &alpha(&[0.0; 3]), &labels).unwrap();
        let (ce, dce) = softmax_cross_entropy(&phi, &labels).unwrap();
        assert_eq!(res.loss, ce);
        assert_eq!(res.dlogits_phi.data(), dce.data());
        assert!(res
            .dlogits_psi
            .unwrap()
            .data()
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn fedbalance_loss_uniform_alpha_closed_form() {
        let phi = mat(1, 2, &[0.0, 0.0]);
        let psi = mat(1, 2, &[0.0, 0.0]);
        let res = fedbalance_loss(&phi, &psi, &alpha(&[1.0, 1.0]), &[0]).unwrap();
        assert!((res.loss - 2.0_f64.ln()).abs() < 1e-12);
        let dphi = res.dlogits_phi;
        let dpsi = res.dlogits_psi.unwrap();
        for d in [&dphi, &dpsi] {
            assert!((d.data()[0] + 0.5).abs() < 1e-12);
            assert!((d.data()[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fedbalance_loss_gradients_match_finite_differences_on_logits() {
        let a = alpha(&[0.6, 0.1, 0.3]);
        let phi0 = mat(2, 3, &[0.3, -0.8, 1.2, 0.0, 0.4, -0.2]);
        let psi0 = mat(2, 3, &[1.0, 0.2, -0.5, -1.5, 0.7, 0.3]);
        let labels = [1, 2];
        let res = fedbalance_loss(&phi0, &psi0, &a, &labels).unwrap();
        let eps = 1e-5;
        let loss_at = |phi: &Mat, psi: &Mat| {
            fedbalance_loss(phi, psi, &a, &labels).unwrap().loss
        };
        for (which, analytic) in [
            (0, res.dlogits_phi.clone()),
            (1, res.dlogits_psi.clone().unwrap()),
        ] {
            for r in 0..2 {
                for c in 0..3 {
                    let mut phi = phi0.clone();
                    let mut psi = psi0.clone();
                    let bump = |phi: &mut Mat, psi: &mut Mat, delta: f64| {
                        let target = if which == 0 { phi } else { psi };
                        target.row_mut(r)[c] += delta;
                    };
                    bump(&mut phi, &mut psi, eps);
                    let plus = loss_at(&phi, &psi);
                    bump(&mut phi, &mut psi, -2.0 * eps);
                    let minus = loss_at(&phi, &psi);
                    let fd = (plus - minus) / (2.0 * eps);
                    let a_val = analytic.row(r)[c];
                    let denom = a_val.abs().max(fd.abs()).max(1e-10);
                    assert!(
                        (a_val - fd).abs() / denom < 1e-6,
                        "block {which} [{r}][{c}]: {a_val} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn psi_gradient_never_exceeds_phi_gradient() {
        let a = alpha(&[0.9, 0.05, 0.05]);
        let phi = mat(1, 3, &[2.0, -1.0, 0.3]);
        let psi = mat(1, 3, &[4.0, 0.0, -2.0]);
        let res = fedbalance_loss(&phi, &psi, &a, &[1]).unwrap();
        let dpsi = res.dlogits_psi.unwrap();
        for (dp, df) in dpsi.data().iter().zip(res.dlogits_phi.data()) {
            assert!(dp.abs() <= df.abs() + 1e-15);
        }
    }

    #[test]
    fn minority_class_penalty_grows_when_psi_starves_true_class() {
        // True class 0 is a local minority (alpha[0] = 0); psi boosts the
        // majority class logit, so the fused true-class probability drops and
        // the magnitude of the true-class gradient exceeds plain CE.
        let a = alpha(&[0.0, 0.7, 0.3]);
        let phi = mat(1, 3, &[1.0, 2.0, 0.5]);
        let psi = mat(1, 3, &[-1.0, 3.0, 1.0]);
        let res = fedbalance_loss(&phi, &psi, &a, &[0]).unwrap();
        let (_, dce) = softmax_cross_entropy(&phi, &[0]).unwrap();
        assert!(res.dlogits_phi.data()[0].abs() > dce.data()[0].abs());
    }

    #[test]
    fn fused_argmax_follows_phi_when_psi_contribution_is_negligible() {
        let a = alpha(&[1e-12, 1e-12, 1.0 - 2e-12]);
        let phi = mat(1, 3, &[3.0, 1.0, -5.0]);
        let psi = mat(1, 3, &[-100.0, 100.0, 0.0]);
        let fused = fused_logits(&phi, &psi, &a).unwrap();
        let argmax = |row: &[f64]| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| {
                    if v > b.1 {
                        (i, v)
                    } else {
                        b
                    }
                })
                .0
        };
        assert_eq!(argmax(fused.row(0)), argmax(phi.row(0)));
    }

    #[test]
    fn fedprox_penalty_fixed_point_and_arithmetic() {
        let arch = ArchDescriptor::new(
            vec![LayerSpec::dense(1, 1)],
            InputShape::Flat { features: 1 },
            1,
        )
        .unwrap();
        let local = ModelParams::from_values(arch.clone(), vec![2.0, 0.0]).unwrap();
        let global = ModelParams::from_values(arch.clone(), vec![0.0, 0.0]).unwrap();

        let (pen, grad) = fedprox_penalty(&local, &local.clone(), 0.5).unwrap();
        assert_eq!(pen, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));

        let (pen, grad) = fedprox_penalty(&local, &global, 0.5).unwrap();
        assert!((pen - 1.0).abs() < 1e-15);
        assert!((grad[0] - 1.0).abs() < 1e-15);

        let (pen, grad) = fedprox_penalty(&local, &global, 0.0).unwrap();
        assert_eq!(pen, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    fn tiny_arch(features: usize, classes: usize) -> ArchDescriptor {
        ArchDescriptor::new(
            vec![
                LayerSpec::dense(features, 5),
                LayerSpec::Relu,
                LayerSpec::dense(5, classes),
            ],
            InputShape::Flat { features },
            classes,
        )
        .unwrap()
    }

    fn tiny_batch(features: usize, classes: usize, n: usize, seed: u64) -> Batch {
        use rand::RngExt;
        let mut rng = crate::seed::stream(seed, "methods-batch", 0);
        let inputs = (0..n * features).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(inputs, InputShape::Flat { features }, labels).unwrap()
    }

    #[test]
    fn fedavg_step_equals_cross_entropy_composition() {
        let arch = tiny_arch(4, 3);
        let phi = init_model(&arch, 2);
        let batch = tiny_batch(4, 3, 1, 3);
        let step = local_loss_step(
            &MethodSpec::FedAvg,
            &phi,
            None,
            &alpha(&[1.0 / 3.0; 3]),
            &phi.clone(),
            &batch,
        )
        .unwrap();
        let fwd = forward(&phi, &batch).unwrap();
        let (loss, dl) = softmax_cross_entropy(&fwd.logits, batch.labels()).unwrap();
        let grad = backward(&phi, &fwd.tape, &dl).unwrap();
        assert_eq!(step.loss, loss);
        assert_eq!(step.phi_grad, grad);
        assert!(step.psi_grad.is_none());
    }

    #[test]
    fn zero_psi_parameters_reduce_fedbalance_to_fedavg_gradient() {
        let arch = tiny_arch(4, 3);
        let weak_arch = tiny_arch(4, 3);
        let phi = init_model(&arch, 2);
        let psi = ModelParams::from_values(weak_arch.clone(), vec![0.0; weak_arch.param_count()])
            .unwrap();
        let batch = tiny_batch(4, 3, 2, 5);
        let a = alpha(&[0.5, 0.25, 0.25]);
        let bal = local_loss_step(
            &MethodSpec::FedBalance { weak_arch },
            &phi,
            Some(&psi),
            &a,
            &phi.clone(),
            &batch,
        )
        .unwrap();
        let avg = local_loss_step(
            &MethodSpec::FedAvg,
            &phi,
            None,
            &a,
            &phi.clone(),
            &batch,
        )
        .unwrap();
        assert_eq!(bal.loss, avg.loss);
        assert_eq!(bal.phi_grad, avg.phi_grad);
    }

    #[test]
    fn fedbalance_pipeline_matches_finite_differences_over_both_models() {
        let arch = tiny_arch(3, 2);
        let weak = ArchDescriptor::new(
            vec![LayerSpec::dense(3, 2)],
            InputShape::Flat { features: 3 },
            2,
        )
        .unwrap();
        let mut phi = init_model(&arch, 7);
        let mut psi = init_model(&weak, 8);
        let batch = tiny_batch(3, 2, 3, 9);
        let a = alpha(&[0.7, 0.3]);
        let method = MethodSpec::FedBalance {
            weak_arch: weak.clone(),
        };
        let step =
            local_loss_step(&method, &phi, Some(&psi), &a, &phi.clone(), &batch).unwrap();
        let psi_grad = step.psi_grad.clone().unwrap();

        let eps = 1e-4;
        #[allow(clippy::needless_range_loop)]
        let mut check = |which: usize, grad: &[f64]| {
            let count = if which == 0 {
                arch.param_count()
            } else {
                weak.param_count()
            };
            for p in 0..count {
                let get = |phi: &ModelParams, psi: &ModelParams| {
                    local_loss_step(&method, phi, Some(psi), &a, &phi.clone(), &batch)
                        .unwrap()
                        .loss
                };
                let orig = if which == 0 {
                    phi.values()[p]
                } else {
                    psi.values()[p]
                };
                let slot = |phi: &mut ModelParams, psi: &mut ModelParams, v: f64| {
                    if which == 0 {
                        phi.values_mut()[p] = v;
                    } else {
                        psi.values_mut()[p] = v;
                    }
                };
                slot(&mut phi, &mut psi, orig + eps);
                let plus = get(&phi, &psi);
                slot(&mut phi, &mut psi, orig - eps);
                let minus = get(&phi, &psi);
                slot(&mut phi, &mut psi, orig);
                let fd = (plus - minus) / (2.0 * eps);
                let denom = grad[p].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[p] - fd).abs() / denom < 1e-3,
                    "block {which} param {p}: {} vs {fd}",
                    grad[p]
                );
            }
        };
        check(0, &step.phi_grad.clone());
        check(1, &psi_grad);
    }
}
