//! Training objectives: least-squares adversarial terms, expectation-based
//! age loss against a frozen estimator, and the mixed identity-consistency
//! loss (pixel + SSIM + frozen-feature terms).

pub mod ssim;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::estimator::{dex_expected_age, softmax_rows, AgeEstimator};
use crate::nets::features::FeatureNet;
use crate::scalar::{sc, Scalar};
pub use ssim::{ssim as ssim_value, ssim_with_grad, SsimSettings};

/// Loss mixing weights. Defaults follow the training recipe: adversarial
/// 100, age 0.4, identity 0.02, with the identity mix split 0.15 SSIM /
/// 0.025 feature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_age: f64,
    pub lambda_ide: f64,
    pub alpha_ssim: f64,
    pub alpha_fea: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 100.0,
            lambda_age: 0.4,
            lambda_ide: 0.02,
            alpha_ssim: 0.15,
            alpha_fea: 0.025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_adv,
            self.lambda_age,
            self.lambda_ide,
            self.alpha_ssim,
            self.alpha_fea,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.alpha_ssim > 1.0 {
            return Err(Error::Config("alpha_ssim must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Named scalar summary of one training step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub adv: f64,
    pub age: f64,
    pub pixel: f64,
    pub ssim: f64,
    pub feature: f64,
    pub ide: f64,
    pub total: f64,
    pub d_loss: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.adv,
            self.age,
            self.pixel,
            self.ssim,
            self.feature,
            self.ide,
            self.total,
            self.d_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Generator adversarial loss: `0.5 * mean((s - 1)^2)` over all patch scores.
pub fn adv_loss_g<S: Scalar>(scores_fake: &Array4<S>) -> S {
    let half = sc::<S>(0.5);
    let n = sc::<S>(scores_fake.len() as f64);
    let sum = scores_fake
        .iter()
        .map(|&s| (s - S::one()) * (s - S::one()))
        .sum::<S>();
    half * sum / n
}

/// Value plus gradient with respect to the fake scores.
pub fn adv_loss_g_grad<S: Scalar>(scores_fake: &Array4<S>) -> (S, Array4<S>) {
    let n = sc::<S>(scores_fake.len() as f64);
    let grad = scores_fake.mapv(|s| (s - S::one()) / n);
    (adv_loss_g(scores_fake), grad)
}

/// Discriminator loss: `0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)`,
/// the first term over real faces of all groups, the second over fakes.
pub fn adv_loss_d<S: Scalar>(scores_real: &Array4<S>, scores_fake: &Array4<S>) -> S {
    let half = sc::<S>(0.5);
    let nr = sc::<S>(scores_real.len() as f64);
    let nf = sc::<S>(scores_fake.len() as f64);
    let real_term = scores_real
        .iter()
        .map(|&s| (s - S::one()) * (s - S::one()))
        .sum::<S>()
        / nr;
    let fake_term = scores_fake.iter().map(|&s| s * s).sum::<S>() / nf;
    half * (real_term + fake_term)
}

/// Value plus gradients for both score maps.
pub fn adv_loss_d_grad<S: Scalar>(
    scores_real: &Array4<S>,
    scores_fake: &Array4<S>,
) -> (S, Array4<S>, Array4<S>) {
    let nr = sc::<S>(scores_real.len() as f64);
    let nf = sc::<S>(scores_fake.len() as f64);
    let d_real = scores_real.mapv(|s| (s - S::one()) / nr);
    let d_fake = scores_fake.mapv(|s| s / nf);
    (adv_loss_d(scores_real, scores_fake), d_real, d_fake)
}

/// Reduction of the age regression term. `MeanAbs` (default) takes the
/// per-sample absolute error averaged over the batch; `BatchL2` the 2-norm
/// of the batch error vector. The two coincide for single samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeReduction {
    MeanAbs,
    BatchL2,
}

impl Default for AgeReduction {
    fn default() -> Self {
        AgeReduction::MeanAbs
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AgeLossParts<S> {
    pub regression: S,
    pub classification: S,
    pub total: S,
}

fn group_targets_valid(groups: &[usize], n: usize) -> Result<()> {
    for &g in groups {
        if g < 1 || g > n {
            return Err(Error::invalid(format!(
                "target group {g} out of range 1..={n}"
            )));
        }
    }
    Ok(())
}

/// Age estimation loss: regression between target and expected age plus
/// cross-entropy of the group logits against the target group. The
/// estimator is run frozen (eval-mode statistics, no parameter gradients).
pub fn age_loss<S: Scalar>(
    est: &mut AgeEstimator<S>,
    x: &Array4<S>,
    target_ages: &Array1<S>,
    target_groups: &[usize],
    reduction: AgeReduction,
) -> Result<AgeLossParts<S>> {
    let (parts, _, _) = age_loss_parts(est, x, target_ages, target_groups, reduction, true, false)?;
    Ok(parts)
}

/// Age loss plus its gradient with respect to the input images. With
/// `regression_term` off (the classification-only ablation) only the group
/// cross-entropy contributes to value and gradient.
pub fn age_loss_grad<S: Scalar>(
    est: &mut AgeEstimator<S>,
    x: &Array4<S>,
    target_ages: &Array1<S>,
    target_groups: &[usize],
    reduction: AgeReduction,
    regression_term: bool,
) -> Result<(AgeLossParts<S>, Array4<S>)> {
    let (parts, d_age, d_group) = age_loss_parts(
        est,
        x,
        target_ages,
        target_groups,
        reduction,
        regression_term,
        false,
    )?;
    let dx = est
        .backward(&d_age, &d_group, true, false)
        .expect("dx requested");
    Ok((parts, dx))
}

/// Pre-training loss value only (train-mode statistics, no gradients);
/// used by finite-difference verification.
pub fn age_pretrain_value<S: Scalar>(
    est: &mut AgeEstimator<S>,
    x: &Array4<S>,
    ages: &Array1<S>,
    groups: &[usize],
    reduction: AgeReduction,
) -> Result<AgeLossParts<S>> {
    let (parts, _, _) = age_loss_parts(est, x, ages, groups, reduction, true, true)?;
    Ok(parts)
}

/// One pre-training step on real faces: train-mode statistics, parameter
/// gradients accumulated into the estimator. Returns the loss parts.
pub fn age_pretrain_step<S: Scalar>(
    est: &mut AgeEstimator<S>,
    x: &Array4<S>,
    ages: &Array1<S>,
    groups: &[usize],
    reduction: AgeReduction,
) -> Result<AgeLossParts<S>> {
    let (parts, d_age, d_group) =
        age_loss_parts(est, x, ages, groups, reduction, true, true)?;
    est.backward(&d_age, &d_group, false, true);
    Ok(parts)
}

#[allow(clippy::type_complexity)]
fn age_loss_parts<S: Scalar>(
    est: &mut AgeEstimator<S>,
    x: &Array4<S>,
    target_ages: &Array1<S>,
    target_groups: &[usize],
    reduction: AgeReduction,
    regression_term: bool,
    train_mode: bool,
) -> Result<(AgeLossParts<S>, ndarray::Array2<S>, ndarray::Array2<S>)> {
    let b = x.dim().0;
    if target_ages.len() != b || target_groups.len() != b {
        return Err(Error::invalid(format!(
            "batch {b} with {} ages and {} groups",
            target_ages.len(),
            target_groups.len()
        )));
    }
    group_targets_valid(target_groups, est.n_groups())?;

    let (age_logits, group_logits) = est.forward(x, train_mode)?;
    let expected = dex_expected_age(&age_logits);
    let bf = sc::<S>(b as f64);

    // Regression term and its upstream gradient on the expected age.
    let mut upstream = Array1::<S>::zeros(b);
    let regression = match reduction {
        AgeReduction::MeanAbs => {
            let mut acc = S::zero();
            for i in 0..b {
                let diff = expected[i] - target_ages[i];
                acc += diff.abs();
                upstream[i] = sc::<S>(diff.to_f64().signum()) / bf;
                if diff == S::zero() {
                    upstream[i] = S::zero();
                }
            }
            acc / bf
        }
        AgeReduction::BatchL2 => {
            let mut sq = S::zero();
            for i in 0..b {
                let diff = expected[i] - target_ages[i];
                sq += diff * diff;
            }
            let norm = sq.sqrt();
            if norm > S::zero() {
                for i in 0..b {
                    upstream[i] = (expected[i] - target_ages[i]) / norm;
                }
            }
            norm
        }
    };
    let (regression, d_age_logits) = if regression_term {
        (
            regression,
            AgeEstimator::expected_age_grad(&age_logits, &upstream),
        )
    } else {
        (S::zero(), ndarray::Array2::zeros(age_logits.raw_dim()))
    };

    // Group classification term: softmax cross-entropy, mean over batch.
    let probs = softmax_rows(&group_logits);
    let mut ce = S::zero();
    let mut d_group_logits = probs.clone();
    for i in 0..b {
        let t = target_groups[i] - 1;
        ce += -(probs[[i, t]] + sc::<S>(1e-30)).ln();
        d_group_logits[[i, t]] -= S::one();
    }
    ce = ce / bf;
    d_group_logits.mapv_inplace(|v| v / bf);

    Ok((
        AgeLossParts {
            regression,
            classification: ce,
            total: regression + ce,
        },
        d_age_logits,
        d_group_logits,
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityLossParts<S> {
    pub pixel: S,
    pub ssim: S,
    pub feature: S,
    pub total: S,
}

/// Mixed identity-consistency loss between an output image and its source:
/// `(1 - a_ssim) * L_pix + a_ssim * L_ssim + a_fea * L_fea` with
/// `L_pix` the mean absolute difference, `L_ssim = 1 - SSIM`, and `L_fea`
/// the mean squared difference of frozen features.
pub fn identity_loss<S: Scalar>(
    x_out: &Array4<S>,
    x_in: &Array4<S>,
    phi: &mut FeatureNet<S>,
    weights: &LossWeights,
    st: &SsimSettings,
) -> Result<IdentityLossParts<S>> {
    identity_loss_impl(x_out, x_in, phi, weights, st, false).map(|(p, _)| p)
}

/// Identity loss plus the gradient of its weighted total with respect to
/// `x_out`.
pub fn identity_loss_grad<S: Scalar>(
    x_out: &Array4<S>,
    x_in: &Array4<S>,
    phi: &mut FeatureNet<S>,
    weights: &LossWeights,
    st: &SsimSettings,
) -> Result<(IdentityLossParts<S>, Array4<S>)> {
    identity_loss_impl(x_out, x_in, phi, weights, st, true)
        .map(|(p, g)| (p, g.expect("gradient requested")))
}

fn identity_loss_impl<S: Scalar>(
    x_out: &Array4<S>,
    x_in: &Array4<S>,
    phi: &mut FeatureNet<S>,
    weights: &LossWeights,
    st: &SsimSettings,
    want_grad: bool,
) -> Result<(IdentityLossParts<S>, Option<Array4<S>>)> {
    if x_out.dim() != x_in.dim() {
        return Err(Error::invalid(format!(
            "identity loss shapes differ: {:?} vs {:?}",
            x_out.dim(),
            x_in.dim()
        )));
    }
    let numel = sc::<S>(x_out.len() as f64);
    let diff = x_out - x_in;
    let pixel = diff.mapv(S::abs).sum() / numel;

    let (ssim_val, ssim_grad) = if want_grad {
        let (v, g) = ssim_with_grad(x_out, x_in, st)?;
        (v, Some(g))
    } else {
        (ssim_value(x_out, x_in, st)?, None)
    };
    let ssim_loss = S::one() - ssim_val;

    // Frozen-feature term; reference features carry no gradient.
    let f_in = phi.forward(x_in, false);
    let f_out = phi.forward(x_out, want_grad);
    let fdiff = &f_out - &f_in;
    let fnumel = sc::<S>(fdiff.len() as f64);
    let feature = fdiff.mapv(|v| v * v).sum() / fnumel;

    let a_ssim = sc::<S>(weights.alpha_ssim);
    let a_fea = sc::<S>(weights.alpha_fea);
    let total = (S::one() - a_ssim) * pixel + a_ssim * ssim_loss + a_fea * feature;

    let grad = if want_grad {
        let mut g = diff.mapv(|v| {
            if v > S::zero() {
                (S::one() - a_ssim) / numel
            } else if v < S::zero() {
                -(S::one() - a_ssim) / numel
            } else {
                S::zero()
            }
        });
        // d(1 - ssim)/dx = -d(ssim)/dx
        let sg = ssim_grad.expect("ssim gradient computed");
        g.zip_mut_with(&sg, |acc, &s| *acc = *acc - a_ssim * s);
        let two = sc::<S>(2.0);
        let dfeat = fdiff.mapv(|v| two * v / fnumel);
        let dx_fea = phi.backward_input(&dfeat);
        g.zip_mut_with(&dx_fea, |acc, &f| *acc = *acc + a_fea * f);
        Some(g)
    } else {
        None
    };

    Ok((
        IdentityLossParts {
            pixel,
            ssim: ssim_loss,
            feature,
            total,
        },
        grad,
    ))
}

/// Final generator objective: `l_adv * adv + l_age * age + l_ide * ide`.
pub fn total_g_loss(adv: f64, age: f64, ide: f64, w: &LossWeights) -> f64 {
    w.lambda_adv * adv + w.lambda_age * age + w.lambda_ide * ide
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn scores(vals: &[f64]) -> Array4<f64> {
        Array4::from_shape_vec((1, 1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn generator_adv_loss_reference_values() {
        assert_eq!(adv_loss_g(&scores(&[1.0, 1.0])), 0.0);
        assert_eq!(adv_loss_g(&scores(&[0.0, 0.0])), 0.5);
        assert_eq!(adv_loss_g(&scores(&[0.5, 1.5])), 0.125);
    }

    #[test]
    fn discriminator_adv_loss_reference_values() {
        assert_eq!(adv_loss_d(&scores(&[1.0]), &scores(&[0.0])), 0.0);
        assert_eq!(adv_loss_d(&scores(&[0.0]), &scores(&[1.0])), 1.0);
        assert_eq!(adv_loss_d(&scores(&[0.5]), &scores(&[0.5])), 0.25);
    }

    #[test]
    fn adv_losses_are_non_negative_and_zero_only_at_the_target() {
        for v in [-1.0, -0.3, 0.0, 0.4, 0.9, 1.0, 1.7] {
            assert!(adv_loss_g(&scores(&[v])) >= 0.0);
            assert_eq!(adv_loss_g(&scores(&[v])) == 0.0, v == 1.0);
        }
    }

    #[test]
    fn adv_grads_match_finite_differences() {
        let s = scores(&[0.3, 1.2, -0.4]);
        let (_, g) = adv_loss_g_grad(&s);
        let h = 1e-7;
        for i in 0..3 {
            let mut sp = s.clone();
            sp[[0, 0, 0, i]] += h;
            let mut sm = s.clone();
            sm[[0, 0, 0, i]] -= h;
            let fd = (adv_loss_g(&sp) - adv_loss_g(&sm)) / (2.0 * h);
            assert!((fd - g[[0, 0, 0, i]]).abs() < 1e-6);
        }
    }

    #[test]
    fn total_loss_with_default_weights() {
        let w = LossWeights::default();
        assert_eq!(total_g_loss(0.0, 0.0, 0.0, &w), 0.0);
        assert_eq!(total_g_loss(1.0, 1.0, 1.0, &w), 100.42);
        assert_eq!(total_g_loss(0.5, 0.0, 0.0, &w), 50.0);
    }

    #[test]
    fn weight_validation() {
        let mut w = LossWeights::default();
        assert!(w.validate().is_ok());
        w.alpha_ssim = 1.5;
        assert!(w.validate().is_err());
        w.alpha_ssim = 0.15;
        w.lambda_adv = -1.0;
        assert!(w.validate().is_err());
    }
}
