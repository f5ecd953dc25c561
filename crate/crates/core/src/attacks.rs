//! Gradient-based adversarial attacks.
//!
//! Three primitives, all operating on the `[0, 1]` input box:
//!
//! * [`fgsm`] — single-step sign-of-gradient perturbation;
//! * [`margin_by_binary_search`] — bisects the FGSM step size to estimate
//!   the smallest flipping perturbation, a cheap robustness proxy used for
//!   ranking unlabeled samples;
//! * [`deepfool`] — iterative linearization toward the nearest decision
//!   boundary, yielding an approximately L2-minimal perturbation.
//!
//! The bisection loop always runs exactly `ceil(log2(1 / tolerance))`
//! iterations: the bracket halves each step and starts at width 1.

use crate::nn::MlpModel;
use crate::{Error, Result, Scalar};

/// Shared attack knobs. `tolerance` is the bisection stopping width;
/// the DeepFool fields are its iteration cap and boundary overshoot.
#[derive(Clone, Debug)]
pub struct AttackParams<T> {
    pub tolerance: T,
    pub deepfool_max_iter: usize,
    pub deepfool_overshoot: T,
}

impl<T: Scalar> Default for AttackParams<T> {
    fn default() -> Self {
        AttackParams {
            tolerance: T::cast(0.001),
            deepfool_max_iter: 50,
            deepfool_overshoot: T::cast(0.02),
        }
    }
}

impl<T: Scalar> AttackParams<T> {
    pub fn validate(&self) -> Result<()> {
        let tol = self.tolerance.as_f64();
        if !(tol > 0.0 && tol <= 0.1) {
            return Err(Error::invalid(format!(
                "attack tolerance {tol} outside (0, 0.1]"
            )));
        }
        if self.deepfool_max_iter == 0 {
            return Err(Error::invalid("deepfool_max_iter must be at least 1"));
        }
        if !(self.deepfool_overshoot.as_f64() >= 0.0) {
            return Err(Error::invalid("deepfool_overshoot must be >= 0"));
        }
        Ok(())
    }
}

/// Result of [`margin_by_binary_search`]: the estimated flipping step size,
/// the perturbed input at that step size, whether it actually flips the
/// model's prediction, and how many bisection iterations ran.
#[derive(Clone, Debug)]
pub struct MarginEstimate<T> {
    pub eps_star: T,
    pub adversarial: Vec<T>,
    pub flipped: bool,
    pub iterations: usize,
}

/// Result of [`deepfool`]: the clamped adversarial point, its L2 distance
/// from the source, whether the prediction differs there, and the number of
/// linearization steps taken.
#[derive(Clone, Debug)]
pub struct DeepfoolResult<T> {
    pub adversarial: Vec<T>,
    pub perturbation_norm: T,
    pub flipped: bool,
    pub iterations: usize,
}

/// Fast gradient sign method: `clamp(x + eps * sign(grad_x loss), 0, 1)`,
/// with `sign(0) = 0` so zero-gradient coordinates stay put.
pub fn fgsm<T: Scalar>(model: &MlpModel<T>, x: &[T], y: usize, eps: T) -> Result<Vec<T>> {
    check_input(model, x)?;
    if y >= model.num_classes() {
        return Err(Error::invalid(format!(
            "fgsm: label {y} outside 0..{}",
            model.num_classes()
        )));
    }
    if !(eps.as_f64() >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid("fgsm: eps must be finite and >= 0"));
    }
    let (_, grad) = model.loss_grad_input(x, y);
    Ok(perturb_by_sign(x, &grad, eps))
}

fn perturb_by_sign<T: Scalar>(x: &[T], grad: &[T], eps: T) -> Vec<T> {
    x.iter()
        .zip(grad)
        .map(|(&xi, &g)| {
            let step = if g > T::zero() {
                eps
            } else if g < T::zero() {
                -eps
            } else {
                T::zero()
            };
            (xi + step).max(T::zero()).min(T::one())
        })
        .collect()
}

/// Bisects the FGSM step size over `[0, 1]` to locate the smallest step
/// that flips the model's own prediction of `x`.
///
/// The bracket `[start, end]` starts at `[0, 1]` with probe `1/2`; a flip
/// moves `end` down to the probe, otherwise `start` moves up, and the next
/// probe is the midpoint. The loop exits once the bracket is no wider than
/// the tolerance; the returned point is the FGSM perturbation at the final
/// probe, which the `flipped` flag re-checks. Since the loss label is fixed
/// at the current prediction, the gradient — and hence the FGSM direction —
/// is computed once and reused across probes.
pub fn margin_by_binary_search<T: Scalar>(
    model: &MlpModel<T>,
    x: &[T],
    params: &AttackParams<T>,
) -> Result<MarginEstimate<T>> {
    params.validate()?;
    check_input(model, x)?;
    let y = model.predict(x);
    let (_, grad) = model.loss_grad_input(x, y);

    let half = T::cast(0.5);
    let mut start = T::zero();
    let mut end = T::one();
    let mut eps = half;
    let mut iterations = 0usize;
    while end - start > params.tolerance {
        let adv = perturb_by_sign(x, &grad, eps);
        if crate::nn::argmax(&model.forward(&adv)) != y {
            end = eps;
        } else {
            start = eps;
        }
        eps = start + (end - start) * half;
        iterations += 1;
    }
    let adversarial = perturb_by_sign(x, &grad, eps);
    let flipped = crate::nn::argmax(&model.forward(&adversarial)) != y;
    Ok(MarginEstimate {
        eps_star: eps,
        adversarial,
        flipped,
        iterations,
    })
}

/// Multiclass DeepFool with L2 steps.
///
/// Each iteration linearizes the class scores at the current (unclamped)
/// probe point, picks the class whose boundary is nearest under that
/// linearization, and steps just across it; the probe is the accumulated
/// perturbation scaled by `1 + overshoot`. The returned adversarial point
/// is the final probe clamped to `[0, 1]`, and `perturbation_norm` is its
/// distance from `x` after clamping.
pub fn deepfool<T: Scalar>(
    model: &MlpModel<T>,
    x: &[T],
    params: &AttackParams<T>,
) -> Result<DeepfoolResult<T>> {
    params.validate()?;
    check_input(model, x)?;
    let dim = x.len();
    let classes = model.num_classes();
    let hidden = model.hidden_dim();
    let y0 = model.predict(x);
    let overshoot = T::one() + params.deepfool_overshoot;

    let mut r_tot = vec![T::zero(); dim];
    let mut probe = x.to_vec();
    let mut w_best = vec![T::zero(); dim];
    let mut w_c = vec![T::zero(); dim];
    let mut iterations = 0usize;

    for _ in 0..params.deepfool_max_iter {
        if crate::nn::argmax(&model.forward(&probe)) != y0 {
            break;
        }
        iterations += 1;

        // Linearize all class scores at the probe: grad f_c differs from
        // grad f_{y0} by W1^T ((w2_c - w2_{y0}) masked by active units).
        let z = model.hidden_pre(&probe);
        let logits = model.forward(&probe);
        let mut best_ratio = T::infinity();
        let mut best_fd = T::zero();
        let mut best_norm_sq = T::zero();
        let mut found = false;
        for c in 0..classes {
            if c == y0 {
                continue;
            }
            // Hidden-space coefficient of the score difference.
            let mut v = vec![T::zero(); hidden];
            for r in 0..hidden {
                if z[r] > T::zero() {
                    v[r] = model.w2.get(c, r) - model.w2.get(y0, r);
                }
            }
            model.w1.matvec_t_into(&v, &mut w_c);
            let norm_sq = crate::linalg::dot(&w_c, &w_c);
            if norm_sq <= T::cast(1e-24) {
                continue; // parallel scores: this boundary is unreachable
            }
            let fd = (logits[c] - logits[y0]).abs();
            let ratio = fd / norm_sq.sqrt();
            if ratio < best_ratio {
                best_ratio = ratio;
                best_fd = fd;
                best_norm_sq = norm_sq;
                w_best.copy_from_slice(&w_c);
                found = true;
            }
        }
        if !found {
            break; // all boundaries degenerate; no direction to move in
        }

        // Minimal step across the chosen linearized boundary.
        let scale = best_fd / best_norm_sq;
        let mut step_sq = T::zero();
        for j in 0..dim {
            let s = scale * w_best[j];
            r_tot[j] += s;
            step_sq += s * s;
        }
        for j in 0..dim {
            probe[j] = x[j] + overshoot * r_tot[j];
        }
        if step_sq.sqrt() <= T::cast(1e-15) {
            break; // sitting on the boundary; further steps are zero
        }
    }

    let adversarial: Vec<T> = x
        .iter()
        .zip(&r_tot)
        .map(|(&xi, &r)| (xi + overshoot * r).max(T::zero()).min(T::one()))
        .collect();
    let flipped = crate::nn::argmax(&model.forward(&adversarial)) != y0;
    let mut diff_sq = T::zero();
    for (a, &xi) in adversarial.iter().zip(x) {
        let d = *a - xi;
        diff_sq += d * d;
    }
    Ok(DeepfoolResult {
        adversarial,
        perturbation_norm: diff_sq.sqrt(),
        flipped,
        iterations,
    })
}

fn check_input<T: Scalar>(model: &MlpModel<T>, x: &[T]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::invalid(format!(
            "input has {} features, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    Ok(())
}
