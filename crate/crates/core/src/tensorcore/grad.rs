use super::mlp::GradBundle;
use crate::error::{Error, Result};

/// Scales every gradient by `max_norm / g` when the global L2 norm `g` exceeds `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradBundle, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Clips several bundles jointly, as if they were one parameter vector.
pub fn clip_grad_norm_joint(bundles: &mut [&mut GradBundle], max_norm: f64) -> f64 {
    let norm = bundles
        .iter()
        .map(|b| b.values().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for b in bundles.iter_mut() {
            b.scale(s);
        }
    }
    norm
}

/// Worst element-wise relative error between `analytic` and a central-difference estimate
/// of the gradient of `loss_fn` at `params`.
///
/// The relative error for each coordinate is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// coordinates with near-zero gradient from dominating through rounding noise.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference eps {eps} outside [1e-6, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters vs {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let floor = 1e-6;
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = loss_fn(&p);
        p[i] = orig - eps;
        let minus = loss_fn(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
