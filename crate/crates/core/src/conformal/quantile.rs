//! Finite-sample corrected quantiles.

use crate::error::{Error, Result};

/// Ranks are computed from products like `(n + 1)(1 - alpha)` that should be
/// integral but pick up rounding error; snap anything this close.
const RANK_SNAP: f64 = 1e-9;

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            value: alpha,
            reason: "alpha must lie in (0, 1)",
        })
    }
}

fn snapped(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() < RANK_SNAP).then_some(r)
}

/// `ceil((n + 1)(1 - alpha))`, the 1-based rank of the upper conformal quantile.
pub fn upper_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = snapped(x).unwrap_or_else(|| x.ceil());
    (r as usize).max(1)
}

/// `floor((n + 1) alpha)`, floored at 1: the rank of the lower-tail quantile.
pub fn lower_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * alpha;
    let r = snapped(x).unwrap_or_else(|| x.floor());
    (r as usize).max(1)
}

pub(crate) fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Domain {
            value: *bad,
            reason: "conformity scores must not be NaN",
        });
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest score, or `+inf` when that rank
/// exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let v = sorted(scores)?;
    let k = upper_rank(v.len(), alpha);
    Ok(if k > v.len() { f64::INFINITY } else { v[k - 1] })
}

/// The `floor((n + 1) alpha)`-th smallest score (at least the minimum).
pub fn lower_conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let v = sorted(scores)?;
    let k = lower_rank(v.len(), alpha).min(v.len());
    Ok(v[k - 1])
}
