//! Conformal intervals for the disagreement estimate.
//!
//! | method | conformity score                  | interval                          |
//! |--------|-----------------------------------|-----------------------------------|
//! | AR     | `|d - d_hat|`                     | `d_hat ± q`                       |
//! | Gamma  | `|d - d_hat| / max(d_hat, eps)`   | `d_hat ± q * max(d_hat, eps)`     |
//! | RN     | `|d - d_hat| / max(sigma, eps)`   | `d_hat ± q * max(sigma, eps)`     |
//! | R2CCP  | interpolated bin probability at d | hull of bins with prob `>= q`     |
//!
//! For Gamma the interval equals `[d_hat (1 - q), d_hat (1 + q)]` whenever
//! `d_hat >= eps`. `sigma` is a k-nearest-neighbour regression of the absolute
//! residuals fitted on the calibration set. Every interval is clipped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::quantile::{check_alpha, conformal_quantile, lower_conformal_quantile};
use crate::error::{Error, Result};
use crate::serde_ext::extended_f64;
use crate::types::{bin_centers, CalibrationItem, Interval, RegOutput};

/// Floor applied to `d_hat` (Gamma) and `sigma` (RN) before dividing.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Neighbours used by the RN residual model.
pub const DEFAULT_KNN_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMethod {
    Ar,
    Gamma,
    Rn,
    R2ccp,
}

impl RegMethod {
    pub const ALL: [RegMethod; 4] = [RegMethod::Ar, RegMethod::Gamma, RegMethod::Rn, RegMethod::R2ccp];

    pub fn name(self) -> &'static str {
        match self {
            RegMethod::Ar => "ar",
            RegMethod::Gamma => "gamma",
            RegMethod::Rn => "rn",
            RegMethod::R2ccp => "r2ccp",
        }
    }
}

impl std::str::FromStr for RegMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Ok(RegMethod::Ar),
            "gamma" | "g" => Ok(RegMethod::Gamma),
            "rn" => Ok(RegMethod::Rn),
            "r2ccp" => Ok(RegMethod::R2ccp),
            other => Err(Error::Config(format!("unknown regression method `{other}`"))),
        }
    }
}

/// Options for regression calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegOptions {
    pub epsilon: f64,
    pub knn_k: usize,
}

impl Default for RegOptions {
    fn default() -> Self {
        RegOptions {
            epsilon: DEFAULT_EPSILON,
            knn_k: DEFAULT_KNN_K,
        }
    }
}

/// Frozen k-nearest-neighbour regressor of absolute residuals.
///
/// Euclidean distance, uniform weights, ties broken by calibration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResidualModel {
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl KnnResidualModel {
    pub fn fit(features: Vec<Vec<f64>>, residuals: Vec<f64>, k: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        if k == 0 || k > features.len() {
            return Err(Error::Config(format!(
                "knn k = {k} must lie in [1, n_cal = {}]",
                features.len()
            )));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::schema(None, "residual-model features have inconsistent dimension"));
        }
        Ok(KnnResidualModel { k, features, residuals })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn predict_impl(&self, x: &[f64], exclude: Option<usize>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::schema(
                None,
                format!("feature dimension {} != model dimension {}", x.len(), self.dim()),
            ));
        }
        let mut dist: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, f)| (f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(dist.len());
        if k == 0 {
            return Ok(0.0);
        }
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_distance);
            dist.truncate(k);
        }
        dist.sort_by(by_distance);
        Ok(dist.iter().map(|(_, i)| self.residuals[*i]).sum::<f64>() / k as f64)
    }

    /// Predicted absolute residual at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.predict_impl(x, None)
    }

    /// Prediction for calibration point `i` using all other points.
    pub fn predict_leave_out(&self, i: usize) -> Result<f64> {
        self.predict_impl(&self.features[i], Some(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum RegRule {
    Ar {
        #[serde(with = "extended_f64")]
        q_hat: f64,
    },
    Gamma {
        #[serde(with = "extended_f64")]
        q_hat: f64,
    },
    Rn {
        #[serde(with = "extended_f64")]
        q_hat: f64,
        model: KnnResidualModel,
    },
    R2ccp { q_hat: f64, bin_centers: Vec<f64> },
}

/// Frozen regression calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegCalibration {
    pub alpha: f64,
    pub n_cal: usize,
    pub epsilon: f64,
    #[serde(flatten)]
    pub rule: RegRule,
}

fn prepare(cal: &[(RegOutput, f64)], alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    Ok(())
}

fn residuals(cal: &[(RegOutput, f64)]) -> Vec<f64> {
    cal.iter().map(|(o, d)| (d - o.d_hat).abs()).collect()
}

pub fn calibrate_ar(cal: &[(RegOutput, f64)], alpha: f64) -> Result<RegCalibration> {
    prepare(cal, alpha)?;
    Ok(RegCalibration {
        alpha,
        n_cal: cal.len(),
        epsilon: DEFAULT_EPSILON,
        rule: RegRule::Ar {
            q_hat: conformal_quantile(&residuals(cal), alpha)?,
        },
    })
}

pub fn calibrate_gamma(cal: &[(RegOutput, f64)], alpha: f64, epsilon: f64) -> Result<RegCalibration> {
    prepare(cal, alpha)?;
    check_epsilon(epsilon)?;
    let scores: Vec<f64> = cal
        .iter()
        .map(|(o, d)| (d - o.d_hat).abs() / o.d_hat.max(epsilon))
        .collect();
    Ok(RegCalibration {
        alpha,
        n_cal: cal.len(),
        epsilon,
        rule: RegRule::Gamma {
            q_hat: conformal_quantile(&scores, alpha)?,
        },
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// Residual-model features for a calibration set: either every item carries
/// a feature vector or none does (then `[d_hat]` is used).
fn rn_features(cal: &[(RegOutput, f64)]) -> Result<Vec<Vec<f64>>> {
    let with = cal.iter().filter(|(o, _)| o.features.is_some()).count();
    if with != 0 && with != cal.len() {
        return Err(Error::schema(
            None,
            format!("{with} of {} calibration items carry features; need all or none", cal.len()),
        ));
    }
    Ok(cal.iter().map(|(o, _)| o.residual_features()).collect())
}

pub fn calibrate_rn(cal: &[(RegOutput, f64)], alpha: f64, k: usize, epsilon: f64) -> Result<RegCalibration> {
    prepare(cal, alpha)?;
    check_epsilon(epsilon)?;
    if k == 0 || k > cal.len() {
        return Err(Error::Config(format!("knn k = {k} must lie in [1, n_cal = {}]", cal.len())));
    }
    let res = residuals(cal);
    let model = KnnResidualModel::fit(rn_features(cal)?, res.clone(), k)?;
    let scores = (0..cal.len())
        .map(|i| Ok(res[i] / model.predict_leave_out(i)?.max(epsilon)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RegCalibration {
        alpha,
        n_cal: cal.len(),
        epsilon,
        rule: RegRule::Rn {
            q_hat: conformal_quantile(&scores, alpha)?,
            model,
        },
    })
}

/// Piecewise-linear interpolation of `bin_probs` over `bin_centers`, clamped
/// to the boundary probabilities outside the first and last center.
pub fn interp_prob(bin_centers: &[f64], bin_probs: &[f64], d: f64) -> Result<f64> {
    if bin_centers.len() != bin_probs.len() {
        return Err(Error::schema(
            None,
            format!("{} bin centers but {} bin probabilities", bin_centers.len(), bin_probs.len()),
        ));
    }
    if bin_centers.len() < 2 {
        return Err(Error::schema(None, "need at least 2 bins"));
    }
    let last = bin_centers.len() - 1;
    if d <= bin_centers[0] {
        return Ok(bin_probs[0]);
    }
    if d >= bin_centers[last] {
        return Ok(bin_probs[last]);
    }
    // First center strictly greater than d; d lies in [c[j-1], c[j]).
    let j = bin_centers.partition_point(|c| *c <= d);
    let (c0, c1) = (bin_centers[j - 1], bin_centers[j]);
    let t = (d - c0) / (c1 - c0);
    Ok(bin_probs[j - 1] + t * (bin_probs[j] - bin_probs[j - 1]))
}

fn bins_of(out: &RegOutput) -> Result<&[f64]> {
    out.bin_probs
        .as_deref()
        .ok_or_else(|| Error::schema(None, "R2CCP requires bin probabilities"))
}

pub fn calibrate_r2ccp(cal: &[(RegOutput, f64)], alpha: f64) -> Result<RegCalibration> {
    prepare(cal, alpha)?;
    let b = bins_of(&cal[0].0)?.len();
    let centers = bin_centers(b);
    let scores = cal
        .iter()
        .map(|(o, d)| interp_prob(&centers, bins_of(o)?, *d))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RegCalibration {
        alpha,
        n_cal: cal.len(),
        epsilon: DEFAULT_EPSILON,
        rule: RegRule::R2ccp {
            q_hat: lower_conformal_quantile(&scores, alpha)?,
            bin_centers: centers,
        },
    })
}

fn mismatch(expected: RegMethod, found: RegMethod) -> Error {
    Error::CalibrationMismatch {
        expected: expected.name(),
        found: found.name(),
    }
}

fn symmetric(d_hat: f64, half_width: f64) -> Interval {
    Interval::clipped(d_hat - half_width, d_hat + half_width)
}

pub fn interval_ar(calib: &RegCalibration, d_hat: f64) -> Result<Interval> {
    match calib.rule {
        RegRule::Ar { q_hat } => Ok(symmetric(d_hat, q_hat)),
        _ => Err(mismatch(RegMethod::Ar, calib.method())),
    }
}

pub fn interval_gamma(calib: &RegCalibration, d_hat: f64) -> Result<Interval> {
    match calib.rule {
        RegRule::Gamma { q_hat } => Ok(symmetric(d_hat, q_hat * d_hat.max(calib.epsilon))),
        _ => Err(mismatch(RegMethod::Gamma, calib.method())),
    }
}

/// The residual model's prediction at `output`, before flooring.
pub fn rn_sigma(calib: &RegCalibration, output: &RegOutput) -> Result<f64> {
    match &calib.rule {
        RegRule::Rn { model, .. } => model.predict(&output.residual_features()),
        _ => Err(mismatch(RegMethod::Rn, calib.method())),
    }
}

pub fn interval_rn(calib: &RegCalibration, output: &RegOutput) -> Result<Interval> {
    match &calib.rule {
        RegRule::Rn { q_hat, model } => {
            let sigma = model.predict(&output.residual_features())?;
            Ok(symmetric(output.d_hat, q_hat * sigma.max(calib.epsilon)))
        }
        _ => Err(mismatch(RegMethod::Rn, calib.method())),
    }
}

pub fn interval_r2ccp(calib: &RegCalibration, output: &RegOutput) -> Result<Interval> {
    let RegRule::R2ccp { q_hat, bin_centers } = &calib.rule else {
        return Err(mismatch(RegMethod::R2ccp, calib.method()));
    };
    let probs = bins_of(output)?;
    if probs.len() != bin_centers.len() {
        return Err(Error::schema(
            None,
            format!("{} bin probabilities but calibrated with {} bins", probs.len(), bin_centers.len()),
        ));
    }
    let mut kept = bin_centers.iter().zip(probs).filter(|(_, p)| **p >= *q_hat).map(|(c, _)| *c);
    let interval = match kept.next() {
        Some(first) => {
            let last = kept.next_back().unwrap_or(first);
            Interval::clipped(first, last)
        }
        None => {
            let (argmax, _) = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, p)| if *p > best.1 { (i, *p) } else { best });
            Interval::clipped(bin_centers[argmax], bin_centers[argmax])
        }
    };
    Ok(interval)
}

impl RegCalibration {
    pub fn calibrate(method: RegMethod, cal: &[(RegOutput, f64)], alpha: f64, opts: &RegOptions) -> Result<Self> {
        match method {
            RegMethod::Ar => calibrate_ar(cal, alpha),
            RegMethod::Gamma => calibrate_gamma(cal, alpha, opts.epsilon),
            RegMethod::Rn => calibrate_rn(cal, alpha, opts.knn_k, opts.epsilon),
            RegMethod::R2ccp => calibrate_r2ccp(cal, alpha),
        }
    }

    pub fn calibrate_items(method: RegMethod, items: &[CalibrationItem], alpha: f64, opts: &RegOptions) -> Result<Self> {
        let pairs: Vec<(RegOutput, f64)> = items.iter().map(|i| (i.reg.clone(), i.d)).collect();
        Self::calibrate(method, &pairs, alpha, opts)
    }

    pub fn method(&self) -> RegMethod {
        match self.rule {
            RegRule::Ar { .. } => RegMethod::Ar,
            RegRule::Gamma { .. } => RegMethod::Gamma,
            RegRule::Rn { .. } => RegMethod::Rn,
            RegRule::R2ccp { .. } => RegMethod::R2ccp,
        }
    }

    pub fn q_hat(&self) -> f64 {
        match &self.rule {
            RegRule::Ar { q_hat } | RegRule::Gamma { q_hat } | RegRule::Rn { q_hat, .. } | RegRule::R2ccp { q_hat, .. } => {
                *q_hat
            }
        }
    }

    pub fn interval(&self, output: &RegOutput) -> Result<Interval> {
        match self.method() {
            RegMethod::Ar => interval_ar(self, output.d_hat),
            RegMethod::Gamma => interval_gamma(self, output.d_hat),
            RegMethod::Rn => interval_rn(self, output),
            RegMethod::R2ccp => interval_r2ccp(self, output),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pt(d_hat: f64) -> RegOutput {
        RegOutput::point(d_hat)
    }

    fn with_rule(rule: RegRule) -> RegCalibration {
        RegCalibration {
            alpha: 0.1,
            n_cal: 10,
            epsilon: DEFAULT_EPSILON,
            rule,
        }
    }

    fn close(i: Interval, lo: f64, hi: f64) {
        assert_abs_diff_eq!(i.lo, lo, epsilon = 1e-12);
        assert_abs_diff_eq!(i.hi, hi, epsilon = 1e-12);
    }

    #[test]
    fn ar_examples() {
        let cal = vec![(pt(0.5), 0.55), (pt(0.5), 0.4), (pt(0.5), 0.7)];
        let c = calibrate_ar(&cal, 0.5).unwrap();
        assert_abs_diff_eq!(c.q_hat(), 0.1, epsilon = 1e-12);

        let c = calibrate_ar(&[(pt(0.3), 0.3), (pt(0.6), 0.6)], 0.5).unwrap();
        assert_eq!(c.q_hat(), 0.0);

        let c = calibrate_ar(&[(pt(0.3), 0.5)], 0.4).unwrap();
        assert_eq!(c.q_hat(), f64::INFINITY);
        assert_eq!(c.interval(&pt(0.3)).unwrap(), Interval { lo: 0.0, hi: 1.0 });

        close(interval_ar(&with_rule(RegRule::Ar { q_hat: 0.2 }), 0.5).unwrap(), 0.3, 0.7);
        close(interval_ar(&with_rule(RegRule::Ar { q_hat: 0.0 }), 0.5).unwrap(), 0.5, 0.5);
        close(interval_ar(&with_rule(RegRule::Ar { q_hat: 0.2 }), 0.95).unwrap(), 0.75, 1.0);
        assert!(matches!(
            interval_ar(&with_rule(RegRule::Gamma { q_hat: 0.2 }), 0.5),
            Err(Error::CalibrationMismatch { .. })
        ));
        assert_eq!(calibrate_ar(&[], 0.1), Err(Error::EmptyCalibration));
    }

    #[test]
    fn gamma_examples() {
        close(interval_gamma(&with_rule(RegRule::Gamma { q_hat: 0.4 }), 0.5).unwrap(), 0.3, 0.7);
        let i = interval_gamma(&with_rule(RegRule::Gamma { q_hat: 0.9 }), 0.0).unwrap();
        assert!(i.lo == 0.0 && i.hi < 1e-5);

        let c = calibrate_gamma(&[(pt(0.5), 0.6), (pt(0.5), 0.4)], 0.5, DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(c.q_hat(), 0.2, epsilon = 1e-12);
        close(c.interval(&pt(0.5)).unwrap(), 0.4, 0.6);
    }

    #[test]
    fn rn_examples() {
        let model = KnnResidualModel::fit(vec![vec![0.5]], vec![0.1], 1).unwrap();
        let c = with_rule(RegRule::Rn { q_hat: 1.5, model });
        close(interval_rn(&c, &pt(0.5)).unwrap(), 0.35, 0.65);

        let zero = KnnResidualModel::fit(vec![vec![0.5]], vec![0.0], 1).unwrap();
        let c = with_rule(RegRule::Rn { q_hat: 2.0, model: zero });
        let i = interval_rn(&c, &pt(0.5)).unwrap();
        assert!(i.width() <= 4.0 * DEFAULT_EPSILON + 1e-15);

        // Equal residuals everywhere: constant sigma, constant widths.
        let cal: Vec<_> = (0..12).map(|i| (pt(0.3 + 0.02 * i as f64), 0.35 + 0.02 * i as f64)).collect();
        let c = calibrate_rn(&cal, 0.2, 3, DEFAULT_EPSILON).unwrap();
        let widths: Vec<f64> = [0.1, 0.4, 0.5].iter().map(|d| c.interval(&pt(*d)).unwrap().width()).collect();
        assert!(widths.iter().all(|w| (w - widths[0]).abs() < 1e-12), "{widths:?}");

        assert!(matches!(calibrate_rn(&cal, 0.2, 13, DEFAULT_EPSILON), Err(Error::Config(_))));
        let mut mixed = cal.clone();
        mixed[0].0.features = Some(vec![1.0, 2.0]);
        assert!(matches!(calibrate_rn(&mixed, 0.2, 3, DEFAULT_EPSILON), Err(Error::Schema { .. })));
    }

    #[test]
    fn knn_leave_out_skips_self() {
        let m = KnnResidualModel::fit(vec![vec![0.0], vec![1.0], vec![1.1]], vec![9.0, 1.0, 3.0], 1).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), 9.0);
        assert_eq!(m.predict_leave_out(0).unwrap(), 1.0);
        assert_eq!(m.predict_leave_out(1).unwrap(), 3.0);
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn interp_examples() {
        assert_abs_diff_eq!(interp_prob(&[0.1, 0.3], &[0.2, 0.4], 0.2).unwrap(), 0.3, epsilon = 1e-12);
        assert_eq!(interp_prob(&[0.1, 0.3], &[0.2, 0.4], 0.3).unwrap(), 0.4);
        assert_eq!(interp_prob(&[0.1, 0.3], &[0.2, 0.4], 0.1).unwrap(), 0.2);
        assert_eq!(interp_prob(&[0.1, 0.3], &[0.2, 0.4], 0.05).unwrap(), 0.2);
        assert_eq!(interp_prob(&[0.1, 0.3], &[0.2, 0.4], 0.95).unwrap(), 0.4);
        assert!(interp_prob(&[0.1, 0.3], &[0.2], 0.2).is_err());
    }

    #[test]
    fn r2ccp_interval_examples() {
        let centers = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        let out = RegOutput {
            d_hat: 0.5,
            bin_probs: Some(vec![0.05, 0.1, 0.5, 0.3, 0.05]),
            features: None,
        };
        let mk = |q_hat| {
            with_rule(RegRule::R2ccp {
                q_hat,
                bin_centers: centers.clone(),
            })
        };
        close(interval_r2ccp(&mk(0.1), &out).unwrap(), 0.3, 0.7);
        close(interval_r2ccp(&mk(0.0), &out).unwrap(), 0.1, 0.9);
        close(interval_r2ccp(&mk(0.6), &out).unwrap(), 0.5, 0.5);
        assert!(matches!(interval_r2ccp(&mk(0.1), &pt(0.5)), Err(Error::Schema { .. })));
    }

    #[test]
    fn r2ccp_calibration_uses_lower_tail() {
        let bins = |v: Vec<f64>| RegOutput {
            d_hat: 0.5,
            bin_probs: Some(v),
            features: None,
        };
        // Centers 0.25, 0.75; scores at the true d are 0.9, 0.2 and 0.6.
        let cal = vec![
            (bins(vec![0.9, 0.1]), 0.25),
            (bins(vec![0.8, 0.2]), 0.75),
            (bins(vec![0.4, 0.6]), 0.8),
        ];
        let c = calibrate_r2ccp(&cal, 0.5).unwrap();
        // floor(4 * 0.5) = 2nd smallest of [0.2, 0.6, 0.9].
        assert_eq!(c.q_hat(), 0.6);
        assert!(matches!(calibrate_r2ccp(&[(pt(0.5), 0.5)], 0.5), Err(Error::Schema { .. })));
    }
}
