//! Training losses and their analytic gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub nontoxic: f64,
    pub toxic: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        nontoxic: 1.0,
        toxic: 1.0,
    };

    pub fn get(&self, y: Label) -> f64 {
        match y {
            Label::Toxic => self.toxic,
            Label::NonToxic => self.nontoxic,
        }
    }

    /// `n / (2 n_y)` per class; a class absent from `labels` keeps weight 1.
    pub fn inverse_frequency(labels: impl IntoIterator<Item = Label>) -> Self {
        let (mut toxic, mut total) = (0usize, 0usize);
        for y in labels {
            total += 1;
            toxic += usize::from(y == Label::Toxic);
        }
        let w = |count: usize| {
            if count == 0 {
                1.0
            } else {
                total as f64 / (2.0 * count as f64)
            }
        };
        ClassWeights {
            toxic: w(toxic),
            nontoxic: w(total - toxic),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_gamma: f64,
    pub class_weights: ClassWeights,
    pub reg_bin_width: f64,
    pub psi: f64,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_gamma: 2.0,
            class_weights: ClassWeights::UNIT,
            reg_bin_width: 0.1,
            psi: 0.5,
            tau: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal_gamma must be >= 0".into()));
        }
        if !(self.class_weights.toxic > 0.0 && self.class_weights.nontoxic > 0.0) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        bins_for_width(self.reg_bin_width)?;
        if !(self.psi > 0.0) {
            return Err(Error::Config("psi must be > 0".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config("tau must be >= 0".into()));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Probability the model assigns to the true label `y`, given `p = P(toxic)`.
fn true_class_prob(p: f64, y: Label) -> f64 {
    match y {
        Label::Toxic => p,
        Label::NonToxic => 1.0 - p,
    }
}

/// Weighted focal loss `w_y (1 - p_y)^gamma (-ln p_y)` where `p` is P(toxic).
pub fn focal_loss(p: f64, y: Label, cfg: &LossConfig) -> f64 {
    let q = clamp_prob(true_class_prob(p, y));
    cfg.class_weights.get(y) * (1.0 - q).powf(cfg.focal_gamma) * -q.ln()
}

/// d(focal_loss)/dp.
pub fn focal_loss_grad(p: f64, y: Label, cfg: &LossConfig) -> f64 {
    let q = clamp_prob(true_class_prob(p, y));
    let g = cfg.focal_gamma;
    let focusing = if g == 0.0 { 0.0 } else { g * (1.0 - q).powf(g - 1.0) * q.ln() };
    let dq = cfg.class_weights.get(y) * (focusing - (1.0 - q).powf(g) / q);
    match y {
        Label::Toxic => dq,
        Label::NonToxic => -dq,
    }
}

pub fn weighted_bce_loss(d_hat: f64, d: f64, weight: f64) -> f64 {
    let p = clamp_prob(d_hat);
    weight * (-d * p.ln() - (1.0 - d) * (1.0 - p).ln())
}

/// d(weighted_bce_loss)/d(d_hat).
pub fn weighted_bce_grad(d_hat: f64, d: f64, weight: f64) -> f64 {
    let p = clamp_prob(d_hat);
    weight * (-d / p + (1.0 - d) / (1.0 - p))
}

pub fn weighted_mse_loss(d_hat: f64, d: f64, weight: f64) -> f64 {
    weight * (d - d_hat) * (d - d_hat)
}

pub fn weighted_mse_grad(d_hat: f64, d: f64, weight: f64) -> f64 {
    2.0 * weight * (d_hat - d)
}

fn bins_for_width(width: f64) -> Result<usize> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(Error::Config(format!("bin width {width} must lie in (0, 1]")));
    }
    let bins = (1.0 / width).round();
    if ((1.0 / width) - bins).abs() > 1e-9 {
        return Err(Error::Config(format!("bin width {width} does not divide 1 evenly")));
    }
    Ok(bins as usize)
}

/// Index of the width-`width` bin holding `d`; `d = 1` falls in the last bin.
pub fn bin_index(d: f64, width: f64) -> Result<usize> {
    let bins = bins_for_width(width)?;
    Ok(((d / width + 1e-9).floor().max(0.0) as usize).min(bins - 1))
}

/// Inverse-frequency weights per occupied bin: `n / (n_occupied * count)`.
pub fn bin_weights(d_values: &[f64], width: f64) -> Result<BTreeMap<usize, f64>> {
    if d_values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for d in d_values {
        *counts.entry(bin_index(*d, width)?).or_default() += 1;
    }
    let n = d_values.len() as f64;
    let occupied = counts.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(bin, c)| (bin, n / (occupied * c as f64)))
        .collect())
}

fn check_bins(bin_centers: &[f64], bin_probs: &[f64]) -> Result<()> {
    if bin_centers.len() != bin_probs.len() {
        return Err(Error::schema(
            None,
            format!("{} bin centers but {} probabilities", bin_centers.len(), bin_probs.len()),
        ));
    }
    Ok(())
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Ordering-aware bin loss: `sum_b |d - c_b|^psi p_b - tau H(p)`, with `H`
/// the natural-log entropy of the bin distribution.
pub fn r2ccp_loss(bin_centers: &[f64], bin_probs: &[f64], d: f64, cfg: &LossConfig) -> Result<f64> {
    check_bins(bin_centers, bin_probs)?;
    let distance: f64 = bin_centers
        .iter()
        .zip(bin_probs)
        .map(|(c, p)| (d - c).abs().powf(cfg.psi) * p)
        .sum();
    Ok(distance - cfg.tau * entropy(bin_probs))
}

/// Gradient of [`r2ccp_loss`] with respect to each bin probability.
pub fn r2ccp_grad_probs(bin_centers: &[f64], bin_probs: &[f64], d: f64, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_bins(bin_centers, bin_probs)?;
    Ok(bin_centers
        .iter()
        .zip(bin_probs)
        .map(|(c, p)| (d - c).abs().powf(cfg.psi) + cfg.tau * (p.max(PROB_CLAMP).ln() + 1.0))
        .collect())
}

/// Gradient of [`r2ccp_loss`] composed with a softmax, with respect to the logits.
pub fn r2ccp_grad_logits(bin_centers: &[f64], logits: &[f64], d: f64, cfg: &LossConfig) -> Result<Vec<f64>> {
    let probs = softmax(logits);
    let g = r2ccp_grad_probs(bin_centers, &probs, d, cfg)?;
    let mean: f64 = probs.iter().zip(&g).map(|(p, gi)| p * gi).sum();
    Ok(probs.iter().zip(&g).map(|(p, gi)| p * (gi - mean)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(gamma: f64) -> LossConfig {
        LossConfig {
            focal_gamma: gamma,
            ..LossConfig::default()
        }
    }

    #[test]
    fn focal_examples() {
        assert_abs_diff_eq!(focal_loss(0.5, Label::Toxic, &cfg(0.0)), std::f64::consts::LN_2, epsilon = 1e-12);
        // 0.1^2 * -ln 0.9
        assert_abs_diff_eq!(focal_loss(0.9, Label::Toxic, &cfg(2.0)), 0.0010536051565782628, epsilon = 1e-12);
        assert!(focal_loss(1.0 - 1e-13, Label::Toxic, &cfg(2.0)) < 1e-20);
        assert!(focal_loss(1.0, Label::Toxic, &cfg(0.0)).is_finite());
        assert!(focal_loss(0.0, Label::Toxic, &cfg(0.0)).is_finite());
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert_abs_diff_eq!(focal_loss(p, Label::Toxic, &cfg(0.0)), -p.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(focal_loss(p, Label::NonToxic, &cfg(0.0)), -(1.0 - p).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn regression_loss_examples() {
        assert_eq!(weighted_mse_loss(0.4, 0.4, 3.0), 0.0);
        assert_abs_diff_eq!(weighted_mse_loss(0.2, 0.5, 2.0), 0.18, epsilon = 1e-12);
        assert_abs_diff_eq!(weighted_bce_loss(0.5, 0.5, 1.0), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn bin_weight_examples() {
        let mut d = vec![0.05; 9];
        d.push(0.95);
        let w = bin_weights(&d, 0.1).unwrap();
        assert_abs_diff_eq!(w[&0], 10.0 / 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[&9], 5.0, epsilon = 1e-12);

        let w = bin_weights(&[0.05, 0.15, 0.25], 0.1).unwrap();
        assert!(w.values().all(|v| (*v - 1.0).abs() < 1e-12));
        assert_eq!(bin_weights(&[0.3, 0.31], 0.1).unwrap().values().copied().collect::<Vec<_>>(), vec![1.0]);
        assert_eq!(bin_weights(&[], 0.1), Err(Error::EmptyDataset));
        assert!(bin_weights(&[0.1], 0.3).is_err());
        assert_eq!(bin_index(1.0, 0.1).unwrap(), 9);
        assert_eq!(bin_index(0.3, 0.1).unwrap(), 3);
    }

    #[test]
    fn r2ccp_examples() {
        let c = LossConfig {
            psi: 1.0,
            tau: 0.0,
            ..LossConfig::default()
        };
        let centers = [0.25, 0.75];
        assert_abs_diff_eq!(r2ccp_loss(&centers, &[0.6, 0.4], 0.25, &c).unwrap(), 0.2, epsilon = 1e-12);
        let c = LossConfig { tau: 0.1, ..c };
        assert_abs_diff_eq!(r2ccp_loss(&centers, &[0.6, 0.4], 0.25, &c).unwrap(), 0.1327, epsilon = 1e-4);
        let c = LossConfig { tau: 0.0, ..c };
        assert_eq!(r2ccp_loss(&centers, &[1.0, 0.0], 0.25, &c).unwrap(), 0.0);
        assert!(r2ccp_loss(&centers, &[1.0], 0.25, &c).is_err());
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = ClassWeights::inverse_frequency([Label::Toxic, Label::NonToxic, Label::NonToxic, Label::NonToxic]);
        assert_abs_diff_eq!(w.toxic, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.nontoxic, 4.0 / 6.0, epsilon = 1e-12);
    }
}
