//! Synthetic annotator populations with synthetic scorer outputs.
//!
//! Each item draws a toxicity propensity `pi` from a Beta mixture, a number of
//! annotators uniformly from `[annotators_min, annotators_max]`, and
//! Bernoulli(`pi`) votes. Scorer outputs are derived from `pi` and the
//! empirical disagreement with controllable noise, so calibration and test
//! data are exchangeable by construction.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Normal};
use serde::{Deserialize, Serialize};

use crate::annotations::{build_labeled, AnnotationRecord, DisagreementMethod, LabeledInstance};
use crate::error::{Error, Result};
use crate::scorer::losses::sigmoid;
use crate::types::{bin_centers, CalibrationItem, ClassProbs, RegOutput, ScoredInstance};

/// Identifier recorded in dataset manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

const LOGIT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n: usize,
    pub annotators_min: usize,
    pub annotators_max: usize,
    pub propensity_mixture: Vec<MixtureComponent>,
    /// Gaussian noise on the classifier logit.
    pub score_noise_sd: f64,
    /// Divides the logit; values above 1 flatten the probabilities.
    pub temperature: f64,
    /// Gaussian noise on the disagreement estimate.
    pub reg_noise_sd: f64,
    /// Number of noisy propensity covariates appended to the feature vector.
    pub feature_dim: usize,
    pub covariate_noise_sd: f64,
    pub bins: usize,
    /// Standard deviation of the bump placed over the bins; 0 gives a one-hot.
    pub bin_spread: f64,
    pub method: DisagreementMethod,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            n: 1000,
            annotators_min: 10,
            annotators_max: 15,
            propensity_mixture: vec![
                MixtureComponent {
                    weight: 0.5,
                    beta_a: 2.0,
                    beta_b: 5.0,
                },
                MixtureComponent {
                    weight: 0.5,
                    beta_a: 5.0,
                    beta_b: 2.0,
                },
            ],
            score_noise_sd: 0.5,
            temperature: 1.0,
            reg_noise_sd: 0.1,
            feature_dim: 3,
            covariate_noise_sd: 0.1,
            bins: 20,
            bin_spread: 0.1,
            method: DisagreementMethod::Distance,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.annotators_min == 0 || self.annotators_max < self.annotators_min {
            return bad(format!(
                "annotator range [{}, {}] is invalid",
                self.annotators_min, self.annotators_max
            ));
        }
        if self.propensity_mixture.is_empty() {
            return bad("propensity mixture is empty".into());
        }
        for c in &self.propensity_mixture {
            if !(c.weight > 0.0) || !(c.beta_a > 0.0) || !(c.beta_b > 0.0) {
                return bad(format!("mixture component {c:?} needs positive weight and shape parameters"));
            }
        }
        let total: f64 = self.propensity_mixture.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights sum to {total}, not 1"));
        }
        for (name, v) in [
            ("score_noise_sd", self.score_noise_sd),
            ("reg_noise_sd", self.reg_noise_sd),
            ("covariate_noise_sd", self.covariate_noise_sd),
            ("bin_spread", self.bin_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        if self.bins < 2 {
            return bad("at least two bins are required".into());
        }
        Ok(())
    }

    /// True when the scorer outputs reproduce `pi` and `d` exactly.
    fn noise_free(&self) -> bool {
        self.temperature == 1.0 && self.score_noise_sd == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimItem {
    pub record: AnnotationRecord,
    pub propensity: f64,
    pub probs: ClassProbs,
    pub reg: RegOutput,
}

impl SimItem {
    pub fn labeled(&self, method: DisagreementMethod) -> Result<LabeledInstance> {
        build_labeled(&self.record, method)
    }

    pub fn scored(&self) -> ScoredInstance {
        ScoredInstance {
            id: self.record.id.clone(),
            probs: self.probs,
            reg: self.reg.clone(),
        }
    }

    pub fn calibration_item(&self, method: DisagreementMethod) -> Result<CalibrationItem> {
        let l = self.labeled(method)?;
        Ok(CalibrationItem {
            probs: self.probs,
            reg: self.reg.clone(),
            label: l.y,
            d: l.d,
        })
    }
}

fn bump(centers: &[f64], mean: f64, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        return (0..centers.len()).map(|i| if i == nearest { 1.0 } else { 0.0 }).collect();
    }
    let w: Vec<f64> = centers
        .iter()
        .map(|c| (-(c - mean).powi(2) / (2.0 * sd * sd)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn generate(config: &SimConfig) -> Result<Vec<SimItem>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pick = WeightedIndex::new(config.propensity_mixture.iter().map(|c| c.weight))
        .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
    let betas = config
        .propensity_mixture
        .iter()
        .map(|c| Beta::new(c.beta_a, c.beta_b).map_err(|e| Error::Config(format!("beta parameters: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| Error::Config(format!("noise: {e}")));
    let score_noise = normal(config.score_noise_sd)?;
    let reg_noise = normal(config.reg_noise_sd)?;
    let cov_noise = normal(config.covariate_noise_sd)?;
    let centers = bin_centers(config.bins);
    let width = (config.n.max(1) - 1).to_string().len().max(6);

    let mut items = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let pi: f64 = betas[pick.sample(&mut rng)].sample(&mut rng);
        let m = rng.random_range(config.annotators_min..=config.annotators_max);
        let votes: Vec<u8> = (0..m).map(|_| u8::from(rng.random::<f64>() < pi)).collect();
        let mut record = AnnotationRecord::new(format!("c{i:0width$}"), votes);
        record.text = Some(format!("synthetic comment {i}"));
        let d = build_labeled(&record, config.method)?.d;

        let z_noise = score_noise.sample(&mut rng);
        let p_toxic = if config.noise_free() {
            pi
        } else {
            let p = pi.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
            sigmoid((p / (1.0 - p)).ln() / config.temperature + z_noise)
        };
        let d_hat = (d + reg_noise.sample(&mut rng)).clamp(0.0, 1.0);
        let mut features = vec![d_hat];
        features.extend((0..config.feature_dim).map(|_| pi + cov_noise.sample(&mut rng)));

        items.push(SimItem {
            record,
            propensity: pi,
            probs: ClassProbs::from_toxic(p_toxic)?,
            reg: RegOutput {
                d_hat,
                bin_probs: Some(bump(&centers, d_hat, config.bin_spread)),
                features: Some(features),
            },
        });
    }
    Ok(items)
}

/// Seeded shuffle, then consecutive partition into train, calibration and test.
pub fn split<T>(mut data: Vec<T>, fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * a).round() as usize;
    let n_cal = ((n as f64 * b).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_cal == 0 || n_train + n_cal >= n {
        return Err(Error::Config(format!("split of {n} items leaves an empty part")));
    }
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = data.split_off(n_train + n_cal);
    let cal = data.split_off(n_train);
    Ok((data, cal, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = SimConfig {
            n: 50,
            seed: 7,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SimConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn noise_free_limit() {
        let cfg = SimConfig {
            n: 200,
            score_noise_sd: 0.0,
            reg_noise_sd: 0.0,
            temperature: 1.0,
            ..Default::default()
        };
        for item in generate(&cfg).unwrap() {
            assert_eq!(item.probs.p_toxic, item.propensity);
            let d = item.labeled(cfg.method).unwrap().d;
            assert_eq!(item.reg.d_hat, d);
        }
    }

    #[test]
    fn outputs_satisfy_invariants() {
        let items = generate(&SimConfig {
            n: 300,
            bin_spread: 0.0,
            ..Default::default()
        })
        .unwrap();
        for item in &items {
            item.reg.validate().unwrap();
            let m = item.record.votes.len();
            assert!((10..=15).contains(&m));
            assert_eq!(item.reg.features.as_ref().unwrap().len(), 4);
        }
    }

    #[test]
    fn beta_half_half_mean_disagreement() {
        // Midpoint rule over the Beta(0.5, 0.5) density with the substitution
        // pi = sin^2(t), which removes the endpoint singularities: the density
        // becomes uniform in t on [0, pi/2].
        let steps = 100_000;
        let h = std::f64::consts::FRAC_PI_2 / steps as f64;
        let oracle: f64 = (0..steps)
            .map(|k| {
                let t = (k as f64 + 0.5) * h;
                let p = t.sin().powi(2);
                (1.0 - 2.0 * (p - 0.5).abs()) * h
            })
            .sum::<f64>()
            / std::f64::consts::FRAC_PI_2;
        assert!((oracle - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-6);

        let cfg = SimConfig {
            n: 2000,
            annotators_min: 400,
            annotators_max: 400,
            propensity_mixture: vec![MixtureComponent {
                weight: 1.0,
                beta_a: 0.5,
                beta_b: 0.5,
            }],
            ..Default::default()
        };
        let items = generate(&cfg).unwrap();
        let mean = items
            .iter()
            .map(|i| i.labeled(cfg.method).unwrap().d)
            .sum::<f64>()
            / items.len() as f64;
        assert!((mean - oracle).abs() < 0.05, "mean {mean} oracle {oracle}");
    }

    #[test]
    fn vote_mean_converges() {
        let cfg = SimConfig {
            n: 500,
            annotators_min: 200,
            annotators_max: 200,
            ..Default::default()
        };
        let items = generate(&cfg).unwrap();
        let close = items
            .iter()
            .filter(|i| (i.labeled(cfg.method).unwrap().a_mean - i.propensity).abs() <= 0.1)
            .count();
        assert!(close as f64 >= 0.99 * items.len() as f64);
    }

    #[test]
    fn invalid_configs() {
        let base = SimConfig::default();
        let mut c = base.clone();
        c.propensity_mixture[0].weight = 0.7;
        assert!(matches!(generate(&c), Err(Error::Config(_))));
        assert!(generate(&SimConfig { annotators_min: 0, ..base.clone() }).is_err());
        assert!(generate(&SimConfig { temperature: 0.0, ..base }).is_err());
    }

    #[test]
    fn split_examples() {
        let data: Vec<usize> = (0..10).collect();
        let (a, b, c) = split(data.clone(), (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        assert_eq!(split(data.clone(), (0.6, 0.2, 0.2), 3).unwrap(), (a.clone(), b.clone(), c.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
        all.sort();
        assert_eq!(all, data);
        assert!(split(vec![1, 2], (0.6, 0.2, 0.2), 0).is_err());
        assert!(split(data, (0.5, 0.5, 0.0), 0).is_err());
    }
}
