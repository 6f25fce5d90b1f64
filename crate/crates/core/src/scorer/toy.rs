//! A small multitask scorer: one shared linear layer feeding a toxicity head
//! and a disagreement head, trained by full-batch gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    bin_index, bin_weights, focal_loss, focal_loss_grad, r2ccp_grad_logits, r2ccp_loss, sigmoid, softmax,
    weighted_bce_grad, weighted_bce_loss, weighted_mse_grad, weighted_mse_loss, ClassWeights, LossConfig,
};
use crate::error::{Error, Result};
use crate::types::{bin_centers, ClassProbs, Label, RegOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    Bce,
    Mse,
    Rac,
}

impl std::str::FromStr for RegMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(RegMode::Bce),
            "mse" => Ok(RegMode::Mse),
            "rac" | "r2ccp" => Ok(RegMode::Rac),
            other => Err(Error::Config(format!("unknown regression mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub features: Vec<f64>,
    pub y: Label,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub reg_mode: RegMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Number of disagreement bins for the RAC head.
    pub bins: usize,
    /// Replace `loss.class_weights` with inverse class frequencies of the data.
    pub inverse_class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            reg_mode: RegMode::Mse,
            epochs: 200,
            learning_rate: 0.5,
            seed: 0,
            hidden: 8,
            bins: 20,
            inverse_class_weights: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    /// `features x hidden`.
    pub shared_weights: Vec<Vec<f64>>,
    pub class_head: Vec<f64>,
    pub class_bias: f64,
    /// `hidden x outputs`: one output for BCE/MSE, one per bin for RAC.
    pub reg_head: Vec<Vec<f64>>,
    pub reg_bias: Vec<f64>,
    pub reg_mode: RegMode,
    pub bin_centers: Vec<f64>,
    pub seed: u64,
}

/// Mean per-task training losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub classification: f64,
    pub regression: f64,
}

impl TaskLosses {
    pub fn total(&self) -> f64 {
        self.classification + self.regression
    }
}

struct Forward {
    hidden: Vec<f64>,
    z_class: f64,
    p_toxic: f64,
    reg_logits: Vec<f64>,
}

impl ToyModelParams {
    /// Random shared layer, zero heads: every input initially scores 0.5.
    pub fn init(n_features: usize, cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (n_features.max(1) as f64).sqrt();
        let shared_weights = (0..n_features)
            .map(|_| (0..cfg.hidden).map(|_| rng.random_range(-scale..scale)).collect())
            .collect();
        let outputs = match cfg.reg_mode {
            RegMode::Rac => cfg.bins,
            RegMode::Bce | RegMode::Mse => 1,
        };
        ToyModelParams {
            shared_weights,
            class_head: vec![0.0; cfg.hidden],
            class_bias: 0.0,
            reg_head: vec![vec![0.0; outputs]; cfg.hidden],
            reg_bias: vec![0.0; outputs],
            reg_mode: cfg.reg_mode,
            bin_centers: match cfg.reg_mode {
                RegMode::Rac => bin_centers(cfg.bins),
                _ => Vec::new(),
            },
            seed: cfg.seed,
        }
    }

    pub fn n_features(&self) -> usize {
        self.shared_weights.len()
    }

    fn hidden_dim(&self) -> usize {
        self.class_head.len()
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.n_features() {
            return Err(Error::schema(
                None,
                format!("expected {} features, got {}", self.n_features(), x.len()),
            ));
        }
        let mut hidden = vec![0.0; self.hidden_dim()];
        for (xi, row) in x.iter().zip(&self.shared_weights) {
            for (h, w) in hidden.iter_mut().zip(row) {
                *h += xi * w;
            }
        }
        let z_class = self.class_bias + hidden.iter().zip(&self.class_head).map(|(h, c)| h * c).sum::<f64>();
        let mut reg_logits = self.reg_bias.clone();
        for (h, row) in hidden.iter().zip(&self.reg_head) {
            for (z, r) in reg_logits.iter_mut().zip(row) {
                *z += h * r;
            }
        }
        Ok(Forward {
            hidden,
            z_class,
            p_toxic: sigmoid(z_class),
            reg_logits,
        })
    }
}

/// Scores one feature vector.
pub fn predict_toy(params: &ToyModelParams, features: &[f64]) -> Result<(ClassProbs, RegOutput)> {
    let fwd = params.forward(features)?;
    let probs = ClassProbs::from_toxic(fwd.p_toxic)?;
    let reg = match params.reg_mode {
        RegMode::Bce | RegMode::Mse => RegOutput {
            d_hat: sigmoid(fwd.reg_logits[0]),
            bin_probs: None,
            features: Some(features.to_vec()),
        },
        RegMode::Rac => {
            let bins = softmax(&fwd.reg_logits);
            let d_hat = bins.iter().zip(&params.bin_centers).map(|(p, c)| p * c).sum::<f64>();
            RegOutput {
                d_hat: d_hat.clamp(0.0, 1.0),
                bin_probs: Some(bins),
                features: Some(features.to_vec()),
            }
        }
    };
    Ok((probs, reg))
}

fn sample_weights(data: &[TrainSample], cfg: &TrainConfig) -> Result<(LossConfig, Vec<f64>)> {
    let mut loss = cfg.loss;
    if cfg.inverse_class_weights {
        loss.class_weights = ClassWeights::inverse_frequency(data.iter().map(|s| s.y));
    }
    let reg_weights = match cfg.reg_mode {
        RegMode::Rac => vec![1.0; data.len()],
        RegMode::Bce | RegMode::Mse => {
            let d: Vec<f64> = data.iter().map(|s| s.d).collect();
            let table = bin_weights(&d, loss.reg_bin_width)?;
            d.iter()
                .map(|v| Ok(table[&bin_index(*v, loss.reg_bin_width)?]))
                .collect::<Result<_>>()?
        }
    };
    Ok((loss, reg_weights))
}

fn validate(data: &[TrainSample], cfg: &TrainConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.loss.validate()?;
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden width must be positive".into()));
    }
    if cfg.reg_mode == RegMode::Rac && cfg.bins < 2 {
        return Err(Error::Config("RAC head needs at least 2 bins".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let dim = data[0].features.len();
    for (i, s) in data.iter().enumerate() {
        if s.features.len() != dim {
            return Err(Error::schema(Some(i + 1), "inconsistent feature dimension"));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(Some(i + 1), "non-finite feature"));
        }
        if !(0.0..=1.0).contains(&s.d) {
            return Err(Error::Domain {
                value: s.d,
                reason: "disagreement must lie in [0, 1]",
            });
        }
    }
    Ok(())
}

fn sample_losses(params: &ToyModelParams, fwd: &Forward, s: &TrainSample, loss: &LossConfig, w: f64) -> Result<(f64, f64)> {
    let class = focal_loss(fwd.p_toxic, s.y, loss);
    let reg = match params.reg_mode {
        RegMode::Bce => weighted_bce_loss(sigmoid(fwd.reg_logits[0]), s.d, w),
        RegMode::Mse => weighted_mse_loss(sigmoid(fwd.reg_logits[0]), s.d, w),
        RegMode::Rac => r2ccp_loss(&params.bin_centers, &softmax(&fwd.reg_logits), s.d, loss)?,
    };
    Ok((class, reg))
}

/// Mean classification and regression losses of `params` on `data`.
pub fn mean_losses(params: &ToyModelParams, data: &[TrainSample], cfg: &TrainConfig) -> Result<TaskLosses> {
    validate(data, cfg)?;
    let (loss, weights) = sample_weights(data, cfg)?;
    let (mut c, mut r) = (0.0, 0.0);
    for (s, w) in data.iter().zip(&weights) {
        let fwd = params.forward(&s.features)?;
        let (lc, lr) = sample_losses(params, &fwd, s, &loss, *w)?;
        c += lc;
        r += lr;
    }
    let n = data.len() as f64;
    Ok(TaskLosses {
        classification: c / n,
        regression: r / n,
    })
}

/// Full-batch gradient descent on focal loss plus the selected regression
/// loss, summed with unit task weights. Deterministic given `cfg.seed`.
pub fn train_toy(data: &[TrainSample], cfg: &TrainConfig) -> Result<ToyModelParams> {
    validate(data, cfg)?;
    let (loss, weights) = sample_weights(data, cfg)?;
    let mut params = ToyModelParams::init(data[0].features.len(), cfg);
    let n = data.len() as f64;
    let (f_dim, h_dim, o_dim) = (params.n_features(), params.hidden_dim(), params.reg_bias.len());

    for epoch in 0..cfg.epochs {
        let mut g_shared = vec![vec![0.0; h_dim]; f_dim];
        let mut g_class = vec![0.0; h_dim];
        let mut g_class_bias = 0.0;
        let mut g_reg = vec![vec![0.0; o_dim]; h_dim];
        let mut g_reg_bias = vec![0.0; o_dim];
        let mut total = 0.0;

        for (s, w) in data.iter().zip(&weights) {
            let fwd = params.forward(&s.features)?;
            if !fwd.z_class.is_finite() || fwd.reg_logits.iter().any(|z| !z.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            let (lc, lr) = sample_losses(&params, &fwd, s, &loss, *w)?;
            total += lc + lr;

            let p = fwd.p_toxic;
            let delta_class = focal_loss_grad(p, s.y, &loss) * p * (1.0 - p);
            let delta_reg: Vec<f64> = match params.reg_mode {
                RegMode::Bce => {
                    let d_hat = sigmoid(fwd.reg_logits[0]);
                    vec![weighted_bce_grad(d_hat, s.d, *w) * d_hat * (1.0 - d_hat)]
                }
                RegMode::Mse => {
                    let d_hat = sigmoid(fwd.reg_logits[0]);
                    vec![weighted_mse_grad(d_hat, s.d, *w) * d_hat * (1.0 - d_hat)]
                }
                RegMode::Rac => r2ccp_grad_logits(&params.bin_centers, &fwd.reg_logits, s.d, &loss)?,
            };

            g_class_bias += delta_class;
            for j in 0..h_dim {
                g_class[j] += fwd.hidden[j] * delta_class;
                let mut g_hidden = params.class_head[j] * delta_class;
                for b in 0..o_dim {
                    g_reg[j][b] += fwd.hidden[j] * delta_reg[b];
                    g_hidden += params.reg_head[j][b] * delta_reg[b];
                }
                for (i, xi) in s.features.iter().enumerate() {
                    g_shared[i][j] += xi * g_hidden;
                }
            }
            for b in 0..o_dim {
                g_reg_bias[b] += delta_reg[b];
            }
        }

        if !total.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        let step = cfg.learning_rate / n;
        for (row, grow) in params.shared_weights.iter_mut().zip(&g_shared) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= step * g;
            }
        }
        for (c, g) in params.class_head.iter_mut().zip(&g_class) {
            *c -= step * g;
        }
        params.class_bias -= step * g_class_bias;
        for (row, grow) in params.reg_head.iter_mut().zip(&g_reg) {
            for (r, g) in row.iter_mut().zip(grow) {
                *r -= step * g;
            }
        }
        for (b, g) in params.reg_bias.iter_mut().zip(&g_reg_bias) {
            *b -= step * g;
        }

        let finite = params.shared_weights.iter().flatten().all(|v| v.is_finite())
            && params.class_head.iter().all(|v| v.is_finite())
            && params.reg_head.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64 * 2.0 - 1.0;
                TrainSample {
                    features: vec![x, 1.0],
                    y: if x > 0.0 { Label::Toxic } else { Label::NonToxic },
                    d: (1.0 - x.abs()).clamp(0.0, 1.0),
                }
            })
            .collect()
    }

    #[test]
    fn zero_heads_predict_one_half() {
        let cfg = TrainConfig::default();
        let params = ToyModelParams::init(3, &cfg);
        let (p, r) = predict_toy(&params, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p.p_toxic, 0.5);
        assert_eq!(r.d_hat, 0.5);
    }

    #[test]
    fn rac_point_mass_gives_center() {
        let cfg = TrainConfig {
            reg_mode: RegMode::Rac,
            bins: 5,
            ..TrainConfig::default()
        };
        let mut params = ToyModelParams::init(1, &cfg);
        // Center 0.7 is bin 3 of 5.
        params.reg_bias = vec![-800.0, -800.0, -800.0, 800.0, -800.0];
        let (_, r) = predict_toy(&params, &[0.0]).unwrap();
        assert!((r.d_hat - 0.7).abs() < 1e-12);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        for mode in [RegMode::Bce, RegMode::Mse, RegMode::Rac] {
            let cfg = TrainConfig {
                reg_mode: mode,
                epochs: 30,
                ..TrainConfig::default()
            };
            let params = train_toy(&separable(40), &cfg).unwrap();
            for x in [-50.0, -1.0, 0.0, 1.0, 50.0] {
                let (p, r) = predict_toy(&params, &[x, 1.0]).unwrap();
                assert!((0.0..=1.0).contains(&p.p_toxic));
                assert!((0.0..=1.0).contains(&r.d_hat));
            }
        }
    }

    #[test]
    fn training_reduces_classification_loss() {
        let data = separable(60);
        for mode in [RegMode::Bce, RegMode::Mse, RegMode::Rac] {
            let cfg = TrainConfig {
                reg_mode: mode,
                epochs: 200,
                ..TrainConfig::default()
            };
            let init = ToyModelParams::init(2, &cfg);
            let before = mean_losses(&init, &data, &cfg).unwrap();
            let trained = train_toy(&data, &cfg).unwrap();
            let after = mean_losses(&trained, &data, &cfg).unwrap();
            assert!(
                after.classification < before.classification,
                "{mode:?}: {before:?} -> {after:?}"
            );
            assert!(after.total() < before.total());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 20,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train_toy(&separable(30), &cfg).unwrap();
        let b = train_toy(&separable(30), &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn error_paths() {
        let cfg = TrainConfig::default();
        assert_eq!(train_toy(&[], &cfg), Err(Error::EmptyDataset));
        let params = ToyModelParams::init(2, &cfg);
        assert!(matches!(predict_toy(&params, &[1.0]), Err(Error::Schema { .. })));
        let huge = TrainConfig {
            learning_rate: 1e200,
            epochs: 50,
            ..TrainConfig::default()
        };
        let data: Vec<TrainSample> = separable(20)
            .into_iter()
            .map(|mut s| {
                s.features[0] *= 1e100;
                s
            })
            .collect();
        assert!(matches!(train_toy(&data, &huge), Err(Error::Divergence { .. })));
    }
}
