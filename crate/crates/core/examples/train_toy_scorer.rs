//! Train the multitask toy scorer in each regression mode and compare losses.

use comod::annotations::DisagreementMethod;
use comod::scorer::{mean_losses, predict_toy, train_toy, RegMode, TrainConfig, TrainSample};
use comod::simulator::{generate, SimConfig};

fn main() -> comod::Result<()> {
    let samples = |seed| -> comod::Result<Vec<TrainSample>> {
        generate(&SimConfig { n: 1500, seed, ..Default::default() })?
            .iter()
            .map(|s| {
                let l = s.labeled(DisagreementMethod::Distance)?;
                Ok(TrainSample { features: s.reg.features.clone().unwrap_or_default(), y: l.y, d: l.d })
            })
            .collect()
    };
    let train = samples(1)?;
    let held_out = samples(2)?;
    for mode in [RegMode::Bce, RegMode::Mse, RegMode::Rac] {
        let cfg = TrainConfig { reg_mode: mode, epochs: 150, seed: 7, ..Default::default() };
        let before = mean_losses(&comod::scorer::ToyModelParams::init(train[0].features.len(), &cfg), &held_out, &cfg)?;
        let params = train_toy(&train, &cfg)?;
        let after = mean_losses(&params, &held_out, &cfg)?;
        let (probs, reg) = predict_toy(&params, &held_out[0].features)?;
        println!(
            "{mode:?}: held-out class loss {:.4} -> {:.4}, reg loss {:.4} -> {:.4}; first item p_toxic {:.3}, d_hat {:.3}",
            before.classification, after.classification, before.regression, after.regression, probs.p_toxic, reg.d_hat
        );
    }
    Ok(())
}
