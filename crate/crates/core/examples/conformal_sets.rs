//! Prediction sets from the three classification calibrators on simulated scores.

use comod::annotations::DisagreementMethod;
use comod::conformal::{ClassCalibration, ClassMethod};
use comod::simulator::{generate, SimConfig};
use comod::types::{CalibrationItem, ClassProbs};

fn items(n: usize, seed: u64) -> comod::Result<Vec<CalibrationItem>> {
    generate(&SimConfig { n, seed, ..Default::default() })?
        .iter()
        .map(|s| s.calibration_item(DisagreementMethod::Distance))
        .collect()
}

fn main() -> comod::Result<()> {
    let cal = items(2000, 1)?;
    let test = items(2000, 2)?;
    let alpha = 0.1;
    for method in ClassMethod::ALL {
        let c = ClassCalibration::calibrate_items(method, &cal, alpha)?;
        let sets: Vec<_> = test.iter().map(|t| c.predict_set(&t.probs)).collect();
        let covered = test.iter().zip(&sets).filter(|(t, s)| s.contains(t.label)).count();
        let uncertain = sets.iter().filter(|s| s.is_uncertain()).count();
        println!(
            "{:<6} coverage {:.3}  uncertain {:>4}/{}  rule {:?}",
            method.name(),
            covered as f64 / test.len() as f64,
            uncertain,
            test.len(),
            c.rule
        );
        for p in [0.05, 0.3, 0.5, 0.7, 0.95] {
            let set: Vec<_> = c.predict_set(&ClassProbs::from_toxic(p)?).labels().map(|l| l.name()).collect();
            print!("  p={p}: {set:?}");
        }
        println!();
    }
    Ok(())
}
