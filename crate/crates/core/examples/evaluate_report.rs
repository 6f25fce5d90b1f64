//! The full metrics report for each classification/regression calibrator pair.

use comod::annotations::DisagreementMethod;
use comod::conformal::{ClassMethod, RegMethod, RegOptions};
use comod::platform::engine::{CalibrationState, LabeledItem};
use comod::router::RoutingPolicy;
use comod::simulator::{generate, SimConfig};

fn labeled(n: usize, seed: u64) -> comod::Result<Vec<LabeledItem>> {
    generate(&SimConfig { n, seed, ..Default::default() })?
        .iter()
        .map(|s| Ok(LabeledItem { id: s.record.id.clone(), item: s.calibration_item(DisagreementMethod::Distance)? }))
        .collect()
}

fn main() -> comod::Result<()> {
    let cal: Vec<_> = labeled(2000, 8)?.into_iter().map(|l| l.item).collect();
    let test = labeled(2000, 9)?;
    let state = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Rn, RoutingPolicy::default(), RegOptions::default())?;
    print!("{}", state.evaluate(&test, None)?.to_table());

    println!("\nreview F1 by method pair:");
    for cm in ClassMethod::ALL {
        for rm in RegMethod::ALL {
            let s = CalibrationState::calibrate(&cal, cm, rm, RoutingPolicy::default(), RegOptions::default())?;
            let r = s.evaluate(&test, None)?;
            println!("  {:<6} {:<6} {}", cm.name(), rm.name(), r.review_f1);
        }
    }
    Ok(())
}
