//! Disagreement intervals from the four regression calibrators.

use comod::annotations::DisagreementMethod;
use comod::conformal::{RegCalibration, RegMethod, RegOptions};
use comod::simulator::{generate, SimConfig};
use comod::types::CalibrationItem;

fn items(n: usize, seed: u64) -> comod::Result<Vec<CalibrationItem>> {
    generate(&SimConfig { n, seed, ..Default::default() })?
        .iter()
        .map(|s| s.calibration_item(DisagreementMethod::Distance))
        .collect()
}

fn main() -> comod::Result<()> {
    let cal = items(2000, 3)?;
    let test = items(2000, 4)?;
    for method in RegMethod::ALL {
        let c = RegCalibration::calibrate_items(method, &cal, 0.1, &RegOptions::default())?;
        let ivs = test.iter().map(|t| c.interval(&t.reg)).collect::<comod::Result<Vec<_>>>()?;
        let icp = test.iter().zip(&ivs).filter(|(t, iv)| iv.contains(t.d)).count() as f64 / test.len() as f64;
        let width = ivs.iter().map(|iv| iv.width()).sum::<f64>() / ivs.len() as f64;
        let first = &ivs[0];
        println!(
            "{:<6} q_hat {:>8.4}  ICP {:.3}  mean width {:.3}  first [{:.3}, {:.3}] (d = {:.3})",
            method.name(),
            c.q_hat(),
            icp,
            width,
            first.lo,
            first.hi,
            test[0].d
        );
    }
    Ok(())
}
