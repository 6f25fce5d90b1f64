//! How the ambiguity threshold gamma moves comments between auto-action and review.

use comod::annotations::DisagreementMethod;
use comod::conformal::{ClassMethod, RegMethod, RegOptions};
use comod::platform::engine::CalibrationState;
use comod::router::{Pipeline, RoutingPolicy};
use comod::simulator::{generate, SimConfig};
use comod::types::CalibrationItem;

fn main() -> comod::Result<()> {
    let cal: Vec<CalibrationItem> = generate(&SimConfig { n: 2000, seed: 5, ..Default::default() })?
        .iter()
        .map(|s| s.calibration_item(DisagreementMethod::Distance))
        .collect::<comod::Result<_>>()?;
    let incoming: Vec<_> = generate(&SimConfig { n: 500, seed: 6, ..Default::default() })?
        .iter()
        .map(|s| s.scored())
        .collect();

    let base = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Rn, RoutingPolicy::default(), RegOptions::default())?;
    println!("{:>5} {:>7} {:>7} {:>9} {:>10}", "gamma", "review", "auto", "uncertain", "ambiguous");
    for gamma in [1.0, 0.9, 0.8, 0.7, 0.6, 0.5] {
        let mut view = base.view();
        view.gamma = gamma;
        let state = base.updated(view, None)?;
        let (_, s) = state.route(&incoming)?;
        println!(
            "{:>5.1} {:>7} {:>7} {:>9} {:>10}",
            gamma,
            s.review,
            s.auto,
            s.by_reason.get("uncertain").unwrap_or(&0),
            s.by_reason.get("ambiguous").unwrap_or(&0)
        );
    }

    let stl = RoutingPolicy::new(0.8, 0.1, Pipeline::Stl)?;
    let state = CalibrationState::calibrate(&cal, ClassMethod::Lac, RegMethod::Ar, stl, RegOptions::default())?;
    let (decisions, s) = state.route(&incoming)?;
    println!("classifier only: {} of {} to review", s.review, s.total);
    println!("first decision: {}", serde_json::to_string(&decisions[0]).unwrap_or_default());
    Ok(())
}
