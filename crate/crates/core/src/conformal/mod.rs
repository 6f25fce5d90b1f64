//! Split-conformal calibration for the toxicity classifier and the
//! disagreement regressor.

pub mod classification;
pub mod quantile;
pub mod regression;

pub use classification::{ClassCalibration, ClassMethod, ClassRule};
pub use quantile::conformal_quantile;
pub use regression::{KnnResidualModel, RegCalibration, RegMethod, RegOptions, RegRule};
