//! Two-step multi-resolution influenza nowcasting.
//!
//! The first step regresses logit %ILI on log search volumes with an L1
//! penalty, separately at state, regional and national resolution. The second
//! step pools the three raw estimates and last week's increment through a
//! best linear predictor with structured, shrunk covariance.

pub mod backtest;
pub mod enrichment;
pub mod epiweek;
pub mod error;
pub mod first_step;
pub mod evaluation;
pub mod geo;
pub mod ingest;
pub mod lasso;
pub mod linalg;
pub mod panel;
pub mod routing;
pub mod second_step;
pub mod synth;

pub use epiweek::EpiWeek;
pub use error::{Error, Result};
pub use geo::{GeoId, GeoRegistry};
pub use panel::{FeaturePanel, WeeklyPanel};
