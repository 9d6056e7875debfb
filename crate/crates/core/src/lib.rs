//! Load-shifting recommendations for household appliances.
//!
//! The crate turns appliance-level hourly consumption and day-ahead prices into
//! one suggested start hour per shiftable device and day. Recommendations are
//! produced by a small set of cooperating agents:
//!
//! * [`agents::price_vector`] slices the price curve for the recommendation day,
//! * [`prepare`] derives availability/usage targets and usage runs,
//! * [`agents::LoadAgent`] maintains typical load profiles,
//! * [`agents::forecast_availability`] / [`agents::forecast_usage`] fit logistic
//!   models on history strictly before the recommendation day,
//! * [`agents::recommend`] picks the cheapest admissible start hour.
//!
//! [`eval`] replays the pipeline day by day and scores it (pooled AUC, load MSE,
//! cold-start days, acceptability and cost savings, threshold grid search).

pub mod agents;
pub mod core;
pub mod eval;
pub mod ingest;
pub mod learn;
pub mod prepare;

pub use crate::core::{
    hour_range, ActivityMatrix, CoreError, DailyUsageTargets, DeviceRole, DeviceSpec, HourStamp,
    HourlyLoadSeries, PriceCurve, Recommendation, Thresholds, TypicalLoadProfile, UsageRun,
};
