//! Property-level consumption analytics: hourly series, calendar
//! aggregation, lag/rolling/seasonal features, a gradient-boosted tree
//! forecaster, the seasonal-naive baseline and subsidy tiers.

mod aggregate;
mod features;
mod forecast;
pub mod gbdt;
mod series;
mod subsidy;

pub use aggregate::{AggregateView, Bucket, Granularity, aggregate};
pub use features::{FEATURE_NAMES, FeatureRow, MIN_HISTORY_DAYS, build_features, rows_from_daily};
pub use forecast::{
    MIN_TRAINING_ROWS,
    ForecastModel, ForecastPoint, TrainingReport, forecast, mape, seasonal_naive, train_forecaster,
};
pub use gbdt::{Ensemble, Hyperparams};
pub use series::{ConsumptionSeries, neumaier_sum};
pub use subsidy::{TRAILING_HOURS, SubsidyThresholds, Tier, TierAssessment, subsidy_tier};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("series is empty")]
    EmptySeries,
    #[error("series needs at least {needed} days, has {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("start must precede end")]
    InvalidRange,
    #[error("timestamp not on an hour boundary")]
    NotHourAligned,
    #[error("reading {0} breaks hourly spacing")]
    Gap(usize),
    #[error("reading {0} is negative or not finite")]
    BadReading(usize),
    #[error("need at least {needed} feature rows, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("horizon must be at least one day")]
    BadHorizon,
}
