use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use super::series::{ConsumptionSeries, neumaier_sum};
use crate::ids::PropertyType;

/// Days of history a feature row looks back over.
pub const MIN_HISTORY_DAYS: usize = 30;

pub const FEATURE_NAMES: [&str; 8] =
    ["lag_1", "lag_7", "lag_30", "roll_7", "roll_30", "day_of_week", "month", "property_type"];

/// One supervised example: features describing the days before `date`
/// and the daily total on `date` as the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub date: NaiveDate,
    pub lag_1: f64,
    pub lag_7: f64,
    pub lag_30: f64,
    pub roll_7: f64,
    pub roll_30: f64,
    pub day_of_week: u8,
    pub month: u8,
    pub property_type: u8,
    pub target: f64,
}

impl FeatureRow {
    /// Features for the day following `history`, which must hold at least
    /// [`MIN_HISTORY_DAYS`] values. `target` is left at zero.
    pub fn next_day(history: &[f64], date: NaiveDate, property_type: PropertyType) -> Self {
        let t = history.len();
        debug_assert!(t >= MIN_HISTORY_DAYS);
        let mean = |n: usize| neumaier_sum(history[t - n..].iter().copied()) / n as f64;
        FeatureRow {
            date,
            lag_1: history[t - 1],
            lag_7: history[t - 7],
            lag_30: history[t - 30],
            roll_7: mean(7),
            roll_30: mean(30),
            day_of_week: date.weekday().num_days_from_monday() as u8,
            month: date.month() as u8,
            property_type: property_type.code(),
            target: 0.0,
        }
    }

    pub fn features(&self) -> [f64; 8] {
        [
            self.lag_1,
            self.lag_7,
            self.lag_30,
            self.roll_7,
            self.roll_30,
            f64::from(self.day_of_week),
            f64::from(self.month),
            f64::from(self.property_type),
        ]
    }
}

/// Feature rows for every day that has a full 30-day lookback.
pub fn rows_from_daily(daily: &[(NaiveDate, f64)], property_type: PropertyType) -> Vec<FeatureRow> {
    let values: Vec<f64> = daily.iter().map(|d| d.1).collect();
    (MIN_HISTORY_DAYS..daily.len())
        .map(|t| FeatureRow {
            target: values[t],
            ..FeatureRow::next_day(&values[..t], daily[t].0, property_type)
        })
        .collect()
}

pub fn build_features(series: &ConsumptionSeries) -> Result<Vec<FeatureRow>, AnalyticsError> {
    let daily = series.daily_totals();
    if daily.len() <= MIN_HISTORY_DAYS {
        return Err(AnalyticsError::SeriesTooShort { needed: MIN_HISTORY_DAYS + 1, got: daily.len() });
    }
    Ok(rows_from_daily(&daily, series.property_type))
}
