use alloc::vec::Vec;

use chrono::{NaiveDate, TimeDelta};
use serde::{Deserialize, Serialize};

use super::features::{FeatureRow, MIN_HISTORY_DAYS, build_features};
use super::gbdt::{self, Ensemble, Hyperparams};
use super::series::ConsumptionSeries;
use super::AnalyticsError;
use crate::ids::PropertyType;

/// Fewest feature rows accepted for training.
pub const MIN_TRAINING_ROWS: usize = 60;

/// Share of rows, taken chronologically from the front, used for fitting.
const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub date: NaiveDate,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub train_rows: usize,
    pub validation_rows: usize,
    /// Model MAPE on the held-out tail, as a fraction.
    pub validation_mape: f64,
    /// Seasonal-naive MAPE on the same tail.
    pub baseline_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub property_type: PropertyType,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    ensemble: Ensemble,
}

impl ForecastModel {
    pub fn predict_row(&self, row: &FeatureRow) -> f64 {
        self.ensemble.predict(&row.features()).max(0.0)
    }
}

/// Mean absolute percentage error as a fraction. Points whose actual value
/// is zero are skipped; returns NaN when every point is skipped.
pub fn mape(actual: &[f64], predicted: &[f64]) -> f64 {
    let (sum, n) = actual
        .iter()
        .zip(predicted)
        .filter(|(a, _)| **a != 0.0)
        .fold((0.0, 0usize), |(s, n), (a, p)| (s + ((a - p) / a).abs(), n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

/// Fits on the first 80% of rows and reports error on the rest. The
/// seasonal-naive prediction for a row is its own `lag_7`.
pub fn train_forecaster(
    series: &ConsumptionSeries,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<(ForecastModel, TrainingReport), AnalyticsError> {
    let rows = build_features(series)?;
    if rows.len() < MIN_TRAINING_ROWS {
        return Err(AnalyticsError::InsufficientData { needed: MIN_TRAINING_ROWS, got: rows.len() });
    }
    let split = libm::floor(rows.len() as f64 * TRAIN_FRACTION) as usize;
    let (train, validation) = rows.split_at(split);
    let x: Vec<Vec<f64>> = train.iter().map(|r| r.features().to_vec()).collect();
    let y: Vec<f64> = train.iter().map(|r| r.target).collect();
    let model = ForecastModel {
        property_type: series.property_type,
        hyperparams: *hyperparams,
        seed,
        ensemble: gbdt::fit(&x, &y, hyperparams, seed),
    };
    let actual: Vec<f64> = validation.iter().map(|r| r.target).collect();
    let predicted: Vec<f64> = validation.iter().map(|r| model.predict_row(r)).collect();
    let naive: Vec<f64> = validation.iter().map(|r| r.lag_7).collect();
    let report = TrainingReport {
        train_rows: train.len(),
        validation_rows: validation.len(),
        validation_mape: mape(&actual, &predicted),
        baseline_mape: mape(&actual, &naive),
    };
    Ok((model, report))
}

/// Daily totals for the `horizon` days after the last complete day,
/// feeding each prediction back in as history.
pub fn forecast(
    model: &ForecastModel,
    series: &ConsumptionSeries,
    horizon: usize,
) -> Result<Vec<ForecastPoint>, AnalyticsError> {
    if horizon == 0 {
        return Err(AnalyticsError::BadHorizon);
    }
    let daily = series.daily_totals();
    if daily.len() < MIN_HISTORY_DAYS {
        return Err(AnalyticsError::SeriesTooShort { needed: MIN_HISTORY_DAYS, got: daily.len() });
    }
    let mut history: Vec<f64> = daily.iter().map(|d| d.1).collect();
    let mut date = daily[daily.len() - 1].0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        date += TimeDelta::days(1);
        let row = FeatureRow::next_day(&history, date, series.property_type);
        let kwh = model.predict_row(&row);
        history.push(kwh);
        out.push(ForecastPoint { date, kwh });
    }
    Ok(out)
}

/// Each future day repeats the same weekday of the last observed week.
pub fn seasonal_naive(series: &ConsumptionSeries, horizon: usize) -> Result<Vec<ForecastPoint>, AnalyticsError> {
    if horizon == 0 {
        return Err(AnalyticsError::BadHorizon);
    }
    let daily = series.daily_totals();
    if daily.len() < 7 {
        return Err(AnalyticsError::SeriesTooShort { needed: 7, got: daily.len() });
    }
    let last_week = &daily[daily.len() - 7..];
    let last = daily[daily.len() - 1].0;
    Ok((0..horizon)
        .map(|h| ForecastPoint { date: last + TimeDelta::days(h as i64 + 1), kwh: last_week[h % 7].1 })
        .collect())
}
