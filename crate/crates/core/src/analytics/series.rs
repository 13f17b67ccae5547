use alloc::string::String;
use alloc::vec::Vec;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::ids::PropertyType;

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// Gap-free hourly kWh readings for one DE-ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionSeries {
    pub deid: String,
    pub property_type: PropertyType,
    start: NaiveDateTime,
    kwh: Vec<f64>,
}

impl ConsumptionSeries {
    pub fn new(
        deid: impl Into<String>,
        property_type: PropertyType,
        start: NaiveDateTime,
        kwh: Vec<f64>,
    ) -> Result<Self, AnalyticsError> {
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(AnalyticsError::NotHourAligned);
        }
        if let Some(i) = kwh.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(AnalyticsError::BadReading(i));
        }
        Ok(ConsumptionSeries {
            deid: deid.into(),
            property_type,
            start,
            kwh,
        })
    }

    /// Builds a series from explicit (timestamp, kWh) pairs, which must be
    /// strictly hourly with no gaps.
    pub fn from_readings(
        deid: impl Into<String>,
        property_type: PropertyType,
        readings: &[(NaiveDateTime, f64)],
    ) -> Result<Self, AnalyticsError> {
        let Some(&(start, _)) = readings.first() else {
            return Err(AnalyticsError::EmptySeries);
        };
        for (i, w) in readings.windows(2).enumerate() {
            if w[1].0 - w[0].0 != TimeDelta::hours(1) {
                return Err(AnalyticsError::Gap(i + 1));
            }
        }
        Self::new(deid, property_type, start, readings.iter().map(|r| r.1).collect())
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    /// Timestamp of the last reading.
    pub fn end(&self) -> Option<NaiveDateTime> {
        (!self.kwh.is_empty()).then(|| self.timestamp(self.kwh.len() - 1))
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + TimeDelta::hours(index as i64)
    }

    pub fn values(&self) -> &[f64] {
        &self.kwh
    }

    pub fn len(&self) -> usize {
        self.kwh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kwh.is_empty()
    }

    pub fn readings(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.kwh.iter().enumerate().map(|(i, &v)| (self.timestamp(i), v))
    }

    pub fn total(&self) -> f64 {
        neumaier_sum(self.kwh.iter().copied())
    }

    /// Totals of every complete calendar day (24 readings), in order.
    /// Partial leading and trailing days are dropped.
    pub fn daily_totals(&self) -> Vec<(NaiveDate, f64)> {
        let skip = (24 - self.start.hour() as usize) % 24;
        self.kwh
            .get(skip..)
            .unwrap_or_default()
            .chunks_exact(24)
            .enumerate()
            .map(|(d, day)| {
                let date = self.timestamp(skip + d * 24).date();
                (date, neumaier_sum(day.iter().copied()))
            })
            .collect()
    }
}
