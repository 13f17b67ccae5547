use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use chrono::{Datelike, NaiveDateTime};

use serde::{Deserialize, Serialize};

use super::series::{ConsumptionSeries, neumaier_sum};
use super::AnalyticsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Day,
    Week,
    Month,
    Year,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [Granularity::Day, Granularity::Week, Granularity::Month, Granularity::Year];

    /// Bucket key. Weeks are ISO weeks.
    fn key(self, t: NaiveDateTime) -> (i32, u32, u32) {
        let d = t.date();
        match self {
            Granularity::Day => (d.year(), d.month(), d.day()),
            Granularity::Week => {
                let w = d.iso_week();
                (w.year(), w.week(), 0)
            }
            Granularity::Month => (d.year(), d.month(), 0),
            Granularity::Year => (d.year(), 0, 0),
        }
    }

    fn label(self, t: NaiveDateTime) -> String {
        let (a, b, c) = self.key(t);
        match self {
            Granularity::Day => format!("{a:04}-{b:02}-{c:02}"),
            Granularity::Week => format!("{a:04}-W{b:02}"),
            Granularity::Month => format!("{a:04}-{b:02}"),
            Granularity::Year => format!("{a:04}"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Day => "day",
            Granularity::Week => "week",
            Granularity::Month => "month",
            Granularity::Year => "year",
        }
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" | "daily" => Ok(Granularity::Day),
            "week" | "weekly" => Ok(Granularity::Week),
            "month" | "monthly" => Ok(Granularity::Month),
            "year" | "yearly" => Ok(Granularity::Year),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub first_hour: NaiveDateTime,
    pub hours: usize,
    pub total_kwh: f64,
    pub mean_hourly_kwh: f64,
    pub peak_hour: NaiveDateTime,
    pub peak_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateView {
    pub granularity: Granularity,
    pub buckets: Vec<Bucket>,
}

impl AggregateView {
    pub fn total(&self) -> f64 {
        neumaier_sum(self.buckets.iter().map(|b| b.total_kwh))
    }
}

/// Calendar bucketing of an hourly series.
pub fn aggregate(series: &ConsumptionSeries, granularity: Granularity) -> Result<AggregateView, AnalyticsError> {
    if series.is_empty() {
        return Err(AnalyticsError::EmptySeries);
    }
    let values = series.values();
    let mut buckets = Vec::new();
    let mut start = 0;
    while start < values.len() {
        let key = granularity.key(series.timestamp(start));
        let mut end = start + 1;
        while end < values.len() && granularity.key(series.timestamp(end)) == key {
            end += 1;
        }
        let slice = &values[start..end];
        let total = neumaier_sum(slice.iter().copied());
        let (peak_index, peak) = slice
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        buckets.push(Bucket {
            label: granularity.label(series.timestamp(start)),
            first_hour: series.timestamp(start),
            hours: slice.len(),
            total_kwh: total,
            mean_hourly_kwh: total / slice.len() as f64,
            peak_hour: series.timestamp(start + peak_index),
            peak_kwh: peak,
        });
        start = end;
    }
    Ok(AggregateView { granularity, buckets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::PropertyType;
    use alloc::vec;

    fn series(start: &str, kwh: Vec<f64>) -> ConsumptionSeries {
        let start = NaiveDateTime::parse_from_str(start, "%Y-%m-%d %H:%M").unwrap();
        ConsumptionSeries::new("DE", PropertyType::Household, start, kwh).unwrap()
    }

    #[test]
    fn empty_series_is_an_error() {
        assert_eq!(aggregate(&series("2025-01-01 00:00", vec![]), Granularity::Day), Err(AnalyticsError::EmptySeries));
    }

    #[test]
    fn iso_week_straddles_the_year() {
        // 2024-12-30 is Monday of 2025-W01.
        let s = series("2024-12-29 00:00", vec![1.0; 24 * 9]);
        let weeks = aggregate(&s, Granularity::Week).unwrap();
        let labels: Vec<&str> = weeks.buckets.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, ["2024-W52", "2025-W01", "2025-W02"]);
        assert_eq!(weeks.buckets[1].hours, 168);
        let years = aggregate(&s, Granularity::Year).unwrap();
        assert_eq!(years.buckets.len(), 2);
        assert_eq!(years.buckets[0].hours, 72);
    }

    #[test]
    fn peak_and_mean() {
        let mut kwh = vec![0.5; 48];
        kwh[30] = 4.0;
        let days = aggregate(&series("2025-03-01 00:00", kwh), Granularity::Day).unwrap();
        assert_eq!(days.buckets[1].peak_kwh, 4.0);
        assert_eq!(days.buckets[1].peak_hour.format("%H").to_string(), "06");
        assert!((days.buckets[1].mean_hourly_kwh - (0.5 * 23.0 + 4.0) / 24.0).abs() < 1e-12);
        assert_eq!("monthly".parse::<Granularity>(), Ok(Granularity::Month));
    }
}
