//! CSV import and export of hourly consumption series.

use std::io::{Read, Write};

use chrono::NaiveDateTime;
use nourid_core::PropertyType;
use nourid_core::analytics::{AnalyticsError, ConsumptionSeries};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: bad timestamp {value:?}")]
    Timestamp { row: usize, value: String },
    #[error(transparent)]
    Series(#[from] AnalyticsError),
}

/// Writes `timestamp,kwh` rows with ISO 8601 timestamps.
pub fn write_series_csv<W: Write>(series: &ConsumptionSeries, out: W) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "kwh"])?;
    for (t, kwh) in series.readings() {
        w.write_record([t.format(TIMESTAMP_FORMAT).to_string(), kwh.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_series_csv<R: Read>(input: R, deid: &str, property_type: PropertyType) -> Result<ConsumptionSeries, CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let mut readings = Vec::new();
    for (i, row) in r.deserialize::<(String, f64)>().enumerate() {
        let (ts, kwh) = row?;
        let t = NaiveDateTime::parse_from_str(ts.trim_end_matches('Z'), TIMESTAMP_FORMAT)
            .map_err(|_| CsvError::Timestamp { row: i + 2, value: ts.clone() })?;
        readings.push((t, kwh));
    }
    Ok(ConsumptionSeries::from_readings(deid, property_type, &readings)?)
}
