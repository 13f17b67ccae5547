//! Randomized stand-ins for the physical world: face captures and meter
//! readings.

use chrono::{Datelike, NaiveDate, NaiveTime, Timelike, Weekday};
use nourid_core::PropertyType;
use nourid_core::analytics::{AnalyticsError, ConsumptionSeries};
use nourid_core::template::FaceTemplate;
use rand::rngs::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Unit vector drawn uniformly on the sphere.
pub fn random_template<R: Rng + ?Sized>(dimension: usize, rng: &mut R) -> FaceTemplate {
    loop {
        let raw: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(t) = FaceTemplate::normalized(raw) {
            return t;
        }
    }
}

/// A noisy re-capture of `reference`: Gaussian noise per coordinate, then
/// renormalized. Zero noise returns the reference unchanged.
pub fn capture_probe(reference: &FaceTemplate, noise_sigma: f64, seed: u64) -> FaceTemplate {
    capture_probe_with(reference, noise_sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn capture_probe_with<R: Rng + ?Sized>(reference: &FaceTemplate, noise_sigma: f64, rng: &mut R) -> FaceTemplate {
    assert!(noise_sigma >= 0.0, "noise sigma must be non-negative");
    if noise_sigma == 0.0 {
        return reference.clone();
    }
    loop {
        let raw: Vec<f64> = reference
            .embedding()
            .iter()
            .map(|x| x + noise_sigma * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        if let Ok(t) = FaceTemplate::normalized(raw) {
            return t;
        }
    }
}

/// Knobs of the synthetic load model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadModel {
    /// Log-space sigma of the independent hourly noise.
    pub hourly_noise: f64,
    /// Log-space sigma of the per-day occupancy factor.
    pub daily_noise: f64,
    /// Multiplier on every base load.
    pub scale: f64,
    /// When false the diurnal, weekly and seasonal shapes are flat.
    pub shaped: bool,
}

impl Default for LoadModel {
    fn default() -> Self {
        LoadModel { hourly_noise: 0.25, daily_noise: 0.10, scale: 1.0, shaped: true }
    }
}

impl LoadModel {
    pub fn noiseless() -> Self {
        LoadModel { hourly_noise: 0.0, daily_noise: 0.0, ..Self::default() }
    }
}

/// Mean kWh per hour before shaping.
fn base_load(t: PropertyType) -> f64 {
    match t {
        PropertyType::Household => 0.35,
        PropertyType::Agricultural => 1.2,
        PropertyType::Commercial => 2.0,
    }
}

fn diurnal(t: PropertyType, hour: u32) -> f64 {
    match t {
        PropertyType::Household => match hour {
            0..=5 => 0.45,
            6..=8 => 1.1,
            9..=16 => 0.7,
            17 => 1.2,
            18..=22 => 1.9,
            _ => 0.8,
        },
        PropertyType::Commercial => match hour {
            8..=17 => 1.9,
            7 | 18 => 1.0,
            _ => 0.3,
        },
        // Pumps run in daylight.
        PropertyType::Agricultural => match hour {
            6..=18 => 1.7,
            _ => 0.2,
        },
    }
}

fn weekly(t: PropertyType, day: Weekday) -> f64 {
    let weekend = matches!(day, Weekday::Sat | Weekday::Sun);
    match t {
        PropertyType::Household if weekend => 1.15,
        PropertyType::Household => 0.95,
        PropertyType::Commercial => match day {
            Weekday::Sat => 0.55,
            Weekday::Sun => 0.25,
            _ => 1.2,
        },
        PropertyType::Agricultural if day == Weekday::Fri => 0.9,
        PropertyType::Agricultural => 1.0,
    }
}

fn seasonal(t: PropertyType, day_of_year: u32) -> f64 {
    let doy = f64::from(day_of_year);
    let bump = |center: f64, width: f64| {
        let d = (doy - center).abs().min(365.0 - (doy - center).abs());
        (-(d / width).powi(2)).exp()
    };
    match t {
        // Heating in January, cooling in late July.
        PropertyType::Household => 0.85 + 0.3 * bump(15.0, 40.0) + 0.35 * bump(205.0, 35.0),
        PropertyType::Commercial => 0.9 + 0.4 * bump(205.0, 45.0),
        // Irrigation season.
        PropertyType::Agricultural => 0.35 + 1.4 * bump(196.0, 50.0),
    }
}

/// Hourly kWh from `start` (inclusive, 00:00) to `end` (exclusive, 00:00)
/// as base × diurnal × weekly × seasonal × occupancy × noise.
pub fn synthesize_series(
    deid: &str,
    property_type: PropertyType,
    start: NaiveDate,
    end: NaiveDate,
    model: &LoadModel,
    seed: u64,
) -> Result<ConsumptionSeries, AnalyticsError> {
    if start >= end {
        return Err(AnalyticsError::InvalidRange);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hourly = LogNormal::new(-model.hourly_noise.powi(2) / 2.0, model.hourly_noise).expect("finite sigma");
    let daily = LogNormal::new(-model.daily_noise.powi(2) / 2.0, model.daily_noise).expect("finite sigma");
    let days = (end - start).num_days() as usize;
    let mut kwh = Vec::with_capacity(days * 24);
    for date in start.iter_days().take(days) {
        let occupancy = if model.daily_noise > 0.0 { daily.sample(&mut rng) } else { 1.0 };
        let shape = if model.shaped {
            weekly(property_type, date.weekday()) * seasonal(property_type, date.ordinal())
        } else {
            1.0
        };
        for hour in 0..24 {
            let d = if model.shaped { diurnal(property_type, hour) } else { 1.0 };
            let noise = if model.hourly_noise > 0.0 { hourly.sample(&mut rng) } else { 1.0 };
            kwh.push(model.scale * base_load(property_type) * d * shape * occupancy * noise);
        }
    }
    let start = start.and_time(NaiveTime::MIN);
    debug_assert_eq!(start.hour(), 0);
    ConsumptionSeries::new(deid, property_type, start, kwh)
}
