//! Matcher calibration, validator and forecaster evaluation on synthetic
//! corpora.

use std::time::Instant;

use chrono::{NaiveDate, TimeDelta};
use nourid_core::analytics::{AnalyticsError, ConsumptionSeries, Hyperparams, train_forecaster};
use nourid_core::records::DocumentKind;
use nourid_core::template::{Calibration, CalibrationError, calibrate_threshold, cosine_similarity};
use nourid_core::validation::validate_document;
use nourid_core::{Cin, ParcelId, PropertyType};
use rand::SeedableRng;
use rand::rngs::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::registry::{PopulationConfig, inject_defects, seed_population};
use crate::sim::{LoadModel, capture_probe_with, random_template, synthesize_series};

/// Target both accuracy figures are held to.
pub const TARGET_ACCURACY: f64 = 0.98;

/// Share of a corpus on which the forecaster must beat seasonal naive.
pub const TARGET_MODEL_SHARE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherReport {
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
    pub noise_sigma: f64,
    pub dimension: usize,
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub elapsed_ms: u64,
}

/// Genuine and impostor similarity scores. Genuine pairs compare a fresh
/// reference with a noisy capture of it; impostor pairs compare two
/// independent templates.
pub fn pair_scores(pairs: usize, noise_sigma: f64, dimension: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut genuine = Vec::with_capacity(pairs);
    let mut impostor = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let reference = random_template(dimension, &mut rng);
        let probe = capture_probe_with(&reference, noise_sigma, &mut rng);
        genuine.push(cosine_similarity(&probe, &reference).expect("same dimension"));
        let stranger = random_template(dimension, &mut rng);
        impostor.push(cosine_similarity(&stranger, &reference).expect("same dimension"));
    }
    (genuine, impostor)
}

pub fn matcher_accuracy(pairs: usize, noise_sigma: f64, dimension: usize, seed: u64) -> Result<MatcherReport, CalibrationError> {
    let started = Instant::now();
    let (genuine, impostor) = pair_scores(pairs, noise_sigma, dimension, seed);
    let cal: Calibration = calibrate_threshold(&genuine, &impostor, TARGET_ACCURACY)?;
    Ok(MatcherReport {
        genuine_pairs: cal.genuine_count,
        impostor_pairs: cal.impostor_count,
        noise_sigma,
        dimension,
        threshold: cal.threshold,
        balanced_accuracy: cal.balanced_accuracy,
        true_positive_rate: cal.true_positive_rate,
        true_negative_rate: cal.true_negative_rate,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub documents: usize,
    pub defective: usize,
    pub defect_rate: f64,
    pub detectability: f64,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub elapsed_ms: u64,
}

impl ValidatorReport {
    /// Tallies verdicts, where "positive" means flagged invalid, against
    /// the injected ground truth.
    pub fn tally(outcomes: impl IntoIterator<Item = (bool, bool)>, defect_rate: f64, detectability: f64, elapsed_ms: u64) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (defective, flagged) in outcomes {
            match (defective, flagged) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
            }
        }
        let n = tp + tn + fp + fn_;
        let rate = |a: usize, b: usize| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
        ValidatorReport {
            documents: n,
            defective: tp + fn_,
            defect_rate,
            detectability,
            true_positives: tp,
            true_negatives: tn,
            false_positives: fp,
            false_negatives: fn_,
            accuracy: if n == 0 { 1.0 } else { (tp + tn) as f64 / n as f64 },
            balanced_accuracy: (rate(tp, fn_) + rate(tn, fp)) / 2.0,
            elapsed_ms,
        }
    }
}

/// Seeds enough households to hold `documents` documents, injects defects
/// and classifies the first `documents` of them.
pub fn validator_accuracy(documents: usize, defect_rate: f64, detectability: f64, seed: u64) -> ValidatorReport {
    let started = Instant::now();
    let per_citizen = 2 * DocumentKind::ALL.len();
    let citizens = documents.div_ceil(per_citizen) as u32;
    let config = PopulationConfig { min_parcels: 2, max_parcels: 2, template_dimension: 8, ..PopulationConfig::with_counts(0, 0, citizens) };
    let clean = seed_population(&config, seed).expect("valid config");
    let corpus = inject_defects(&clean, defect_rate, detectability, seed ^ 0x5eed);
    let owner_of = |p: &ParcelId| -> Cin { corpus.parcel(p).expect("document parcel exists").owner_cin.clone() };
    let today = config.reference_date;
    let outcomes: Vec<(bool, bool)> = corpus
        .documents()
        .take(documents)
        .map(|d| (d.defect.is_some(), !validate_document(d, &owner_of(&d.parcel_id), today).is_valid()))
        .collect();
    ValidatorReport::tally(outcomes, defect_rate, detectability, started.elapsed().as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyEvaluation {
    pub deid: String,
    pub property_type: PropertyType,
    pub days: usize,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub model_mape: f64,
    pub baseline_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEvaluation {
    pub properties: Vec<PropertyEvaluation>,
    pub model_better: usize,
    pub share_better: f64,
    pub elapsed_ms: u64,
}

/// `properties` series of `days` days from `start`, cycling through the
/// property types, each with its own seed.
pub fn synthetic_corpus(
    properties: usize,
    start: NaiveDate,
    days: u32,
    model: &LoadModel,
    seed: u64,
) -> Result<Vec<ConsumptionSeries>, AnalyticsError> {
    let end = start + TimeDelta::days(i64::from(days));
    (0..properties)
        .map(|i| {
            let ptype = PropertyType::ALL[i % PropertyType::ALL.len()];
            synthesize_series(&format!("SYN-{i:04}"), ptype, start, end, model, seed.wrapping_add(i as u64))
        })
        .collect()
}

/// Trains one model per series and compares its held-out MAPE with the
/// seasonal-naive baseline on the same days.
pub fn evaluate_forecasts(
    corpus: &[ConsumptionSeries],
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<ForecastEvaluation, AnalyticsError> {
    let started = Instant::now();
    let mut properties = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        let (_, r) = train_forecaster(s, hyperparams, seed.wrapping_add(i as u64))?;
        properties.push(PropertyEvaluation {
            deid: s.deid.clone(),
            property_type: s.property_type,
            days: s.daily_totals().len(),
            train_rows: r.train_rows,
            validation_rows: r.validation_rows,
            model_mape: r.validation_mape,
            baseline_mape: r.baseline_mape,
        });
    }
    let model_better = properties.iter().filter(|p| p.model_mape < p.baseline_mape).count();
    Ok(ForecastEvaluation {
        share_better: if properties.is_empty() { 0.0 } else { model_better as f64 / properties.len() as f64 },
        model_better,
        properties,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}
