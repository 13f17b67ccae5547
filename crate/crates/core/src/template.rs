//! Simulated facial templates and cosine matching.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Default embedding dimension.
pub const DEFAULT_DIMENSION: usize = 128;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error("template is empty")]
    Empty,
    #[error("template has zero or non-finite norm")]
    Degenerate,
    #[error("template norm {0} is not 1")]
    NotUnit(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FaceTemplate {
    embedding: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

impl FaceTemplate {
    /// Accepts an embedding that is already unit norm.
    pub fn new(embedding: Vec<f64>) -> Result<Self, TemplateError> {
        if embedding.is_empty() {
            return Err(TemplateError::Empty);
        }
        let n = norm(&embedding);
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(TemplateError::NotUnit(n));
        }
        Ok(FaceTemplate { embedding })
    }

    /// Scales `raw` onto the unit sphere.
    pub fn normalized(mut raw: Vec<f64>) -> Result<Self, TemplateError> {
        if raw.is_empty() {
            return Err(TemplateError::Empty);
        }
        let n = norm(&raw);
        if !n.is_finite() || n == 0.0 {
            return Err(TemplateError::Degenerate);
        }
        raw.iter_mut().for_each(|x| *x /= n);
        Ok(FaceTemplate { embedding: raw })
    }

    pub fn dimension(&self) -> usize {
        self.embedding.len()
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn norm(&self) -> f64 {
        norm(&self.embedding)
    }
}

impl TryFrom<Vec<f64>> for FaceTemplate {
    type Error = TemplateError;
    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        FaceTemplate::new(value)
    }
}

impl From<FaceTemplate> for Vec<f64> {
    fn from(value: FaceTemplate) -> Self {
        value.embedding
    }
}

/// Outcome of comparing a probe against a reference template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub threshold: f64,
    pub is_match: bool,
}

/// Cosine similarity of two templates of equal dimension.
pub fn cosine_similarity(a: &FaceTemplate, b: &FaceTemplate) -> Result<f64, TemplateError> {
    if a.dimension() != b.dimension() {
        return Err(TemplateError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let dot: f64 = a.embedding.iter().zip(&b.embedding).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

pub fn match_templates(
    probe: &FaceTemplate,
    reference: &FaceTemplate,
    threshold: f64,
) -> Result<MatchResult, TemplateError> {
    let score = cosine_similarity(probe, reference)?;
    Ok(MatchResult {
        score,
        threshold,
        is_match: score >= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("genuine and impostor score lists must both be non-empty")]
    EmptyScores,
    #[error("target accuracy unreachable, best achievable {best_achievable}")]
    TargetUnreachable { best_achievable: f64, threshold: f64 },
}

/// Threshold chosen by [`calibrate_threshold`] and the rates it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

/// Balanced accuracy of the rule `score >= threshold` means genuine.
pub fn balanced_accuracy(genuine: &[f64], impostor: &[f64], threshold: f64) -> f64 {
    let tp = genuine.iter().filter(|&&s| s >= threshold).count();
    let tn = impostor.iter().filter(|&&s| s < threshold).count();
    0.5 * (tp as f64 / genuine.len() as f64 + tn as f64 / impostor.len() as f64)
}

/// Sweeps every threshold that changes the partition of the observed
/// scores and keeps the one with the highest balanced accuracy (lowest
/// threshold on ties).
pub fn calibrate_threshold(
    genuine: &[f64],
    impostor: &[f64],
    target_accuracy: f64,
) -> Result<Calibration, CalibrationError> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(CalibrationError::EmptyScores);
    }
    let mut g: Vec<f64> = genuine.to_vec();
    let mut imp: Vec<f64> = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let (ng, ni) = (g.len() as f64, imp.len() as f64);

    let mut candidates: Vec<f64> = g.iter().chain(&imp).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // For a candidate value v: genuine with score >= v match, impostors with
    // score < v are rejected. Two cursors walk the sorted lists.
    let (mut gi, mut ii) = (0usize, 0usize);
    let mut best = (-1.0f64, 0usize, 0.0, 0.0);
    for (k, &v) in candidates.iter().enumerate() {
        while gi < g.len() && g[gi] < v {
            gi += 1;
        }
        while ii < imp.len() && imp[ii] < v {
            ii += 1;
        }
        let tpr = (g.len() - gi) as f64 / ng;
        let tnr = ii as f64 / ni;
        let acc = 0.5 * (tpr + tnr);
        if acc > best.0 {
            best = (acc, k, tpr, tnr);
        }
    }
    // The lowest candidate accepts everything, so best is at least 0.5.
    let k = best.1;
    let threshold = if k == 0 {
        candidates[0]
    } else {
        let mid = 0.5 * (candidates[k - 1] + candidates[k]);
        if mid > candidates[k - 1] { mid } else { candidates[k] }
    };
    let calibration = Calibration {
        threshold,
        balanced_accuracy: best.0,
        true_positive_rate: best.2,
        true_negative_rate: best.3,
        genuine_count: genuine.len(),
        impostor_count: impostor.len(),
    };
    if calibration.balanced_accuracy < target_accuracy {
        return Err(CalibrationError::TargetUnreachable {
            best_achievable: calibration.balanced_accuracy,
            threshold,
        });
    }
    Ok(calibration)
}
