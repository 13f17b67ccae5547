use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use super::series::{ConsumptionSeries, neumaier_sum};

/// Hours in the trailing window used for tiering.
pub const TRAILING_HOURS: usize = 720;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsidyThresholds {
    /// Mean daily kWh strictly below this is tier A.
    pub tier_a_below: f64,
    /// Mean daily kWh strictly below this (and not A) is tier B.
    pub tier_b_below: f64,
}

impl Default for SubsidyThresholds {
    fn default() -> Self {
        SubsidyThresholds { tier_a_below: 3.3, tier_b_below: 16.7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    A,
    B,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAssessment {
    pub tier: Tier,
    pub mean_daily_kwh: f64,
    pub rationale: String,
}

pub fn subsidy_tier(
    series: &ConsumptionSeries,
    thresholds: &SubsidyThresholds,
) -> Result<TierAssessment, AnalyticsError> {
    let values = series.values();
    if values.len() < TRAILING_HOURS {
        return Err(AnalyticsError::SeriesTooShort { needed: TRAILING_HOURS / 24, got: values.len() / 24 });
    }
    let mean = neumaier_sum(values[values.len() - TRAILING_HOURS..].iter().copied()) / 30.0;
    let (tier, rationale) = if mean < thresholds.tier_a_below {
        (Tier::A, format!("{mean:.3} kWh/day is below {}", thresholds.tier_a_below))
    } else if mean < thresholds.tier_b_below {
        (Tier::B, format!("{mean:.3} kWh/day is in [{}, {})", thresholds.tier_a_below, thresholds.tier_b_below))
    } else {
        (Tier::C, format!("{mean:.3} kWh/day is at or above {}", thresholds.tier_b_below))
    };
    Ok(TierAssessment { tier, mean_daily_kwh: mean, rationale })
}
