//! Non-learned comparators for the ablation harness.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::Sample;
use crate::model::{Forecast, ForecastPath};

/// Weeks in a seasonal cycle for the seasonal-naive baseline.
pub const SEASON_WEEKS: i64 = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Repeat the value observed one season (52 weeks) before each target
    /// week; falls back to persistence where history is too short.
    SeasonalNaive,
    /// Repeat the last observed value across the horizon.
    Persistence,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seasonal-naive" => Ok(BaselineKind::SeasonalNaive),
            "persistence" => Ok(BaselineKind::Persistence),
            other => Err(Error::InvalidConfig(format!(
                "unknown baseline `{other}` (expected seasonal-naive or persistence)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::SeasonalNaive => "seasonal-naive",
            BaselineKind::Persistence => "persistence",
        }
    }
}

/// Forecasts one sample with a baseline. Baselines read the raw target series
/// (persistence needs only the anchor value; seasonal-naive looks one season
/// back from each target week).
pub fn baseline_forecast(
    kind: BaselineKind,
    ds: &Dataset,
    target_series: &str,
    sample: &Sample,
    horizon: usize,
) -> Result<Forecast> {
    let series = ds
        .observed_series(&sample.entity, target_series)
        .ok_or_else(|| Error::Data(format!("entity {} lacks series `{target_series}`", sample.entity)))?;
    let anchor = series
        .get(sample.t)
        .ok_or_else(|| Error::Data(format!("no observation at anchor week {}", sample.t)))?;
    let values = match kind {
        BaselineKind::Persistence => vec![anchor; horizon],
        BaselineKind::SeasonalNaive => (1..=horizon as i64)
            .map(|h| series.get(sample.t + h - SEASON_WEEKS).unwrap_or(anchor))
            .collect(),
    };
    Ok(Forecast {
        entity: sample.entity.clone(),
        t: sample.t,
        paths: vec![ForecastPath { quantile: None, values }],
    })
}
