//! Error metrics and report structures for the backtesting harness.
//!
//! Residuals are pooled per (entity, anchor, horizon) point, bucketed into
//! three 4-week groups plus an overall row over all 12 horizons. MAPE is
//! reported as a fraction and skips points whose true value sits below an
//! epsilon floor (their count is carried alongside).

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Forecast;

/// Targets smaller than this (in magnitude) are excluded from MAPE.
pub const EPS_MAPE: f64 = 1e-6;

/// Mean absolute percentage error as a fraction, over admissible points.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    Ok(mape_with_count(y, yhat)?.0)
}

/// MAPE plus the number of admissible points it averaged over.
pub fn mape_with_count(y: &[f64], yhat: &[f64]) -> Result<(f64, usize)> {
    check_lengths("mape", y, yhat)?;
    let mut sum = 0.0;
    let mut admissible = 0usize;
    for (a, p) in y.iter().zip(yhat) {
        if a.abs() >= EPS_MAPE {
            sum += (a - p).abs() / a.abs().max(EPS_MAPE);
            admissible += 1;
        }
    }
    if admissible == 0 {
        return Err(Error::AllTargetsNearZero(EPS_MAPE));
    }
    Ok((sum / admissible as f64, admissible))
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("rmse", y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((sum / y.len() as f64).sqrt())
}

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths("mae", y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p).abs()).sum();
    Ok(sum / y.len() as f64)
}

fn check_lengths(context: &str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            context: context.into(),
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySeries(format!("{context} input")));
    }
    Ok(())
}

/// Horizon grouping used throughout the reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BucketLabel {
    W1_4,
    W5_8,
    W9_12,
    Overall,
}

impl BucketLabel {
    pub const ALL: [BucketLabel; 4] =
        [BucketLabel::W1_4, BucketLabel::W5_8, BucketLabel::W9_12, BucketLabel::Overall];

    /// 1-based horizon range the bucket pools over.
    fn range(self) -> (usize, usize) {
        match self {
            BucketLabel::W1_4 => (1, 4),
            BucketLabel::W5_8 => (5, 8),
            BucketLabel::W9_12 => (9, 12),
            BucketLabel::Overall => (1, 12),
        }
    }

    /// Inverse of `Display`, used when reading `report.csv` back.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.to_string() == s)
    }
}

impl fmt::Display for BucketLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BucketLabel::W1_4 => "week 1-4",
            BucketLabel::W5_8 => "week 5-8",
            BucketLabel::W9_12 => "week 9-12",
            BucketLabel::Overall => "overall",
        };
        f.write_str(s)
    }
}

/// Pooled metrics for one horizon bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBucket {
    pub label: BucketLabel,
    pub rmse: f64,
    pub mape: f64,
    pub mae: f64,
    /// Points contributing to MAPE after the near-zero exclusion.
    pub admissible: usize,
    /// All residual points pooled in the bucket.
    pub points: usize,
}

/// Horizon the bucket layout is defined for.
pub const REPORT_HORIZON: usize = 12;

/// Pools residuals from matched forecast/truth pairs into the three 4-week
/// buckets plus the overall row. Truths must align with `forecasts` and both
/// must carry exactly twelve horizons.
pub fn bucketed_report(forecasts: &[Forecast], truths: &[Vec<f64>]) -> Result<Vec<MetricBucket>> {
    if forecasts.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            context: "forecasts vs truths".into(),
            expected: forecasts.len(),
            actual: truths.len(),
        });
    }
    if forecasts.is_empty() {
        return Err(Error::EmptySeries("bucketed_report input".into()));
    }
    // per-horizon residual pools
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); REPORT_HORIZON];
    let mut yhats: Vec<Vec<f64>> = vec![Vec::new(); REPORT_HORIZON];
    for (forecast, truth) in forecasts.iter().zip(truths) {
        let point = forecast.point()?;
        if point.len() != REPORT_HORIZON || truth.len() != REPORT_HORIZON {
            return Err(Error::HorizonMismatch {
                expected: REPORT_HORIZON,
                actual: point.len().min(truth.len()),
            });
        }
        for h in 0..REPORT_HORIZON {
            ys[h].push(truth[h]);
            yhats[h].push(point[h]);
        }
    }
    let mut out = Vec::with_capacity(BucketLabel::ALL.len());
    for label in BucketLabel::ALL {
        let (lo, hi) = label.range();
        let mut y = Vec::new();
        let mut p = Vec::new();
        for h in lo..=hi {
            y.extend_from_slice(&ys[h - 1]);
            p.extend_from_slice(&yhats[h - 1]);
        }
        let (mape_value, admissible) = mape_with_count(&y, &p)?;
        out.push(MetricBucket {
            label,
            rmse: rmse(&y, &p)?,
            mape: mape_value,
            mae: mae(&y, &p)?,
            admissible,
            points: y.len(),
        });
    }
    Ok(out)
}

/// Percentage error reduction of a variant against a base run; positive means
/// the variant is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub mape_reduction_pct: f64,
    pub rmse_reduction_pct: f64,
    pub mae_reduction_pct: f64,
}

fn overall(buckets: &[MetricBucket]) -> Result<&MetricBucket> {
    buckets
        .iter()
        .find(|b| b.label == BucketLabel::Overall)
        .ok_or_else(|| Error::Data("report lacks an overall bucket".into()))
}

/// Error reduction of `variant` over `base` on the overall bucket.
pub fn error_reduction(
    dataset: &str,
    base: &[MetricBucket],
    variant: &[MetricBucket],
) -> Result<ComparisonRow> {
    let b = overall(base)?;
    let v = overall(variant)?;
    let reduce = |name: &'static str, base: f64, variant: f64| -> Result<f64> {
        if base == 0.0 {
            return Err(Error::ZeroBaseMetric(name));
        }
        Ok(100.0 * (base - variant) / base)
    };
    Ok(ComparisonRow {
        dataset: dataset.into(),
        mape_reduction_pct: reduce("mape", b.mape, v.mape)?,
        rmse_reduction_pct: reduce("rmse", b.rmse, v.rmse)?,
        mae_reduction_pct: reduce("mae", b.mae, v.mae)?,
    })
}

/// Overall metrics for one (product, region) scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub mape: f64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Better,
    Tie,
    Worse,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Better => "better",
            Verdict::Tie => "tie",
            Verdict::Worse => "worse",
        };
        f.write_str(s)
    }
}

/// Per-scenario outcome of a climate vs no-climate comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub scenario: String,
    pub verdict: Verdict,
}

/// Scenario tally: better iff the variant wins on both MAPE and RMSE, worse
/// iff it loses both, tie otherwise (including equal metrics).
#[derive(Debug, Clone, PartialEq)]
pub struct WinTieLoss {
    pub verdicts: Vec<ScenarioVerdict>,
    pub better_pct: f64,
    pub tie_pct: f64,
    pub worse_pct: f64,
}

impl WinTieLoss {
    /// Share of scenarios where the variant performs better or equal.
    pub fn better_or_equal_pct(&self) -> f64 {
        self.better_pct + self.tie_pct
    }
}

/// Compares matched per-scenario reports of the variant (e.g. climate-aware)
/// against the base.
pub fn win_tie_loss(
    variant: &BTreeMap<String, ScenarioMetrics>,
    base: &BTreeMap<String, ScenarioMetrics>,
) -> Result<WinTieLoss> {
    if variant.len() != base.len() || variant.keys().ne(base.keys()) {
        let missing: Vec<&String> = variant
            .keys()
            .filter(|k| !base.contains_key(*k))
            .chain(base.keys().filter(|k| !variant.contains_key(*k)))
            .collect();
        return Err(Error::KeyMismatch(format!("{missing:?}")));
    }
    if variant.is_empty() {
        return Err(Error::EmptySeries("win_tie_loss scenarios".into()));
    }
    let mut verdicts = Vec::with_capacity(variant.len());
    let mut counts = [0usize; 3];
    for (scenario, v) in variant {
        let b = &base[scenario];
        let wins_mape = v.mape < b.mape;
        let wins_rmse = v.rmse < b.rmse;
        let loses_mape = v.mape > b.mape;
        let loses_rmse = v.rmse > b.rmse;
        let verdict = if wins_mape && wins_rmse {
            Verdict::Better
        } else if loses_mape && loses_rmse {
            Verdict::Worse
        } else {
            Verdict::Tie
        };
        counts[match verdict {
            Verdict::Better => 0,
            Verdict::Tie => 1,
            Verdict::Worse => 2,
        }] += 1;
        verdicts.push(ScenarioVerdict { scenario: scenario.clone(), verdict });
    }
    let total = verdicts.len() as f64;
    Ok(WinTieLoss {
        verdicts,
        better_pct: 100.0 * counts[0] as f64 / total,
        tie_pct: 100.0 * counts[1] as f64 / total,
        worse_pct: 100.0 * counts[2] as f64 / total,
    })
}

fn fmt_metric(v: f64, precision: usize) -> String {
    if v.is_finite() {
        format!("{v:.precision$}")
    } else {
        "-".into()
    }
}

/// Renders one or more model rows as an aligned text table with the bucketed
/// column layout (RMSE and MAPE per bucket, overall MAE appended).
pub fn render_table(title: &str, rows: &[(String, Vec<MetricBucket>)], precision: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "{:<24} {:>18} {:>18} {:>18} {:>18} {:>12}",
        "model",
        "week 1-4 RMSE/MAPE",
        "week 5-8 RMSE/MAPE",
        "week 9-12 RMSE/MAPE",
        "overall RMSE/MAPE",
        "overall MAE"
    );
    for (model, buckets) in rows {
        let cell = |label: BucketLabel| -> String {
            buckets
                .iter()
                .find(|b| b.label == label)
                .map(|b| format!("{}/{}", fmt_metric(b.rmse, precision), fmt_metric(b.mape, precision)))
                .unwrap_or_else(|| "-".into())
        };
        let mae_cell = buckets
            .iter()
            .find(|b| b.label == BucketLabel::Overall)
            .map(|b| fmt_metric(b.mae, precision))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{model:<24} {:>18} {:>18} {:>18} {:>18} {mae_cell:>12}",
            cell(BucketLabel::W1_4),
            cell(BucketLabel::W5_8),
            cell(BucketLabel::W9_12),
            cell(BucketLabel::Overall),
        );
    }
    out
}

/// Long-format CSV rows: `dataset,model,bucket,metric,value`. Includes the
/// header when `with_header` is set.
pub fn report_csv(dataset: &str, model: &str, buckets: &[MetricBucket], with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("dataset,model,bucket,metric,value\n");
    }
    for b in buckets {
        for (metric, value) in [("rmse", b.rmse), ("mape", b.mape), ("mae", b.mae)] {
            let _ = writeln!(out, "{dataset},{model},{},{metric},{value}", b.label);
        }
    }
    out
}

/// Published grocery-retail reference row for the climate-aware model
/// (documentation fixture for the report formatter; not a quality target).
/// MAE was not reported alongside it and renders as "-".
pub fn grocery_reference_row() -> (String, Vec<MetricBucket>) {
    let bucket = |label, rmse, mape| MetricBucket {
        label,
        rmse,
        mape,
        mae: f64::NAN,
        admissible: 0,
        points: 0,
    };
    (
        "LRL-SNN + Climate".to_string(),
        vec![
            bucket(BucketLabel::W1_4, 0.64, 0.19),
            bucket(BucketLabel::W5_8, 0.87, 0.17),
            bucket(BucketLabel::W9_12, 0.85, 0.18),
            bucket(BucketLabel::Overall, 0.85, 0.19),
        ],
    )
}
