//! Feature pipeline: per-feature window construction and sample assembly.
//!
//! Each model input is described by a [`FeatureSpec`] naming where its values
//! come from and how far its window extends. Observed windows end at the
//! sample anchor `t`; climate and known windows extend `offset` weeks past
//! it. Climate features splice historical climate (weeks <= t) with the most
//! recently issued ensemble forecast (weeks > t), so no sample ever sees data
//! that would not have been available at its anchor time.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClimateAttribute, Dataset, EnsembleForecast, EntityId, WeeklySeries};
use crate::error::{Error, Result};
use crate::time::{iso_week_number, month_number, week_index, WeekIndex};
use crate::transforms::{TransformFlags, Window};

/// The three input families, which differ in how far their windows reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesKind {
    /// History only: window ends at the anchor t.
    Observed,
    /// Ensemble-forecast climate: window extends to t + offset.
    Climate,
    /// Deterministic future inputs (calendar): window extends to t + offset.
    Known,
}

/// Which ensemble-derived statistic a climate feature carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleStat {
    Mean,
    Std,
}

/// Calendar-derived known inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalendarField {
    WeekOfYear,
    MonthOfYear,
}

/// Where a feature's raw values come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum FeatureSource {
    /// An observed series such as sales or price, keyed by entity.
    Observed { series: String },
    /// A per-lead statistic over the ensemble members, keyed by location.
    Climate { attribute: ClimateAttribute, stat: EnsembleStat },
    /// A calendar number derived from the week itself.
    Calendar { field: CalendarField },
}

/// One model input: source, window geometry, transform opt-ins, and the
/// encoder topology (hidden sizes then latent size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub source: FeatureSource,
    /// Weeks past the anchor the window covers (0 for observed features).
    pub offset: usize,
    pub apply_diff: bool,
    pub apply_norm: bool,
    pub encoder: Vec<usize>,
}

impl FeatureSpec {
    /// Observed level series: differenced and normalized by default.
    pub fn observed(id: &str, series: &str, encoder: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            source: FeatureSource::Observed { series: series.into() },
            offset: 0,
            apply_diff: true,
            apply_norm: true,
            encoder,
        }
    }

    /// Ensemble-mean climate feature: differenced and normalized by default.
    pub fn climate_mean(id: &str, attribute: ClimateAttribute, offset: usize, encoder: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            source: FeatureSource::Climate { attribute, stat: EnsembleStat::Mean },
            offset,
            apply_diff: true,
            apply_norm: true,
            encoder,
        }
    }

    /// Ensemble-spread climate feature: fed raw (both transforms opt out), as
    /// the spread itself is the signal.
    pub fn climate_std(id: &str, attribute: ClimateAttribute, offset: usize, encoder: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            source: FeatureSource::Climate { attribute, stat: EnsembleStat::Std },
            offset,
            apply_diff: false,
            apply_norm: false,
            encoder,
        }
    }

    /// Calendar feature: raw integers, normalized per window.
    pub fn calendar(id: &str, field: CalendarField, offset: usize, encoder: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            source: FeatureSource::Calendar { field },
            offset,
            apply_diff: false,
            apply_norm: true,
            encoder,
        }
    }

    pub fn kind(&self) -> SeriesKind {
        match self.source {
            FeatureSource::Observed { .. } => SeriesKind::Observed,
            FeatureSource::Climate { .. } => SeriesKind::Climate,
            FeatureSource::Calendar { .. } => SeriesKind::Known,
        }
    }

    pub fn flags(&self) -> TransformFlags {
        TransformFlags::new(self.apply_diff, self.apply_norm)
    }

    /// Raw window length for lookback `k`: observed windows hold k+1 values
    /// ending at t, future-bearing windows add `offset` more.
    pub fn window_len(&self, lookback: usize) -> usize {
        lookback + 1 + self.offset
    }

    /// Encoder input size after the optional differencing step.
    pub fn encoder_input_dim(&self, lookback: usize) -> usize {
        self.window_len(lookback) - usize::from(self.apply_diff)
    }

    /// Latent size this feature contributes to the concatenated vector.
    pub fn latent_dim(&self) -> usize {
        *self.encoder.last().expect("encoder topology is non-empty")
    }

    fn validate(&self, horizon: usize) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "feature `{}` has an empty encoder topology",
                self.id
            )));
        }
        match self.kind() {
            SeriesKind::Observed if self.offset != 0 => Err(Error::InvalidConfig(format!(
                "observed feature `{}` must have offset 0, got {}",
                self.id, self.offset
            ))),
            SeriesKind::Climate | SeriesKind::Known if self.offset > horizon => {
                Err(Error::InvalidConfig(format!(
                    "feature `{}` offset {} exceeds horizon {horizon}",
                    self.id, self.offset
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Validates a feature list: unique ids, offsets within the horizon.
pub fn validate_features(features: &[FeatureSpec], horizon: usize) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for f in features {
        f.validate(horizon)?;
        if !seen.insert(f.id.clone()) {
            return Err(Error::InvalidConfig(format!("duplicate feature id `{}`", f.id)));
        }
    }
    Ok(())
}

/// One training/inference instance: aligned raw windows per feature plus the
/// future target (absent at inference).
#[derive(Debug, Clone)]
pub struct Sample {
    pub entity: EntityId,
    pub t: WeekIndex,
    pub windows: BTreeMap<String, Window>,
    pub target: Option<Vec<f64>>,
}

/// Per-lead mean and population standard deviation across ensemble members.
pub fn ensemble_stats(forecast: &EnsembleForecast) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = forecast.n_members();
    if n < 2 {
        return Err(Error::TooFewMembers(n));
    }
    let mut means = Vec::with_capacity(forecast.n_leads());
    let mut stds = Vec::with_capacity(forecast.n_leads());
    for lead in 0..forecast.n_leads() {
        let col = forecast.members.column(lead);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}

/// How daily values collapse into a week: totals for quantities, averages for
/// intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeeklyReducer {
    Sum,
    Mean,
}

/// Buckets dated values into ISO weeks. Incomplete leading and trailing weeks
/// (fewer than 7 distinct days) are dropped; interior weeks aggregate whatever
/// days are present.
pub fn weekly_aggregate(
    daily: &[(NaiveDate, f64)],
    reducer: WeeklyReducer,
) -> Result<Vec<(WeekIndex, f64)>> {
    if daily.is_empty() {
        return Err(Error::EmptySeries("weekly_aggregate input".into()));
    }
    let mut buckets: BTreeMap<WeekIndex, (f64, usize)> = BTreeMap::new();
    let mut days_seen: BTreeMap<WeekIndex, std::collections::BTreeSet<NaiveDate>> = BTreeMap::new();
    for (date, value) in daily {
        let w = week_index(*date);
        let entry = buckets.entry(w).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
        days_seen.entry(w).or_default().insert(*date);
    }
    let mut weeks: Vec<WeekIndex> = buckets.keys().copied().collect();
    while let Some(first) = weeks.first() {
        if days_seen[first].len() < 7 {
            weeks.remove(0);
        } else {
            break;
        }
    }
    while let Some(last) = weeks.last() {
        if days_seen[last].len() < 7 {
            weeks.pop();
        } else {
            break;
        }
    }
    Ok(weeks
        .into_iter()
        .map(|w| {
            let (sum, count) = buckets[&w];
            let value = match reducer {
                WeeklyReducer::Sum => sum,
                WeeklyReducer::Mean => sum / count as f64,
            };
            (w, value)
        })
        .collect())
}

/// Inclusive week range covered by a feature's window at anchor `t`.
pub fn window_range(spec: &FeatureSpec, t: WeekIndex, lookback: usize) -> (WeekIndex, WeekIndex) {
    (t - lookback as WeekIndex, t + spec.offset as WeekIndex)
}

/// Slices one feature window out of a weekly series. Observed windows end at
/// `t`; climate/known windows end at `t + offset`.
pub fn build_window(
    series: &WeeklySeries,
    t: WeekIndex,
    spec: &FeatureSpec,
    lookback: usize,
) -> Result<Window> {
    let (from, to) = window_range(spec, t, lookback);
    let mut values = Vec::with_capacity((to - from + 1) as usize);
    for week in from..=to {
        match series.get(week) {
            Some(v) => values.push(v),
            None if week <= t => {
                return Err(Error::InsufficientHistory {
                    feature: spec.id.clone(),
                    t,
                    needed: week,
                    available: series.first_week().unwrap_or(week),
                })
            }
            None => {
                return Err(Error::InsufficientForecast {
                    feature: spec.id.clone(),
                    t,
                    reason: format!("series ends before week {week}"),
                })
            }
        }
    }
    Window::new(values).map_err(|_| Error::NonFinite(format!("window for `{}` at t={t}", spec.id)))
}

/// Why a candidate sample was not emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkipCause {
    InsufficientHistory,
    InsufficientForecast,
    NonFiniteValue,
    MissingTarget,
    MissingSeries,
}

impl fmt::Display for SkipCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipCause::InsufficientHistory => "insufficient_history",
            SkipCause::InsufficientForecast => "insufficient_forecast",
            SkipCause::NonFiniteValue => "non_finite_value",
            SkipCause::MissingTarget => "missing_target",
            SkipCause::MissingSeries => "missing_series",
        };
        f.write_str(s)
    }
}

/// Skip-and-count accounting for one assembly run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub counts: BTreeMap<SkipCause, usize>,
    pub emitted: usize,
}

impl SkipReport {
    pub fn skipped(&self) -> usize {
        self.counts.values().sum()
    }

    fn record(&mut self, cause: SkipCause) {
        *self.counts.entry(cause).or_insert(0) += 1;
    }

    fn merge(&mut self, other: SkipReport) {
        for (cause, count) in other.counts {
            *self.counts.entry(cause).or_insert(0) += count;
        }
        self.emitted += other.emitted;
    }

    /// `cause  count` lines, one per cause, plus an emitted total.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (cause, count) in &self.counts {
            out.push_str(&format!("{cause}\t{count}\n"));
        }
        out.push_str(&format!("emitted\t{}\n", self.emitted));
        out
    }
}

/// Assembly parameters: lookback k, horizon tau, and whether samples must
/// carry a ground-truth target.
#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub lookback: usize,
    pub horizon: usize,
    pub require_target: bool,
}

fn classify(err: &Error) -> SkipCause {
    match err {
        Error::InsufficientHistory { .. } => SkipCause::InsufficientHistory,
        Error::InsufficientForecast { .. } => SkipCause::InsufficientForecast,
        Error::NonFinite(_) => SkipCause::NonFiniteValue,
        _ => SkipCause::MissingSeries,
    }
}

/// Resolves the raw values for one feature window at anchor `t`.
///
/// Climate features read historical climate for weeks <= t and the most
/// recent vintage issued at or before t for weeks beyond it; spread features
/// report zero for the past (observations carry no ensemble spread).
fn feature_values(
    ds: &Dataset,
    entity: &EntityId,
    spec: &FeatureSpec,
    t: WeekIndex,
    lookback: usize,
    stats_cache: &BTreeMap<(String, ClimateAttribute, WeekIndex), (Vec<f64>, Vec<f64>)>,
) -> Result<Window> {
    match &spec.source {
        FeatureSource::Observed { series } => {
            let s = ds
                .observed_series(entity, series)
                .ok_or_else(|| Error::Data(format!("entity {entity} lacks series `{series}`")))?;
            build_window(s, t, spec, lookback)
        }
        FeatureSource::Climate { attribute, stat } => {
            let location = entity.location();
            let hist = ds
                .climate_hist
                .get(&(location.to_string(), *attribute))
                .ok_or_else(|| Error::Data(format!("no climate history for {location}/{attribute}")))?;
            let vintage = ds.vintage(location, *attribute, t).ok_or_else(|| {
                Error::InsufficientForecast {
                    feature: spec.id.clone(),
                    t,
                    reason: format!("no {attribute} forecast issued at or before week {t}"),
                }
            })?;
            let (means, stds) = &stats_cache[&(location.to_string(), *attribute, vintage.issue_week)];
            let (from, to) = window_range(spec, t, lookback);
            let mut values = Vec::with_capacity((to - from + 1) as usize);
            for week in from..=to {
                if week <= t {
                    match (stat, hist.get(week)) {
                        (EnsembleStat::Mean, Some(v)) => values.push(v),
                        (EnsembleStat::Std, Some(_)) => values.push(0.0),
                        (_, None) => {
                            return Err(Error::InsufficientHistory {
                                feature: spec.id.clone(),
                                t,
                                needed: week,
                                available: hist.first_week().unwrap_or(week),
                            })
                        }
                    }
                } else {
                    let lead = vintage.lead_for(week).ok_or_else(|| Error::InsufficientForecast {
                        feature: spec.id.clone(),
                        t,
                        reason: format!(
                            "vintage issued week {} covers {} leads, week {week} is out of range",
                            vintage.issue_week,
                            vintage.n_leads()
                        ),
                    })?;
                    let v = match stat {
                        EnsembleStat::Mean => means[lead - 1],
                        EnsembleStat::Std => stds[lead - 1],
                    };
                    values.push(v);
                }
            }
            Window::new(values)
                .map_err(|_| Error::NonFinite(format!("window for `{}` at t={t}", spec.id)))
        }
        FeatureSource::Calendar { field } => {
            let (from, to) = window_range(spec, t, lookback);
            let values = (from..=to)
                .map(|week| match field {
                    CalendarField::WeekOfYear => iso_week_number(week) as f64,
                    CalendarField::MonthOfYear => month_number(week) as f64,
                })
                .collect();
            Ok(Window::new(values).expect("calendar values are finite"))
        }
    }
}

fn assemble_entity(
    ds: &Dataset,
    entity: &EntityId,
    specs: &[FeatureSpec],
    target_series: &str,
    opts: AssembleOptions,
    stats_cache: &BTreeMap<(String, ClimateAttribute, WeekIndex), (Vec<f64>, Vec<f64>)>,
) -> (Vec<Sample>, SkipReport) {
    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    let Some(target) = ds.observed_series(entity, target_series) else {
        report.record(SkipCause::MissingSeries);
        return (samples, report);
    };
    let (Some(first), Some(last)) = (target.first_week(), target.last_week()) else {
        report.record(SkipCause::MissingSeries);
        return (samples, report);
    };
    let k = opts.lookback as WeekIndex;
    let tau = opts.horizon as WeekIndex;
    let t_end = if opts.require_target { last - tau } else { last };
    let mut t = first + k;
    while t <= t_end {
        match assemble_one(ds, entity, specs, target_series, t, opts, stats_cache) {
            Ok(sample) => {
                report.emitted += 1;
                samples.push(sample);
            }
            Err(err) => report.record(classify(&err)),
        }
        t += 1;
    }
    (samples, report)
}

fn assemble_one(
    ds: &Dataset,
    entity: &EntityId,
    specs: &[FeatureSpec],
    target_series: &str,
    t: WeekIndex,
    opts: AssembleOptions,
    stats_cache: &BTreeMap<(String, ClimateAttribute, WeekIndex), (Vec<f64>, Vec<f64>)>,
) -> Result<Sample> {
    let mut windows = BTreeMap::new();
    for spec in specs {
        let window = feature_values(ds, entity, spec, t, opts.lookback, stats_cache)?;
        windows.insert(spec.id.clone(), window);
    }
    let target = if opts.require_target {
        let series = ds
            .observed_series(entity, target_series)
            .ok_or_else(|| Error::Data(format!("entity {entity} lacks series `{target_series}`")))?;
        let values = series
            .slice(t + 1, t + opts.horizon as WeekIndex)
            .ok_or_else(|| Error::Data("target gap".into()))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target for {entity} at t={t}")));
        }
        Some(values)
    } else {
        None
    };
    Ok(Sample { entity: entity.clone(), t, windows, target })
}

/// Builds one sample per (entity, valid anchor week). Candidates that cannot
/// be completed are skipped and counted by cause. Output is ordered by entity
/// then time regardless of worker count.
pub fn assemble_samples(
    ds: &Dataset,
    specs: &[FeatureSpec],
    target_series: &str,
    opts: AssembleOptions,
) -> Result<(Vec<Sample>, SkipReport)> {
    // pre-compute per-vintage member statistics once
    let mut stats_cache = BTreeMap::new();
    for ((location, attribute), vintages) in &ds.ensembles {
        for forecast in vintages {
            let key = (location.clone(), *attribute, forecast.issue_week);
            stats_cache.insert(key, ensemble_stats(forecast)?);
        }
    }
    let mut entities = ds.entities_with(target_series);
    entities.sort();
    let per_entity: Vec<(Vec<Sample>, SkipReport)> = entities
        .par_iter()
        .map(|entity| assemble_entity(ds, entity, specs, target_series, opts, &stats_cache))
        .collect();
    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    for (mut chunk, entity_report) in per_entity {
        samples.append(&mut chunk);
        report.merge(entity_report);
    }
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_observed(id: &str) -> FeatureSpec {
        FeatureSpec::observed(id, "sales", vec![4])
    }

    #[test]
    fn ensemble_stats_on_identical_members_is_degenerate() {
        let members = Array2::from_elem((50, 6), 3.25);
        let f = EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: 0,
            members,
        };
        let (mean, std) = ensemble_stats(&f).unwrap();
        assert_eq!(mean, vec![3.25; 6]);
        assert_eq!(std, vec![0.0; 6]);
    }

    #[test]
    fn ensemble_stats_two_member_example() {
        let members = Array2::from_shape_vec((2, 1), vec![10.0, 14.0]).unwrap();
        let f = EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: 0,
            members,
        };
        let (mean, std) = ensemble_stats(&f).unwrap();
        assert_eq!(mean, vec![12.0]);
        assert_eq!(std, vec![2.0]);
    }

    #[test]
    fn ensemble_stats_rejects_single_member() {
        let f = EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: 0,
            members: Array2::zeros((1, 3)),
        };
        assert!(matches!(ensemble_stats(&f), Err(Error::TooFewMembers(1))));
    }

    #[test]
    fn ensemble_stats_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let members = Array2::from_shape_fn((50, 8), |_| rng.random::<f64>() * 30.0 - 5.0);
        let f = EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: 0,
            members: members.clone(),
        };
        let (mean, std) = ensemble_stats(&f).unwrap();
        for lead in 0..8 {
            // two-pass oracle
            let col: Vec<f64> = (0..50).map(|m| members[(m, lead)]).collect();
            let om = col.iter().sum::<f64>() / 50.0;
            let ov = col.iter().map(|v| (v - om) * (v - om)).sum::<f64>() / 50.0;
            assert!((mean[lead] - om).abs() < 1e-12);
            assert!((std[lead] - ov.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn weekly_aggregate_sums_and_averages() {
        // 2019-07-15 is a Monday
        let days: Vec<(NaiveDate, f64)> = (0..7)
            .map(|i| (NaiveDate::from_ymd_opt(2019, 7, 15 + i).unwrap(), 1.0))
            .collect();
        let sum = weekly_aggregate(&days, WeeklyReducer::Sum).unwrap();
        assert_eq!(sum.len(), 1);
        assert_eq!(sum[0].1, 7.0);
        let temps: Vec<(NaiveDate, f64)> = (0..7)
            .map(|i| (NaiveDate::from_ymd_opt(2019, 7, 15 + i).unwrap(), 20.0))
            .collect();
        let mean = weekly_aggregate(&temps, WeeklyReducer::Mean).unwrap();
        assert_eq!(mean[0].1, 20.0);
    }

    #[test]
    fn weekly_aggregate_drops_partial_boundary_weeks() {
        // ramp over 3 ISO weeks starting Wednesday: first week partial
        let start = NaiveDate::from_ymd_opt(2019, 7, 17).unwrap(); // Wednesday
        let days: Vec<(NaiveDate, f64)> = (0..19)
            .map(|i| (start + chrono::Duration::days(i), i as f64))
            .collect();
        let out = weekly_aggregate(&days, WeeklyReducer::Sum).unwrap();
        // days 0..4 fall in week of 7-15 (partial, dropped); 5..11 and 12..18
        // are complete weeks
        assert_eq!(out.len(), 2);
        let w1: f64 = (5..12).map(|i| i as f64).sum();
        let w2: f64 = (12..19).map(|i| i as f64).sum();
        assert_eq!(out[0].1, w1);
        assert_eq!(out[1].1, w2);
    }

    #[test]
    fn weekly_aggregate_rejects_empty() {
        assert!(matches!(
            weekly_aggregate(&[], WeeklyReducer::Sum),
            Err(Error::EmptySeries(_))
        ));
    }

    #[test]
    fn build_window_known_kind_extends_past_anchor() {
        let series = WeeklySeries::from_values(0, &[10.0, 20.0, 30.0, 40.0, 50.0]);
        let mut spec = FeatureSpec::calendar("W_nbr", CalendarField::WeekOfYear, 1, vec![2]);
        spec.source = FeatureSource::Observed { series: "x".into() }; // only geometry matters here
        let w = build_window(&series, 2, &spec, 2).unwrap();
        assert_eq!(w.values(), &[10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn build_window_observed_kind_ends_at_anchor() {
        let series = WeeklySeries::from_values(0, &[10.0, 20.0, 30.0, 40.0, 50.0]);
        let spec = spec_observed("P_sales");
        let w = build_window(&series, 2, &spec, 2).unwrap();
        assert_eq!(w.values(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn build_window_errors_name_the_gap() {
        let series = WeeklySeries::from_values(5, &[1.0, 2.0, 3.0]);
        let spec = spec_observed("P_sales");
        match build_window(&series, 6, &spec, 2) {
            Err(Error::InsufficientHistory { needed, .. }) => assert_eq!(needed, 4),
            other => panic!("expected InsufficientHistory, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn prop_build_window_equals_direct_slice(
            start in 0i64..50,
            len in 30usize..60,
            k in 1usize..8,
            offset in 0usize..6,
            t_rel in 0usize..20,
        ) {
            let values: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let series = WeeklySeries::from_values(start, &values);
            let t = start + (k + t_rel) as i64;
            prop_assume!(t + offset as i64 <= start + len as i64 - 1);
            let mut spec = FeatureSpec::climate_mean("x", ClimateAttribute::TAvg, offset, vec![2]);
            spec.source = FeatureSource::Observed { series: "s".into() };
            let w = build_window(&series, t, &spec, k).unwrap();
            let lo = (t - k as i64 - start) as usize;
            let hi = (t + offset as i64 - start) as usize;
            prop_assert_eq!(w.values(), &values[lo..=hi]);
        }

        #[test]
        fn prop_ensemble_std_is_permutation_invariant(
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let members = Array2::from_shape_fn((10, 4), |_| rng.random::<f64>());
            let mut shuffled_rows: Vec<usize> = (0..10).collect();
            use rand::seq::SliceRandom;
            shuffled_rows.shuffle(&mut rng);
            let permuted = Array2::from_shape_fn((10, 4), |(m, l)| members[(shuffled_rows[m], l)]);
            let base = EnsembleForecast {
                location: "S".into(), attribute: ClimateAttribute::TAvg, issue_week: 0, members,
            };
            let perm = EnsembleForecast {
                location: "S".into(), attribute: ClimateAttribute::TAvg, issue_week: 0, members: permuted,
            };
            let (m0, s0) = ensemble_stats(&base).unwrap();
            let (m1, s1) = ensemble_stats(&perm).unwrap();
            for (a, b) in m0.iter().zip(&m1) { prop_assert!((a - b).abs() < 1e-12); }
            for (a, b) in s0.iter().zip(&s1) { prop_assert!((a - b).abs() < 1e-12); }
        }

        #[test]
        fn prop_weekly_sum_conserves_totals(
            n_days in 7usize..40,
            seed in 0u64..200,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = NaiveDate::from_ymd_opt(2019, 7, 15).unwrap(); // Monday
            let days: Vec<(NaiveDate, f64)> = (0..n_days)
                .map(|i| (start + chrono::Duration::days(i as i64), rng.random::<f64>()))
                .collect();
            let out = weekly_aggregate(&days, WeeklyReducer::Sum).unwrap();
            // compare against the total of exactly the days that landed in
            // kept weeks
            let kept: std::collections::BTreeSet<i64> = out.iter().map(|(w, _)| *w).collect();
            let expected: f64 = days
                .iter()
                .filter(|(d, _)| kept.contains(&week_index(*d)))
                .map(|(_, v)| v)
                .sum();
            let total: f64 = out.iter().map(|(_, v)| v).sum();
            prop_assert!((total - expected).abs() < 1e-9);
        }
    }
}
