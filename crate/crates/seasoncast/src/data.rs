//! Dataset model and file ingestion.
//!
//! Two delimited-text inputs feed the engine:
//!
//! * `series.csv` with header `entity_id,date,series_id,value`. Rows whose
//!   `series_id` names a climate attribute (`T_min`, `T_avg`, `T_max`,
//!   `P_avg`) are historical climate keyed by location (the `entity_id`
//!   column then holds the bare location id). All other rows are observed
//!   demand-side series keyed by `store:product` entities.
//! * `ensembles.csv` with header
//!   `location,attribute,issue_date,lead_week,member_idx,value`, one row per
//!   ensemble member and lead. `lead_week` L means the week `issue + L`.
//!
//! Daily series are detected per series (more than one row in some ISO week)
//! and aggregated to the weekly grid: sales sum, everything else averages.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{weekly_aggregate, WeeklyReducer};
use crate::time::{week_index, week_monday, WeekIndex};

/// A (store, product) pair; the store doubles as the climate location key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub store: String,
    pub product: String,
}

impl EntityId {
    pub fn new(store: impl Into<String>, product: impl Into<String>) -> Self {
        Self { store: store.into(), product: product.into() }
    }

    /// Location key used to join climate data.
    pub fn location(&self) -> &str {
        &self.store
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.store, self.product)
    }
}

impl FromStr for EntityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((store, product)) if !store.is_empty() && !product.is_empty() => {
                Ok(Self::new(store, product))
            }
            _ => Err(Error::Data(format!(
                "entity id `{s}` is not of the form store:product"
            ))),
        }
    }
}

/// Climate attributes carried by the ensemble system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClimateAttribute {
    TMin,
    TAvg,
    TMax,
    Precip,
}

impl ClimateAttribute {
    pub const ALL: [ClimateAttribute; 4] = [
        ClimateAttribute::TMin,
        ClimateAttribute::TAvg,
        ClimateAttribute::TMax,
        ClimateAttribute::Precip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ClimateAttribute::TMin => "T_min",
            ClimateAttribute::TAvg => "T_avg",
            ClimateAttribute::TMax => "T_max",
            ClimateAttribute::Precip => "P_avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for ClimateAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A weekly-indexed series. Weeks may be sparse; window construction checks
/// for gaps explicitly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeeklySeries {
    points: BTreeMap<WeekIndex, f64>,
}

impl WeeklySeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values(start: WeekIndex, values: &[f64]) -> Self {
        let points = values
            .iter()
            .enumerate()
            .map(|(i, v)| (start + i as WeekIndex, *v))
            .collect();
        Self { points }
    }

    pub fn insert(&mut self, week: WeekIndex, value: f64) {
        self.points.insert(week, value);
    }

    pub fn get(&self, week: WeekIndex) -> Option<f64> {
        self.points.get(&week).copied()
    }

    pub fn first_week(&self) -> Option<WeekIndex> {
        self.points.keys().next().copied()
    }

    pub fn last_week(&self) -> Option<WeekIndex> {
        self.points.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeekIndex, f64)> + '_ {
        self.points.iter().map(|(w, v)| (*w, *v))
    }

    /// Values for `from..=to`, or `None` if any week is missing.
    pub fn slice(&self, from: WeekIndex, to: WeekIndex) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity((to - from + 1).max(0) as usize);
        for w in from..=to {
            out.push(self.get(w)?);
        }
        Some(out)
    }
}

/// One issued seasonal forecast: a member × lead grid for a single location
/// and attribute. Lead L (1-based) covers the week `issue_week + L`.
#[derive(Debug, Clone)]
pub struct EnsembleForecast {
    pub location: String,
    pub attribute: ClimateAttribute,
    pub issue_week: WeekIndex,
    pub members: Array2<f64>, // n_members × n_leads
}

impl EnsembleForecast {
    pub fn n_members(&self) -> usize {
        self.members.nrows()
    }

    pub fn n_leads(&self) -> usize {
        self.members.ncols()
    }

    /// Whether the forecast grid covers the given absolute week.
    pub fn covers(&self, week: WeekIndex) -> bool {
        week > self.issue_week && week <= self.issue_week + self.n_leads() as WeekIndex
    }

    /// Lead index (1-based) for an absolute week, if covered.
    pub fn lead_for(&self, week: WeekIndex) -> Option<usize> {
        if self.covers(week) {
            Some((week - self.issue_week) as usize)
        } else {
            None
        }
    }
}

/// In-memory dataset: observed demand-side series, historical climate, and
/// the issued ensemble forecasts.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub observed: BTreeMap<(EntityId, String), WeeklySeries>,
    pub climate_hist: BTreeMap<(String, ClimateAttribute), WeeklySeries>,
    /// Sorted by issue week within each key.
    pub ensembles: BTreeMap<(String, ClimateAttribute), Vec<EnsembleForecast>>,
}

impl Dataset {
    /// Entities that carry the given observed series.
    pub fn entities_with(&self, series_id: &str) -> Vec<EntityId> {
        self.observed
            .keys()
            .filter(|(_, s)| s == series_id)
            .map(|(e, _)| e.clone())
            .collect()
    }

    pub fn observed_series(&self, entity: &EntityId, series_id: &str) -> Option<&WeeklySeries> {
        self.observed.get(&(entity.clone(), series_id.to_string()))
    }

    /// Most recent forecast issued at or before `t` (ties broken by latest).
    pub fn vintage(
        &self,
        location: &str,
        attribute: ClimateAttribute,
        t: WeekIndex,
    ) -> Option<&EnsembleForecast> {
        let vintages = self.ensembles.get(&(location.to_string(), attribute))?;
        vintages.iter().rev().find(|f| f.issue_week <= t)
    }

    /// Loads `series.csv` and `ensembles.csv` from a directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let series_path = dir.join("series.csv");
        let ensembles_path = dir.join("ensembles.csv");
        let mut ds = Self::default();
        ds.load_series(&series_path)?;
        if ensembles_path.exists() {
            ds.load_ensembles(&ensembles_path)?;
        }
        Ok(ds)
    }

    fn load_series(&mut self, path: &Path) -> Result<()> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        // raw daily/weekly points per (entity column, series id)
        let mut raw: BTreeMap<(String, String), Vec<(NaiveDate, f64)>> = BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if record.len() != 4 {
                return Err(Error::Data(format!(
                    "{} row {}: expected 4 columns, got {}",
                    path.display(),
                    line + 2,
                    record.len()
                )));
            }
            let date = parse_date(&record[1], path, line)?;
            let value = parse_value(&record[3], path, line)?;
            raw.entry((record[0].to_string(), record[2].to_string()))
                .or_default()
                .push((date, value));
        }
        for ((entity_col, series_id), points) in raw {
            let reducer = if series_id == "sales" {
                WeeklyReducer::Sum
            } else {
                WeeklyReducer::Mean
            };
            let weekly = to_weekly(&points, reducer)?;
            if let Some(attribute) = ClimateAttribute::parse(&series_id) {
                self.climate_hist.insert((entity_col, attribute), weekly);
            } else {
                let entity = EntityId::from_str(&entity_col)?;
                self.observed.insert((entity, series_id), weekly);
            }
        }
        Ok(())
    }

    fn load_ensembles(&mut self, path: &Path) -> Result<()> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        // (location, attribute, issue) -> (member, lead) -> value
        let mut cells: BTreeMap<(String, ClimateAttribute, WeekIndex), BTreeMap<(usize, usize), f64>> =
            BTreeMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if record.len() != 6 {
                return Err(Error::Data(format!(
                    "{} row {}: expected 6 columns, got {}",
                    path.display(),
                    line + 2,
                    record.len()
                )));
            }
            let attribute = ClimateAttribute::parse(&record[1]).ok_or_else(|| {
                Error::Data(format!(
                    "{} row {}: unknown climate attribute `{}`",
                    path.display(),
                    line + 2,
                    &record[1]
                ))
            })?;
            let issue = week_index(parse_date(&record[2], path, line)?);
            let lead: usize = record[3]
                .parse()
                .map_err(|_| Error::Data(format!("{} row {}: bad lead_week", path.display(), line + 2)))?;
            let member: usize = record[4]
                .parse()
                .map_err(|_| Error::Data(format!("{} row {}: bad member_idx", path.display(), line + 2)))?;
            if lead == 0 {
                return Err(Error::Data(format!(
                    "{} row {}: lead_week is 1-based",
                    path.display(),
                    line + 2
                )));
            }
            let value = parse_value(&record[5], path, line)?;
            cells
                .entry((record[0].to_string(), attribute, issue))
                .or_default()
                .insert((member, lead), value);
        }
        for ((location, attribute, issue_week), grid) in cells {
            let n_members = grid.keys().map(|(m, _)| m + 1).max().unwrap_or(0);
            let n_leads = grid.keys().map(|(_, l)| *l).max().unwrap_or(0);
            if grid.len() != n_members * n_leads {
                return Err(Error::Data(format!(
                    "ensemble {location}/{attribute} issued week {issue_week}: grid has {} cells, expected {} ({} members x {} leads)",
                    grid.len(),
                    n_members * n_leads,
                    n_members,
                    n_leads
                )));
            }
            let mut members = Array2::zeros((n_members, n_leads));
            for ((m, l), v) in grid {
                members[(m, l - 1)] = v;
            }
            self.ensembles
                .entry((location.clone(), attribute))
                .or_default()
                .push(EnsembleForecast { location, attribute, issue_week, members });
        }
        for vintages in self.ensembles.values_mut() {
            vintages.sort_by_key(|f| f.issue_week);
        }
        Ok(())
    }

    /// Writes the dataset back out in the ingest formats. Iteration order is
    /// sorted, so output bytes are a pure function of content.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut series = csv::Writer::from_path(dir.join("series.csv"))
            .map_err(|e| Error::Data(format!("series.csv: {e}")))?;
        series
            .write_record(["entity_id", "date", "series_id", "value"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for ((entity, series_id), s) in &self.observed {
            for (week, value) in s.iter() {
                series
                    .write_record([
                        entity.to_string(),
                        week_monday(week).to_string(),
                        series_id.clone(),
                        format_value(value),
                    ])
                    .map_err(|e| Error::Data(e.to_string()))?;
            }
        }
        for ((location, attribute), s) in &self.climate_hist {
            for (week, value) in s.iter() {
                series
                    .write_record([
                        location.clone(),
                        week_monday(week).to_string(),
                        attribute.to_string(),
                        format_value(value),
                    ])
                    .map_err(|e| Error::Data(e.to_string()))?;
            }
        }
        series.flush()?;

        let mut ens = csv::Writer::from_path(dir.join("ensembles.csv"))
            .map_err(|e| Error::Data(format!("ensembles.csv: {e}")))?;
        ens.write_record(["location", "attribute", "issue_date", "lead_week", "member_idx", "value"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for ((location, attribute), vintages) in &self.ensembles {
            for forecast in vintages {
                let issue_date = week_monday(forecast.issue_week).to_string();
                for m in 0..forecast.n_members() {
                    for l in 1..=forecast.n_leads() {
                        ens.write_record([
                            location.clone(),
                            attribute.to_string(),
                            issue_date.clone(),
                            l.to_string(),
                            m.to_string(),
                            format_value(forecast.members[(m, l - 1)]),
                        ])
                        .map_err(|e| Error::Data(e.to_string()))?;
                    }
                }
            }
        }
        ens.flush()?;
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    // shortest round-trip formatting: parsing the text recovers the exact f64
    format!("{v}")
}

fn parse_date(s: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    s.parse().map_err(|_| {
        Error::Data(format!(
            "{} row {}: `{s}` is not an ISO-8601 date",
            path.display(),
            line + 2
        ))
    })
}

fn parse_value(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse().map_err(|_| {
        Error::Data(format!("{} row {}: `{s}` is not a number", path.display(), line + 2))
    })
}

/// Converts raw dated points to the weekly grid. Series with at most one point
/// per ISO week are taken as already weekly; anything denser is aggregated.
fn to_weekly(points: &[(NaiveDate, f64)], reducer: WeeklyReducer) -> Result<WeeklySeries> {
    let mut per_week: BTreeMap<WeekIndex, usize> = BTreeMap::new();
    for (d, _) in points {
        *per_week.entry(week_index(*d)).or_insert(0) += 1;
    }
    let is_daily = per_week.values().any(|c| *c > 1);
    let mut out = WeeklySeries::new();
    if is_daily {
        for (week, value) in weekly_aggregate(points, reducer)? {
            out.insert(week, value);
        }
    } else {
        for (d, v) in points {
            out.insert(week_index(*d), *v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn entity_id_parses_and_displays() {
        let e: EntityId = "S01:P003".parse().unwrap();
        assert_eq!(e.store, "S01");
        assert_eq!(e.product, "P003");
        assert_eq!(e.to_string(), "S01:P003");
        assert_eq!(e.location(), "S01");
        assert!("just-a-store".parse::<EntityId>().is_err());
    }

    #[test]
    fn weekly_series_slice_detects_gaps() {
        let mut s = WeeklySeries::new();
        s.insert(10, 1.0);
        s.insert(11, 2.0);
        s.insert(13, 4.0);
        assert_eq!(s.slice(10, 11), Some(vec![1.0, 2.0]));
        assert_eq!(s.slice(10, 13), None);
    }

    #[test]
    fn vintage_picks_most_recent_issue() {
        let mut ds = Dataset::default();
        let make = |issue| EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: issue,
            members: Array2::zeros((2, 4)),
        };
        ds.ensembles
            .insert(("S1".into(), ClimateAttribute::TAvg), vec![make(0), make(4), make(8)]);
        assert_eq!(ds.vintage("S1", ClimateAttribute::TAvg, 5).unwrap().issue_week, 4);
        assert_eq!(ds.vintage("S1", ClimateAttribute::TAvg, 4).unwrap().issue_week, 4);
        assert_eq!(ds.vintage("S1", ClimateAttribute::TAvg, 100).unwrap().issue_week, 8);
        assert!(ds.vintage("S1", ClimateAttribute::TAvg, -1).is_none());
        assert!(ds.vintage("S2", ClimateAttribute::TAvg, 5).is_none());
    }

    #[test]
    fn ensemble_lead_mapping() {
        let f = EnsembleForecast {
            location: "S1".into(),
            attribute: ClimateAttribute::TAvg,
            issue_week: 10,
            members: Array2::zeros((2, 4)),
        };
        assert!(!f.covers(10));
        assert_eq!(f.lead_for(11), Some(1));
        assert_eq!(f.lead_for(14), Some(4));
        assert_eq!(f.lead_for(15), None);
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempdir().unwrap();
        let mut ds = Dataset::default();
        let entity = EntityId::new("S1", "P1");
        ds.observed.insert(
            (entity.clone(), "sales".into()),
            WeeklySeries::from_values(100, &[1.5, 2.25, 3.125]),
        );
        ds.climate_hist.insert(
            ("S1".into(), ClimateAttribute::TAvg),
            WeeklySeries::from_values(100, &[15.5, 16.25]),
        );
        let members =
            Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        ds.ensembles.insert(
            ("S1".into(), ClimateAttribute::TAvg),
            vec![EnsembleForecast {
                location: "S1".into(),
                attribute: ClimateAttribute::TAvg,
                issue_week: 100,
                members,
            }],
        );
        ds.write(dir.path()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(
            loaded.observed_series(&entity, "sales").unwrap().slice(100, 102),
            Some(vec![1.5, 2.25, 3.125])
        );
        assert_eq!(
            loaded.climate_hist[&("S1".into(), ClimateAttribute::TAvg)].get(101),
            Some(16.25)
        );
        let f = &loaded.ensembles[&("S1".into(), ClimateAttribute::TAvg)][0];
        assert_eq!(f.issue_week, 100);
        assert_eq!(f.members[(1, 2)], 6.0);
    }

    #[test]
    fn daily_series_are_aggregated_on_load() {
        let dir = tempdir().unwrap();
        let mut rows = String::from("entity_id,date,series_id,value\n");
        // a full ISO week of daily sales (2019-07-15 is a Monday)
        for day in 15..22 {
            rows.push_str(&format!("S1:P1,2019-07-{day},sales,1\n"));
        }
        std::fs::write(dir.path().join("series.csv"), rows).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        let entity = EntityId::new("S1", "P1");
        let series = ds.observed_series(&entity, "sales").unwrap();
        assert_eq!(series.len(), 1);
        let week = crate::time::week_index(NaiveDate::from_ymd_opt(2019, 7, 15).unwrap());
        assert_eq!(series.get(week), Some(7.0));
    }

    #[test]
    fn incomplete_ensemble_grid_is_rejected() {
        let dir = tempdir().unwrap();
        std::fs::write(dir.path().join("series.csv"), "entity_id,date,series_id,value\nS1:P1,2019-07-15,sales,1\n").unwrap();
        std::fs::write(
            dir.path().join("ensembles.csv"),
            "location,attribute,issue_date,lead_week,member_idx,value\n\
             S1,T_avg,2019-07-15,1,0,20\n\
             S1,T_avg,2019-07-15,2,0,21\n\
             S1,T_avg,2019-07-15,1,1,19\n",
        )
        .unwrap();
        let err = Dataset::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
