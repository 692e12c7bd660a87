//! Synthetic desk-scale datasets with a planted climate effect.
//!
//! Climate per store is a seasonal sinusoid plus weekly weather noise; demand
//! adds its own seasonality and reacts to the climate deviation through a
//! planted coefficient beta. Ensemble forecasts are centered on the true
//! future climate with member noise growing linearly in lead, so a model that
//! reads the ensemble can anticipate the unpredictable part of demand while a
//! climate-blind twin cannot. Everything is a pure function of the seed.

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ClimateAttribute, Dataset, EnsembleForecast, EntityId, WeeklySeries};
use crate::error::{Error, Result};
use crate::time::WeekIndex;

const WEEKS_PER_YEAR: f64 = 52.0;

/// Seasonal climate shape per store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateGen {
    /// Long-run mean, degrees C.
    pub mean_c: f64,
    /// Seasonal sinusoid amplitude, degrees C.
    pub seasonal_amplitude_c: f64,
    /// Relative amplitude jitter across stores (0.2 = +-20%).
    pub amplitude_jitter: f64,
    /// Std of the weekly weather deviation from the seasonal shape.
    pub weather_noise_c: f64,
}

/// Ensemble forecast generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleGen {
    pub n_members: usize,
    pub n_leads: usize,
    pub issue_every_weeks: usize,
    /// Member noise at lead L has std `member_noise_c * (1 + 0.1 L)`.
    pub member_noise_c: f64,
}

/// Demand process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandGen {
    pub base: f64,
    /// Relative base jitter across products.
    pub base_jitter: f64,
    pub seasonal_amplitude: f64,
    /// Planted climate sensitivity, units per degree C of deviation.
    pub climate_beta: f64,
    pub noise_std: f64,
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stores: usize,
    pub n_products: usize,
    pub n_weeks: usize,
    pub seed: u64,
    /// First week of the generated range (IS0 week index; see `time`).
    pub start_week: WeekIndex,
    pub attributes: Vec<ClimateAttribute>,
    pub climate: ClimateGen,
    pub ensemble: EnsembleGen,
    pub demand: DemandGen,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stores: 20,
            n_products: 10,
            n_weeks: 150,
            seed: 42,
            // 2017-01-02, a Monday
            start_week: 2452,
            attributes: vec![ClimateAttribute::TAvg],
            climate: ClimateGen {
                mean_c: 15.0,
                seasonal_amplitude_c: 8.0,
                amplitude_jitter: 0.2,
                weather_noise_c: 2.5,
            },
            ensemble: EnsembleGen {
                n_members: 50,
                n_leads: 16,
                issue_every_weeks: 4,
                member_noise_c: 0.8,
            },
            demand: DemandGen {
                base: 60.0,
                base_jitter: 0.25,
                seasonal_amplitude: 12.0,
                climate_beta: 1.4,
                noise_std: 4.0,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stores == 0 || self.n_weeks == 0 {
            return Err(Error::InvalidConfig("need at least one store and one week".into()));
        }
        if self.ensemble.n_members < 2 {
            return Err(Error::InvalidConfig("ensembles need at least 2 members".into()));
        }
        if self.ensemble.issue_every_weeks == 0 {
            return Err(Error::InvalidConfig("issue cadence must be positive".into()));
        }
        if self.attributes.is_empty() {
            return Err(Error::InvalidConfig("at least one climate attribute".into()));
        }
        Ok(())
    }
}

/// Per-store sinusoid parameters actually drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreClimateTruth {
    pub store: String,
    pub amplitude_c: f64,
    pub phase_weeks: f64,
}

/// Per-entity demand parameters actually drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDemandTruth {
    pub entity: String,
    pub base: f64,
    pub phase_weeks: f64,
}

/// Ground-truth record of every planted parameter, written next to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    pub climate_beta: f64,
    pub demand_noise_std: f64,
    pub weather_noise_c: f64,
    pub climate_mean_c: f64,
    pub stores: Vec<StoreClimateTruth>,
    pub entities: Vec<EntityDemandTruth>,
}

/// A generated dataset plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub truth: TruthRecord,
    /// True climate including the weeks past the observed range that only
    /// ensembles saw; keyed like the dataset's climate history.
    pub true_climate: Vec<((String, ClimateAttribute), Vec<f64>)>,
}

fn store_name(i: usize) -> String {
    format!("S{i:03}")
}

fn product_name(i: usize) -> String {
    format!("P{i:03}")
}

/// Generates sales, true climate history, and ensemble forecasts.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_weeks = cfg.n_weeks;
    // generate past the observed range so late-issued ensembles stay centered
    // on a real trajectory
    let gen_weeks = n_weeks + cfg.ensemble.n_leads;

    // per-store climate parameters
    let mut stores = Vec::with_capacity(cfg.n_stores);
    for s in 0..cfg.n_stores {
        let amp = cfg.climate.seasonal_amplitude_c
            * (1.0 + cfg.climate.amplitude_jitter * (rng.random::<f64>() * 2.0 - 1.0));
        let phase = rng.random::<f64>() * WEEKS_PER_YEAR;
        stores.push(StoreClimateTruth { store: store_name(s), amplitude_c: amp, phase_weeks: phase });
    }
    // per-entity demand parameters
    let mut entities = Vec::with_capacity(cfg.n_stores * cfg.n_products);
    for s in 0..cfg.n_stores {
        for p in 0..cfg.n_products {
            let base = cfg.demand.base
                * (1.0 + cfg.demand.base_jitter * (rng.random::<f64>() * 2.0 - 1.0));
            let phase = rng.random::<f64>() * WEEKS_PER_YEAR;
            entities.push(EntityDemandTruth {
                entity: EntityId::new(store_name(s), product_name(p)).to_string(),
                base,
                phase_weeks: phase,
            });
        }
    }

    let mut dataset = Dataset::default();
    let mut true_climate = Vec::new();

    // true climate trajectories, one per (store, attribute)
    let mut trajectories: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.n_stores); // [store][attr][week]
    for (s, store) in stores.iter().enumerate() {
        let mut per_attr = Vec::with_capacity(cfg.attributes.len());
        for attribute in &cfg.attributes {
            let mut series = Vec::with_capacity(gen_weeks);
            for w in 0..gen_weeks {
                let seasonal = store.amplitude_c
                    * (TAU * (w as f64 + store.phase_weeks) / WEEKS_PER_YEAR).sin();
                let noise = std_normal.sample(&mut rng) * cfg.climate.weather_noise_c;
                series.push(cfg.climate.mean_c + seasonal + noise);
            }
            let mut hist = WeeklySeries::new();
            for (w, v) in series.iter().take(n_weeks).enumerate() {
                hist.insert(cfg.start_week + w as WeekIndex, *v);
            }
            dataset
                .climate_hist
                .insert((store_name(s), *attribute), hist);
            true_climate.push(((store_name(s), *attribute), series.clone()));
            per_attr.push(series);
        }
        trajectories.push(per_attr);
    }

    // ensemble forecasts centered on the true trajectory
    for (s, _) in stores.iter().enumerate() {
        for (a, attribute) in cfg.attributes.iter().enumerate() {
            let truth = &trajectories[s][a];
            let mut issue = 0usize;
            while issue < n_weeks {
                let mut members = Array2::zeros((cfg.ensemble.n_members, cfg.ensemble.n_leads));
                for lead in 1..=cfg.ensemble.n_leads {
                    let sigma = cfg.ensemble.member_noise_c * (1.0 + 0.1 * lead as f64);
                    let center = truth[issue + lead];
                    for m in 0..cfg.ensemble.n_members {
                        members[(m, lead - 1)] = center + std_normal.sample(&mut rng) * sigma;
                    }
                }
                dataset
                    .ensembles
                    .entry((store_name(s), *attribute))
                    .or_default()
                    .push(EnsembleForecast {
                        location: store_name(s),
                        attribute: *attribute,
                        issue_week: cfg.start_week + issue as WeekIndex,
                        members,
                    });
                issue += cfg.ensemble.issue_every_weeks;
            }
        }
    }

    // sales driven by the first configured attribute's deviation
    let mut entity_iter = entities.iter();
    for s in 0..cfg.n_stores {
        let t_avg = &trajectories[s][0];
        for _ in 0..cfg.n_products {
            let truth = entity_iter.next().expect("entity params");
            let mut series = WeeklySeries::new();
            for w in 0..n_weeks {
                let seasonal = cfg.demand.seasonal_amplitude
                    * (TAU * (w as f64 + truth.phase_weeks) / WEEKS_PER_YEAR).sin();
                let climate_term =
                    cfg.demand.climate_beta * (t_avg[w] - cfg.climate.mean_c);
                let noise = std_normal.sample(&mut rng) * cfg.demand.noise_std;
                let sales = (truth.base + seasonal + climate_term + noise).max(0.0);
                series.insert(cfg.start_week + w as WeekIndex, sales);
            }
            let entity: EntityId = truth.entity.parse().expect("generated entity id");
            dataset.observed.insert((entity, "sales".into()), series);
        }
    }

    Ok(SynthDataset {
        dataset,
        truth: TruthRecord {
            seed: cfg.seed,
            climate_beta: cfg.demand.climate_beta,
            demand_noise_std: cfg.demand.noise_std,
            weather_noise_c: cfg.climate.weather_noise_c,
            climate_mean_c: cfg.climate.mean_c,
            stores,
            entities,
        },
        true_climate,
    })
}

/// Writes `series.csv`, `ensembles.csv`, and `truth.json`. Byte-identical for
/// identical configs.
pub fn write_dataset(synth: &SynthDataset, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    synth.dataset.write(out_dir)?;
    let truth = serde_json::to_string_pretty(&synth.truth)
        .map_err(|e| Error::Data(format!("truth serialization: {e}")))?;
    std::fs::write(out_dir.join("truth.json"), truth + "\n")?;
    Ok(())
}
