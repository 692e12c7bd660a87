//! Climate-aware multi-horizon demand forecasting.
//!
//! `seasoncast` forecasts weekly demand twelve weeks out while encoding
//! uncertain seasonal climate ensembles next to historical observations and
//! known-future calendar inputs. Each input series gets its own invertible
//! window transform (differencing + normalization) and its own temporal
//! encoder; the per-feature latents concatenate into a shared dense trunk
//! whose output is mapped back to sales units by inverting the target
//! window's transforms. A training, evaluation, and ablation harness turns
//! the library into a climate-vs-no-climate comparison workflow, with a
//! synthetic generator standing in for proprietary retail data.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release -p seasoncast --example transform_roundtrip
//! cargo run --release -p seasoncast --example climate_ablation
//! ```
//!
//! or the `seasoncast` binary (`synth`, `train`, `evaluate`, `compare`).

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod nn;
pub mod synth;
pub mod time;
pub mod training;
pub mod transforms;

pub use data::{ClimateAttribute, Dataset, EnsembleForecast, EntityId, WeeklySeries};
pub use error::{Error, Result};
pub use features::{FeatureSpec, Sample, SeriesKind};
pub use model::{Checkpoint, Forecast, LrlSnn, ModelConfig, OutputMode};
pub use training::{LossKind, SplitSpec, TrainConfig};
pub use transforms::Window;
