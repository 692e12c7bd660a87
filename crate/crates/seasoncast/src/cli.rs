//! Workflow commands: synthesize data, train, evaluate, and compare runs.
//!
//! These functions are the whole behavior of the command-line binary; it only
//! parses arguments and maps errors to exit codes. Every artifact except the
//! manifest (which carries timestamps) is a pure function of inputs and seed,
//! so reruns are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{baseline_forecast, BaselineKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{
    bucketed_report, error_reduction, mae, mape_with_count, render_table, report_csv, rmse,
    win_tie_loss, BucketLabel, MetricBucket, ScenarioMetrics,
};
use crate::features::{assemble_samples, AssembleOptions, SeriesKind};
use crate::model::{Checkpoint, CheckpointKind, Forecast, LrlSnn, ModelConfig, OutputMode};
use crate::synth::{generate, write_dataset, SynthConfig};
use crate::training::{
    chronological_split, train_with, LossKind, SplitFractions, SplitSpec, TrainConfig,
};

/// Caps the rayon worker pool from `SEASONCAST_THREADS`; no-op when unset,
/// invalid, or already configured.
pub fn configure_threads_from_env() {
    if let Ok(value) = std::env::var("SEASONCAST_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Provenance record written next to every run's artifacts. Timestamps live
/// only here so the other outputs stay byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_config_hash: String,
    pub train_config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub created_utc: String,
    pub baseline: Option<String>,
    pub n_features: usize,
    pub n_climate_features: usize,
    pub split: SplitSpec,
    pub sample_counts: SampleCounts,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub skipped: usize,
    pub dropped_cross_boundary: usize,
}

/// Train-config file contents: optimizer knobs plus split fractions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainFileConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitFractions,
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn hash_bytes(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn hash_string(s: &str) -> String {
    hash_bytes(&[s.as_bytes()])
}

/// Hash of the input data files a run reads.
fn data_hash(data_dir: &Path) -> Result<String> {
    let series = std::fs::read(data_dir.join("series.csv"))
        .map_err(|e| Error::Data(format!("cannot read {}/series.csv: {e}", data_dir.display())))?;
    let ensembles = std::fs::read(data_dir.join("ensembles.csv")).unwrap_or_default();
    Ok(hash_bytes(&[&series, &ensembles]))
}

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Generates a synthetic dataset into `out_dir`.
pub fn cmd_synth(config: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(path) => load_toml(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let synth = generate(&cfg)?;
    write_dataset(&synth, out_dir)?;
    println!(
        "wrote synthetic dataset: {} stores x {} products x {} weeks (seed {}) -> {}",
        cfg.n_stores,
        cfg.n_products,
        cfg.n_weeks,
        cfg.seed,
        out_dir.display()
    );
    Ok(())
}

/// Inputs for a training run.
#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    pub model_config: Option<PathBuf>,
    pub train_config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub no_climate: bool,
    pub baseline: Option<BaselineKind>,
    pub seed: Option<u64>,
    pub quantiles: Option<Vec<f64>>,
}

/// A completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub manifest: RunManifest,
}

/// Trains a model (or records a baseline) and writes
/// `<out>/<run_id>/{best.ckpt,history.csv,skips.txt,manifest.json}`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    configure_threads_from_env();

    let mut model_config: ModelConfig = match &args.model_config {
        Some(path) => load_toml(path)?,
        None => ModelConfig::synthetic_default(),
    };
    if args.no_climate {
        model_config = model_config.without_climate();
    }
    let mut file_config: TrainFileConfig = match &args.train_config {
        Some(path) => load_toml(path)?,
        None => TrainFileConfig::default(),
    };
    if let Some(quantiles) = &args.quantiles {
        model_config.output = OutputMode::Quantiles(quantiles.clone());
        file_config.train.loss = LossKind::Pinball(quantiles.clone());
    }
    if let Some(seed) = args.seed {
        file_config.train.seed = seed;
    }
    model_config.validate()?;
    file_config.train.validate()?;
    file_config.split.validate()?;

    let dataset = Dataset::load(&args.data_dir)?;
    let data_digest = data_hash(&args.data_dir)?;

    let opts = AssembleOptions {
        lookback: model_config.lookback,
        horizon: model_config.horizon,
        require_target: true,
    };
    let (samples, skip_report) =
        assemble_samples(&dataset, &model_config.features, model_config.target_series(), opts)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "no usable samples assembled ({} skipped)",
            skip_report.skipped()
        )));
    }
    let min_t = samples.iter().map(|s| s.t).min().unwrap();
    let max_t = samples.iter().map(|s| s.t).max().unwrap();
    let split_spec = file_config.split.resolve(min_t, max_t);
    let split = chronological_split(samples, &split_spec)?;

    let model_hash = model_config.hash();
    let train_hash = hash_string(
        &serde_json::to_string(&file_config.train).expect("train config serializes"),
    );
    let baseline_tag = args.baseline.map(|b| b.as_str().to_string());
    let run_id = hash_string(&format!(
        "{model_hash}:{train_hash}:{data_digest}:{}:{}",
        file_config.train.seed,
        baseline_tag.as_deref().unwrap_or("lrl-snn"),
    ))[..12]
        .to_string();
    let run_dir = args.out_dir.join(&run_id);
    std::fs::create_dir_all(&run_dir)?;

    let n_climate = model_config
        .features
        .iter()
        .filter(|f| f.kind() == SeriesKind::Climate)
        .count();

    let checkpoint_path = run_dir.join("best.ckpt");
    let mut artifacts = BTreeMap::new();
    artifacts.insert("checkpoint".to_string(), checkpoint_path.display().to_string());

    match args.baseline {
        Some(kind) => {
            let ckpt_kind = match kind {
                BaselineKind::SeasonalNaive => CheckpointKind::SeasonalNaive,
                BaselineKind::Persistence => CheckpointKind::Persistence,
            };
            Checkpoint {
                kind: ckpt_kind,
                seed: file_config.train.seed,
                split: split_spec,
                config: model_config.clone(),
                params: Vec::new(),
            }
            .save(&checkpoint_path)?;
            println!(
                "recorded {} baseline over {} train / {} dev / {} test samples",
                kind.as_str(),
                split.train.len(),
                split.dev.len(),
                split.test.len()
            );
        }
        None => {
            let mut model = LrlSnn::new(model_config.clone(), file_config.train.seed)?;
            let history = train_with(
                &mut model,
                &split.train,
                &split.dev,
                &file_config.train,
                |log| {
                    println!(
                        "epoch={} split=train loss={:.6} | split=dev loss={:.6} | seconds={:.2}",
                        log.epoch, log.train_loss, log.dev_loss, log.seconds
                    );
                },
            )?;
            println!(
                "best epoch {} (dev loss {:.6})",
                history.best_epoch, history.dev_loss[history.best_epoch]
            );
            Checkpoint {
                kind: CheckpointKind::Model,
                seed: file_config.train.seed,
                split: split_spec,
                config: model_config.clone(),
                params: model.params_flat(),
            }
            .save(&checkpoint_path)?;
            let history_path = run_dir.join("history.csv");
            std::fs::write(&history_path, history.to_csv())?;
            artifacts.insert("history".to_string(), history_path.display().to_string());
        }
    }

    let skips_path = run_dir.join("skips.txt");
    std::fs::write(&skips_path, skip_report.render())?;
    artifacts.insert("skips".to_string(), skips_path.display().to_string());

    let manifest = RunManifest {
        run_id: run_id.clone(),
        model_config_hash: model_hash,
        train_config_hash: train_hash,
        data_hash: data_digest,
        seed: file_config.train.seed,
        created_utc: now_utc(),
        baseline: baseline_tag,
        n_features: model_config.features.len(),
        n_climate_features: n_climate,
        split: split_spec,
        sample_counts: SampleCounts {
            train: split.train.len(),
            dev: split.dev.len(),
            test: split.test.len(),
            skipped: skip_report.skipped(),
            dropped_cross_boundary: split.dropped_cross_boundary,
        },
        artifacts,
    };
    let manifest_path = run_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    println!("run {run_id}: checkpoint at {}", checkpoint_path.display());
    Ok(TrainOutcome { run_dir, checkpoint: checkpoint_path, manifest })
}

/// A completed evaluation.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: Vec<MetricBucket>,
    pub report_txt: PathBuf,
    pub report_csv: PathBuf,
    pub scenarios_csv: PathBuf,
    pub quantile_crossings: usize,
}

/// Evaluates a checkpoint on the test partition of a dataset and writes
/// `report.txt`, `report.csv`, and `scenarios.csv` into `out_dir`.
pub fn cmd_evaluate(
    checkpoint_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
    config_override: Option<&Path>,
) -> Result<EvalOutcome> {
    configure_threads_from_env();
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    if let Some(path) = config_override {
        let runtime: ModelConfig = load_toml(path)?;
        checkpoint.ensure_config(&runtime)?;
    }
    let config = checkpoint.config.clone();
    let dataset = Dataset::load(data_dir)?;
    let opts = AssembleOptions {
        lookback: config.lookback,
        horizon: config.horizon,
        require_target: true,
    };
    let (samples, _skips) =
        assemble_samples(&dataset, &config.features, config.target_series(), opts)?;
    let split = chronological_split(samples, &checkpoint.split)?;
    let test = split.test;

    let model_label;
    let forecasts: Vec<Forecast> = match checkpoint.kind {
        CheckpointKind::Model => {
            let model = checkpoint.into_model()?;
            model_label = "lrl-snn".to_string();
            model.predict_batch(&test)?
        }
        CheckpointKind::SeasonalNaive | CheckpointKind::Persistence => {
            let kind = if checkpoint.kind == CheckpointKind::SeasonalNaive {
                BaselineKind::SeasonalNaive
            } else {
                BaselineKind::Persistence
            };
            model_label = kind.as_str().to_string();
            test.iter()
                .map(|s| baseline_forecast(kind, &dataset, config.target_series(), s, config.horizon))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let truths: Vec<Vec<f64>> = test
        .iter()
        .map(|s| s.target.clone().expect("assembled with targets"))
        .collect();

    let report = bucketed_report(&forecasts, &truths)?;
    let crossings: usize = forecasts.iter().map(crate::model::quantile_crossings).sum();

    std::fs::create_dir_all(out_dir)?;
    let table = render_table(
        &format!("test metrics ({} samples)", test.len()),
        &[(model_label.clone(), report.clone())],
        4,
    );
    let report_txt = out_dir.join("report.txt");
    std::fs::write(&report_txt, &table)?;
    let report_csv_path = out_dir.join("report.csv");
    std::fs::write(&report_csv_path, report_csv("test", &model_label, &report, true))?;

    // per-scenario overall metrics (scenario = store:product entity)
    let mut by_scenario: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (sample, forecast) in test.iter().zip(&forecasts) {
        let entry = by_scenario.entry(sample.entity.to_string()).or_default();
        entry.0.extend(sample.target.as_ref().unwrap());
        entry.1.extend(forecast.point()?);
    }
    let mut scenarios_out = String::from("scenario,mape,rmse,mae\n");
    for (scenario, (y, yhat)) in &by_scenario {
        match mape_with_count(y, yhat) {
            Ok((mape_value, _)) => {
                let r = rmse(y, yhat)?;
                let m = mae(y, yhat)?;
                scenarios_out.push_str(&format!("{scenario},{mape_value},{r},{m}\n"));
            }
            Err(Error::AllTargetsNearZero(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let scenarios_csv = out_dir.join("scenarios.csv");
    std::fs::write(&scenarios_csv, scenarios_out)?;

    println!("{table}");
    if matches!(config.output, OutputMode::Quantiles(_)) {
        println!("quantile crossings across test forecasts: {crossings}");
    }
    Ok(EvalOutcome {
        report,
        report_txt,
        report_csv: report_csv_path,
        scenarios_csv,
        quantile_crossings: crossings,
    })
}

fn parse_report_csv(path: &Path) -> Result<(String, Vec<MetricBucket>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read report {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty report", path.display())))?;
    if header != "dataset,model,bucket,metric,value" {
        return Err(Error::Data(format!(
            "{}: unexpected header `{header}` (want dataset,model,bucket,metric,value)",
            path.display()
        )));
    }
    let mut model = String::new();
    let mut cells: BTreeMap<BucketLabel, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Data(format!(
                "{} row {}: expected 5 columns, got {}",
                path.display(),
                i + 2,
                parts.len()
            )));
        }
        model = parts[1].to_string();
        let bucket = BucketLabel::parse(parts[2]).ok_or_else(|| {
            Error::Data(format!("{} row {}: unknown bucket `{}`", path.display(), i + 2, parts[2]))
        })?;
        let value: f64 = parts[4].parse().map_err(|_| {
            Error::Data(format!(
                "{} row {}: column `value` is not a number: `{}`",
                path.display(),
                i + 2,
                parts[4]
            ))
        })?;
        cells.entry(bucket).or_default().insert(parts[3].to_string(), value);
    }
    let mut buckets = Vec::new();
    for (label, metrics) in cells {
        let get = |name: &str| -> Result<f64> {
            metrics.get(name).copied().ok_or_else(|| {
                Error::Data(format!(
                    "{}: bucket `{label}` lacks column `metric`=`{name}`",
                    path.display()
                ))
            })
        };
        buckets.push(MetricBucket {
            label,
            rmse: get("rmse")?,
            mape: get("mape")?,
            mae: get("mae")?,
            admissible: 0,
            points: 0,
        });
    }
    Ok((model, buckets))
}

fn parse_scenarios_csv(path: &Path) -> Result<BTreeMap<String, ScenarioMetrics>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read scenarios {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty scenarios file", path.display())))?;
    if header != "scenario,mape,rmse,mae" {
        return Err(Error::Data(format!(
            "{}: unexpected header `{header}` (want scenario,mape,rmse,mae)",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!(
                "{} row {}: expected 4 columns, got {}",
                path.display(),
                i + 2,
                parts.len()
            )));
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            parts[idx].parse().map_err(|_| {
                Error::Data(format!(
                    "{} row {}: column `{name}` is not a number: `{}`",
                    path.display(),
                    i + 2,
                    parts[idx]
                ))
            })
        };
        out.insert(
            parts[0].to_string(),
            ScenarioMetrics { mape: parse(1, "mape")?, rmse: parse(2, "rmse")?, mae: parse(3, "mae")? },
        );
    }
    Ok(out)
}

/// A completed comparison.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub mape_reduction_pct: f64,
    pub rmse_reduction_pct: f64,
    pub mae_reduction_pct: f64,
    pub better_pct: f64,
    pub tie_pct: f64,
    pub worse_pct: f64,
}

/// Compares a variant run (B) against a base run (A): overall error-reduction
/// percentages plus per-scenario win/tie/loss tallies. Writes
/// `comparison.txt`, `comparison.csv`, and `verdicts.csv`.
pub fn cmd_compare(
    report_base: &Path,
    report_variant: &Path,
    scenarios_base: &Path,
    scenarios_variant: &Path,
    out_dir: &Path,
) -> Result<CompareOutcome> {
    let (base_model, base) = parse_report_csv(report_base)?;
    let (variant_model, variant) = parse_report_csv(report_variant)?;
    let row = error_reduction("test", &base, &variant)?;

    let base_scenarios = parse_scenarios_csv(scenarios_base)?;
    let variant_scenarios = parse_scenarios_csv(scenarios_variant)?;
    let wtl = win_tie_loss(&variant_scenarios, &base_scenarios)?;

    std::fs::create_dir_all(out_dir)?;
    let mut txt = String::new();
    txt.push_str(&format!(
        "error reduction of `{variant_model}` over `{base_model}` (overall bucket)\n"
    ));
    txt.push_str(&format!(
        "  MAPE: {:+.2}%\n  RMSE: {:+.2}%\n  MAE:  {:+.2}%\n",
        row.mape_reduction_pct, row.rmse_reduction_pct, row.mae_reduction_pct
    ));
    txt.push_str(&format!(
        "scenarios: {:.1}% better, {:.1}% tie, {:.1}% worse ({:.1}% better or equal)\n",
        wtl.better_pct,
        wtl.tie_pct,
        wtl.worse_pct,
        wtl.better_or_equal_pct()
    ));
    std::fs::write(out_dir.join("comparison.txt"), &txt)?;

    let mut csv = String::from("dataset,metric,reduction_pct\n");
    csv.push_str(&format!("{},mape,{}\n", row.dataset, row.mape_reduction_pct));
    csv.push_str(&format!("{},rmse,{}\n", row.dataset, row.rmse_reduction_pct));
    csv.push_str(&format!("{},mae,{}\n", row.dataset, row.mae_reduction_pct));
    std::fs::write(out_dir.join("comparison.csv"), csv)?;

    let mut verdicts = String::from("scenario,verdict\n");
    for v in &wtl.verdicts {
        verdicts.push_str(&format!("{},{}\n", v.scenario, v.verdict));
    }
    std::fs::write(out_dir.join("verdicts.csv"), verdicts)?;

    print!("{txt}");
    Ok(CompareOutcome {
        mape_reduction_pct: row.mape_reduction_pct,
        rmse_reduction_pct: row.rmse_reduction_pct,
        mae_reduction_pct: row.mae_reduction_pct,
        better_pct: wtl.better_pct,
        tie_pct: wtl.tie_pct,
        worse_pct: wtl.worse_pct,
    })
}
