//! File-level workflows behind the command-line subcommands.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{Error, Result};
use crate::labels::LabelSchema;
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::pipeline::{recording_instances, schema_from_recordings, Instance, Normalizer, PrepareStats, Recording, SensorLayout, ANNOTATION_FILE};
use crate::report::{read_json, render_loss_curves, summary_line, write_ablation_table, write_json, write_metrics_report, RunArtifact};
use crate::training::{ablate, evaluate_at, grid_search, split_by_user, take_split, train, Ablation, TrainConfig};

pub const DATASET_FILE: &str = "dataset.json";
pub const SCHEMA_FILE: &str = "schema.csv";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Normalized, split instances as written by [`prepare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub layout: SensorLayout,
    pub stats: PrepareStats,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl PreparedData {
    pub fn split(&self, name: &str) -> Result<&[Instance]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val or test)"))),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Recording directories under `raw`, or `raw` itself if it is one.
pub fn find_recordings(raw: &Path) -> Result<Vec<PathBuf>> {
    if raw.join(ANNOTATION_FILE).is_file() {
        return Ok(vec![raw.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(raw)
        .map_err(|e| Error::io(raw, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ANNOTATION_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no recordings (directories with {ANNOTATION_FILE}) under {}", raw.display())));
    }
    Ok(dirs)
}

/// Raw recordings to a normalized, split dataset plus schema and
/// normalizer files in `out`.
pub fn prepare(cfg: &AppConfig, raw: &Path, out: &Path) -> Result<PreparedData> {
    let recordings = find_recordings(raw)?.iter().map(|d| Recording::read_dir(d)).collect::<Result<Vec<_>>>()?;
    let schema = schema_from_recordings(&recordings)?;
    let layout = recordings[0].layout();
    let mut instances = Vec::new();
    let mut stats = PrepareStats::default();
    for rec in &recordings {
        let (inst, s) = recording_instances(rec, &layout, &schema, &cfg.pipeline)?;
        instances.extend(inst);
        stats += s;
    }
    info!("prepared {} instances from {} recordings: {stats:?}", instances.len(), recordings.len());
    let users: Vec<String> = instances.iter().map(|i| i.user_id.clone()).collect();
    let idx = split_by_user(&users, &cfg.split)?;
    let (mut train, mut val, mut test) = take_split(instances, &idx);
    let feats: Vec<_> = train.iter().map(|i| i.features.clone()).collect();
    let normalizer = Normalizer::fit(&feats)?;
    for set in [&mut train, &mut val, &mut test] {
        for inst in set.iter_mut() {
            inst.features = normalizer.apply(&inst.features)?;
        }
    }
    let seen: BTreeSet<&str> = train.iter().map(|i| i.user_id.as_str()).collect();
    if seen.len() < schema.num_users() {
        warn!("{} of {} users have no training instances", schema.num_users() - seen.len(), schema.num_users());
    }
    let data = PreparedData { layout, stats, train, val, test };
    ensure_dir(out)?;
    write_json(&out.join(DATASET_FILE), &data)?;
    write_json(&out.join(NORMALIZER_FILE), &normalizer)?;
    schema.write_csv(&out.join(SCHEMA_FILE))?;
    Ok(data)
}

pub fn load_prepared(dir: &Path) -> Result<(LabelSchema, PreparedData)> {
    let schema = LabelSchema::read_csv(&dir.join(SCHEMA_FILE))?;
    let data: PreparedData = read_json(&dir.join(DATASET_FILE))?;
    Ok((schema, data))
}

fn config_snapshot(cfg: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Trains one model; writes checkpoint, history, loss curves, validation
/// metrics and the run manifest into `out`.
pub fn run_train(cfg: &AppConfig, data_dir: &Path, out: &Path) -> Result<RunArtifact> {
    let (schema, data) = load_prepared(data_dir)?;
    train_and_record(&cfg.train, cfg.metrics.threshold, &schema, &data, out, "train")
}

fn train_and_record(tc: &TrainConfig, threshold: f64, schema: &LabelSchema, data: &PreparedData, out: &Path, run_id: &str) -> Result<RunArtifact> {
    ensure_dir(out)?;
    let (model, history) = train(tc, schema, &data.train, &data.val)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;
    let (hist_csv, _) = render_loss_curves(&history, tc.effective_weights().alpha == 0.0, out, "history")?;
    let val = evaluate_at(&model, schema, &data.val, threshold)?;
    info!("validation: {}", summary_line(&val));
    let mut reports = write_metrics_report(&val, out, "val_metrics")?;
    let hist_json = out.join("history.json");
    write_json(&hist_json, &history)?;
    reports.push(hist_json);
    let art = RunArtifact {
        run_id: run_id.to_string(),
        config: config_snapshot(tc),
        history_path: Some(hist_csv),
        report_paths: reports,
        checkpoint_path: Some(ckpt),
    };
    art.write(out)?;
    Ok(art)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridRow {
    trial: usize,
    alpha: f64,
    gamma1: f64,
    gamma2: f64,
    learning_rate: f64,
    d_t: usize,
    best_epoch: usize,
    val_activity_mcc: f64,
}

/// Grid search; writes one history per trial, a trial summary and the
/// selected configuration.
pub fn run_grid(cfg: &AppConfig, data_dir: &Path, out: &Path) -> Result<TrainConfig> {
    let (schema, data) = load_prepared(data_dir)?;
    ensure_dir(out)?;
    let result = grid_search(&cfg.train, &cfg.grid, &schema, &data.train, &data.val)?;
    let path = out.join("grid.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    for (i, t) in result.trials.iter().enumerate() {
        let c = &t.config;
        w.serialize(GridRow {
            trial: i,
            alpha: c.loss_weights.alpha,
            gamma1: c.loss_weights.gamma1,
            gamma2: c.loss_weights.gamma2,
            learning_rate: c.learning_rate,
            d_t: c.d_t,
            best_epoch: t.history.best_epoch,
            val_activity_mcc: t.val_mcc,
        })
        .map_err(|e| Error::parse(&path, e))?;
        render_loss_curves(&t.history, c.effective_weights().alpha == 0.0, out, &format!("trial_{i:03}_history"))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let best = result.best_config().clone();
    let snapshot = AppConfig { train: best.clone(), ..cfg.clone() };
    let toml_path = out.join("best_config.toml");
    std::fs::write(&toml_path, snapshot.to_toml()?).map_err(|e| Error::io(&toml_path, e))?;
    info!("best trial {} with val activity MCC {:.4}", result.best, result.trials[result.best].val_mcc);
    Ok(best)
}

/// Scores a checkpoint on one split and writes the metrics report.
pub fn run_eval(cfg: &AppConfig, data_dir: &Path, checkpoint: &Path, split: &str, out: &Path) -> Result<crate::metrics::EvalReport> {
    let (schema, data) = load_prepared(data_dir)?;
    let model: Model = load_checkpoint(checkpoint)?;
    let report = evaluate_at(&model, &schema, data.split(split)?, cfg.metrics.threshold)?;
    ensure_dir(out)?;
    write_metrics_report(&report, out, &format!("{split}_metrics"))?;
    info!("{split}: {}", summary_line(&report));
    Ok(report)
}

/// Trains all four variants and writes the test-set ablation table.
pub fn run_ablate(cfg: &AppConfig, data_dir: &Path, out: &Path) -> Result<PathBuf> {
    let (schema, data) = load_prepared(data_dir)?;
    ensure_dir(out)?;
    let runs = ablate(&cfg.train, &Ablation::ALL, &schema, &data.train, &data.val, &data.test)?;
    let mut rows = Vec::new();
    for (run, model) in &runs {
        let name = run.variant.variant_name();
        let dir = out.join(name);
        ensure_dir(&dir)?;
        save_checkpoint(model, &dir.join(CHECKPOINT_FILE))?;
        render_loss_curves(&run.history, cfg.train.ablation.loss_weights(cfg.train.loss_weights).alpha == 0.0 || run.variant == Ablation::NoCl, &dir, "history")?;
        write_metrics_report(&run.test, &dir, "test_metrics")?;
        rows.push((name.to_string(), run.test.clone()));
    }
    let table = out.join("ablation.txt");
    write_ablation_table(&rows, &table)?;
    Ok(table)
}

/// Writes synthetic recordings for the `[synth]` section.
pub fn run_gen_synth(cfg: &AppConfig, out: &Path) -> Result<Vec<String>> {
    ensure_dir(out)?;
    crate::synth::write_recordings(&cfg.synth.spec(), cfg.synth.seed, cfg.synth.bout_s, cfg.pipeline.step_s, out)
}
