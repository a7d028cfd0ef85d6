//! Implementations of the five subcommands.

use crate::kvconfig::KvConfig;
use crate::manifest::RunManifest;
use crate::settings;
use mpool_core::dataset::{
    class_histogram, load_samples, load_tracks, save_samples, segment_scenes, split_dataset,
    synth_generate, AccelMix, ManeuverMix, PipelineConfig, SceneSample, SplitManifest,
    SynthConfig, TrackTable, Units,
};
use mpool_core::eval::{
    evaluate_by_maneuver_threads, render_comparison, render_report, EvalConfig, RmseReport,
};
use mpool_core::model::{Model, ModelConfig};
use mpool_core::nn::{load_checkpoint, save_checkpoint};
use mpool_core::pooling::PoolingStrategy;
use mpool_core::train::{train, TrainConfig};
use mpool_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Speeds above this (m/s) are implausible for highway traffic and usually
/// mean the units flag does not match the data.
const PLAUSIBLE_SPEED_MPS: f64 = 60.0;

#[derive(Debug, Serialize)]
struct DatasetStats {
    total_samples: usize,
    eval_classes: BTreeMap<String, usize>,
    joint_classes: BTreeMap<String, usize>,
    splits: BTreeMap<String, usize>,
    max_speed_mps: f64,
    warnings: Vec<String>,
}

/// Checkpoint sidecar: everything needed to rebuild and evaluate the model.
#[derive(Debug, Serialize, Deserialize)]
pub struct CkptSidecar {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub effective_rate_hz: f64,
}

fn load_kv(config: &Option<PathBuf>) -> Result<KvConfig> {
    match config {
        Some(path) => KvConfig::load(path),
        None => Ok(KvConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn max_speed(table: &TrackTable) -> f64 {
    table
        .tracks
        .values()
        .flat_map(|t| t.iter().map(|p| p.v))
        .fold(0.0, f64::max)
}

/// Segment, label, split, and write a dataset directory. Returns the stats.
fn write_dataset(
    out: &Path,
    table: &TrackTable,
    pipeline: &PipelineConfig,
    manifest: &mut RunManifest,
) -> Result<DatasetStats> {
    ensure_dir(out)?;
    let samples = segment_scenes(table, pipeline)?;
    if samples.is_empty() {
        return Err(Error::Data(
            "no scene samples: every track is shorter than one full history + future window"
                .into(),
        ));
    }
    let histogram = class_histogram(&samples);
    let (train_set, val_set, test_set) = split_dataset(samples, pipeline);

    let mut warnings = Vec::new();
    let top_speed = max_speed(table);
    if top_speed > PLAUSIBLE_SPEED_MPS {
        warnings.push(format!(
            "max speed {top_speed:.1} m/s exceeds {PLAUSIBLE_SPEED_MPS} m/s; check the --units flag"
        ));
    }

    for (name, set) in [
        ("train.bin", &train_set),
        ("val.bin", &val_set),
        ("test.bin", &test_set),
    ] {
        let path = out.join(name);
        save_samples(set, &path)?;
        manifest.artifact(&path);
    }

    let split_manifest = SplitManifest::from_splits(pipeline.seed, &train_set, &val_set, &test_set);
    let split_path = out.join("split_manifest.json");
    std::fs::write(
        &split_path,
        serde_json::to_string_pretty(&split_manifest)
            .map_err(|e| Error::Format(e.to_string()))?,
    )?;
    manifest.artifact(&split_path);

    let stats = DatasetStats {
        total_samples: histogram.total,
        eval_classes: histogram.eval,
        joint_classes: histogram.joint,
        splits: [
            ("train".to_string(), train_set.len()),
            ("val".to_string(), val_set.len()),
            ("test".to_string(), test_set.len()),
        ]
        .into_iter()
        .collect(),
        max_speed_mps: top_speed,
        warnings,
    };
    let stats_path = out.join("stats.json");
    std::fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    manifest.artifact(&stats_path);
    Ok(stats)
}

pub fn cmd_preprocess(
    input: &Path,
    units: Units,
    out: &Path,
    config: &Option<PathBuf>,
    seed: u64,
) -> Result<()> {
    let kv = load_kv(config)?;
    let pipeline = settings::resolve_pipeline(&kv, seed)?;

    let mut manifest = RunManifest::new("preprocess", seed);
    manifest.overrides = kv.overrides().clone();
    settings::snapshot_pipeline(&mut manifest, &pipeline);
    manifest.hash_input(input)?;

    let table = load_tracks(input, units)?;
    let stats = write_dataset(out, &table, &pipeline, &mut manifest)?;

    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "preprocessed {} samples (train {}, val {}, test {}) -> {}",
        stats.total_samples,
        stats.splits["train"],
        stats.splits["val"],
        stats.splits["test"],
        out.display()
    );
    manifest.finish_and_write(&out.join("manifest.json"))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    lanes: u32,
    vehicles: usize,
    mix: &str,
    accel_mix: &str,
    noise: f64,
    duration: f64,
    lead: f64,
    seed: u64,
    out: &Path,
    config: &Option<PathBuf>,
) -> Result<()> {
    let kv = load_kv(config)?;
    let synth_cfg = SynthConfig {
        lanes,
        vehicles,
        mix: ManeuverMix::parse(mix)?,
        accel_mix: AccelMix::parse(accel_mix)?,
        noise_sigma: noise,
        seed,
        duration_s: duration,
        maneuver_lead_s: lead,
        ..SynthConfig::default()
    };
    // Scenario pipeline: configured overrides, but the on-ramp id follows
    // the generated road unless explicitly set.
    let mut pipeline = settings::resolve_pipeline(&kv, seed)?;
    if kv.lane_set("onramp_lanes")?.is_none() {
        pipeline.onramp_lanes = [synth_cfg.onramp_lane()].into_iter().collect();
    }

    let mut manifest = RunManifest::new("synth", seed);
    manifest.overrides = kv.overrides().clone();
    settings::snapshot_pipeline(&mut manifest, &pipeline);
    manifest.set("lanes", lanes);
    manifest.set("vehicles", vehicles);
    manifest.set("mix", mix);
    manifest.set("accel_mix", accel_mix);
    manifest.set("noise", noise);
    manifest.set("duration", duration);
    manifest.set("lead", lead);

    let output = synth_generate(&synth_cfg)?;
    ensure_dir(out)?;

    let tracks_path = out.join("tracks.csv");
    let mut csv = Vec::new();
    mpool_core::dataset::ingest::write_tracks_csv(&output.table, &mut csv)?;
    std::fs::write(&tracks_path, csv)?;
    manifest.artifact(&tracks_path);

    let intents_path = out.join("intents.json");
    std::fs::write(
        &intents_path,
        serde_json::to_string_pretty(&output.intents)
            .map_err(|e| Error::Format(e.to_string()))?,
    )?;
    manifest.artifact(&intents_path);

    let stats = write_dataset(out, &output.table, &pipeline, &mut manifest)?;
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "synthesized {} vehicles, {} samples (train {}, val {}, test {}) -> {}",
        vehicles,
        stats.total_samples,
        stats.splits["train"],
        stats.splits["val"],
        stats.splits["test"],
        out.display()
    );
    manifest.finish_and_write(&out.join("manifest.json"))?;
    Ok(())
}

fn shapes_of(samples: &[SceneSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("empty sample file".into()))?;
    Ok((first.ego_history.len(), first.future.len()))
}

pub fn cmd_train(
    data: &Path,
    pooling: &str,
    maneuvers: bool,
    config: &Option<PathBuf>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let strategy = PoolingStrategy::from_key(pooling)?;
    let kv = load_kv(config)?;
    let pipeline = settings::resolve_pipeline(&kv, seed)?;
    let train_cfg = settings::resolve_train(&kv, seed)?;

    let train_set = load_samples(&data.join("train.bin"))?;
    let val_set = load_samples(&data.join("val.bin"))?;
    let (history_len, future_len) = shapes_of(&train_set)?;
    let model_cfg = settings::resolve_model(
        &kv,
        strategy,
        maneuvers,
        history_len,
        future_len,
        &pipeline,
    )?;

    let mut manifest = RunManifest::new("train", seed);
    manifest.overrides = kv.overrides().clone();
    settings::snapshot_pipeline(&mut manifest, &pipeline);
    settings::snapshot_train(&mut manifest, &train_cfg);
    settings::snapshot_model(&mut manifest, &model_cfg);
    manifest.hash_input(&data.join("train.bin"))?;
    manifest.hash_input(&data.join("val.bin"))?;

    let mut model = Model::init(model_cfg, seed)?;
    let metrics = train(&mut model, &train_set, &val_set, &train_cfg)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(&model.params, out)?;
    manifest.artifact(out);

    let sidecar = CkptSidecar {
        model: model.cfg.clone(),
        train: train_cfg,
        effective_rate_hz: pipeline.effective_rate(),
    };
    let sidecar_path = sidecar_path_for(out);
    std::fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    manifest.artifact(&sidecar_path);

    let metrics_path = out.with_extension("metrics.jsonl");
    let mut log = Vec::new();
    for m in &metrics {
        writeln!(
            log,
            "{}",
            serde_json::json!({"epoch": m.epoch, "split": "train", "loss": m.train_loss})
        )?;
        if let Some(val) = m.val_loss {
            writeln!(
                log,
                "{}",
                serde_json::json!({"epoch": m.epoch, "split": "val", "loss": val})
            )?;
        }
    }
    std::fs::write(&metrics_path, log)?;
    manifest.artifact(&metrics_path);

    if let Some(last) = metrics.last() {
        println!(
            "trained {} ({} epochs): train loss {:.4}{}",
            strategy.key(),
            metrics.len(),
            last.train_loss,
            match last.val_loss {
                Some(v) => format!(", val loss {v:.4}"),
                None => String::new(),
            }
        );
    }
    manifest.finish_and_write(&manifest_path_for(out))?;
    Ok(())
}

pub fn sidecar_path_for(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

fn manifest_path_for(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_model(ckpt: &Path) -> Result<(Model, CkptSidecar)> {
    let params = load_checkpoint(ckpt)?;
    let sidecar_path = sidecar_path_for(ckpt);
    let sidecar_text = std::fs::read_to_string(&sidecar_path).map_err(|e| {
        Error::Config(format!(
            "cannot read checkpoint sidecar {}: {e}",
            sidecar_path.display()
        ))
    })?;
    let sidecar: CkptSidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| Error::Format(e.to_string()))?;
    let model = Model::from_parts(sidecar.model.clone(), params)?;
    Ok((model, sidecar))
}

fn check_compat(model: &Model, samples: &[SceneSample], ckpt: &Path) -> Result<()> {
    let (h, f) = shapes_of(samples)?;
    if h != model.cfg.history_len || f != model.cfg.future_len {
        return Err(Error::Config(format!(
            "checkpoint {} expects H={}, F={} but the data file has H={h}, F={f}",
            ckpt.display(),
            model.cfg.history_len,
            model.cfg.future_len
        )));
    }
    Ok(())
}

fn eval_one(ckpt: &Path, test: &[SceneSample], threads: usize) -> Result<(Model, RmseReport)> {
    let (model, sidecar) = load_model(ckpt)?;
    check_compat(&model, test, ckpt)?;
    let eval_cfg = EvalConfig {
        rate_hz: sidecar.effective_rate_hz,
        ..EvalConfig::default()
    };
    let report = evaluate_by_maneuver_threads(&model, test, &eval_cfg, threads)?;
    Ok((model, report))
}

pub fn cmd_eval(ckpt: &Path, data: &Path, report: &Option<PathBuf>, threads: usize) -> Result<()> {
    let test = load_samples(&data.join("test.bin"))?;
    let (model, rmse_report) = eval_one(ckpt, &test, threads)?;
    print!(
        "{}",
        render_report(&rmse_report, Some(model.cfg.strategy))
    );
    if let Some(path) = report {
        let json = serde_json::json!({
            "strategy": model.cfg.strategy.key(),
            "maneuvers": model.cfg.maneuvers,
            "report": rmse_report,
        });
        std::fs::write(
            path,
            serde_json::to_string_pretty(&json).map_err(|e| Error::Format(e.to_string()))?,
        )?;
    }
    Ok(())
}

pub fn cmd_compare(
    ckpts: &[PathBuf],
    data: &Path,
    report: &Option<PathBuf>,
    threads: usize,
) -> Result<()> {
    let test = load_samples(&data.join("test.bin"))?;
    let mut reports: Vec<(String, RmseReport)> = Vec::new();
    for ckpt in ckpts {
        let (model, rmse_report) = eval_one(ckpt, &test, threads)?;
        reports.push((model.cfg.strategy.key().to_string(), rmse_report));
    }
    print!("{}", render_comparison(&reports));
    if let Some(path) = report {
        let map: BTreeMap<String, &RmseReport> = reports
            .iter()
            .map(|(name, r)| (name.clone(), r))
            .collect();
        std::fs::write(
            path,
            serde_json::to_string_pretty(&map).map_err(|e| Error::Format(e.to_string()))?,
        )?;
    }
    Ok(())
}
