//! Resolution of pipeline/training/model settings from defaults plus an
//! optional config file, with a flattened snapshot for the run manifest.

use crate::kvconfig::KvConfig;
use crate::manifest::RunManifest;
use mpool_core::dataset::PipelineConfig;
use mpool_core::model::ModelConfig;
use mpool_core::pooling::PoolingStrategy;
use mpool_core::train::TrainConfig;
use mpool_core::Result;

pub fn resolve_pipeline(kv: &KvConfig, seed: u64) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    if let Some(v) = kv.f64("t_h")? {
        cfg.t_h = v;
    }
    if let Some(v) = kv.f64("t_f")? {
        cfg.t_f = v;
    }
    if let Some(v) = kv.u32("downsample")? {
        cfg.downsample = v;
    }
    if let Some(v) = kv.f64("segment_len")? {
        cfg.segment_len = v;
    }
    if let Some(v) = kv.f64("accel_threshold")? {
        cfg.accel_threshold = v;
    }
    let (mut tr, mut va, mut te) = cfg.split;
    if let Some(v) = kv.f64("split_train")? {
        tr = v;
    }
    if let Some(v) = kv.f64("split_val")? {
        va = v;
    }
    if let Some(v) = kv.f64("split_test")? {
        te = v;
    }
    cfg.split = (tr, va, te);
    if let Some(lanes) = kv.lane_set("onramp_lanes")? {
        cfg.onramp_lanes = lanes.into_iter().collect();
    }
    if let Some(v) = kv.f64("d_lat")? {
        cfg.neighborhood.d_lat = v;
    }
    if let Some(v) = kv.f64("d_lon")? {
        cfg.neighborhood.d_lon = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_train(kv: &KvConfig, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = kv.f64("learning_rate")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = kv.usize("batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = kv.usize("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = kv.f64("clip_norm")? {
        cfg.clip_norm = v;
    }
    if let Some(v) = kv.f64("lambda_traj")? {
        cfg.lambda_traj = v;
    }
    if let Some(v) = kv.f64("lambda_mnv")? {
        cfg.lambda_mnv = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_model(
    kv: &KvConfig,
    strategy: PoolingStrategy,
    maneuvers: bool,
    history_len: usize,
    future_len: usize,
    pipeline: &PipelineConfig,
) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::for_strategy(strategy, maneuvers);
    cfg.history_len = history_len;
    cfg.future_len = future_len;
    cfg.neighborhood = pipeline.neighborhood;
    if let Some(v) = kv.usize("embed_width")? {
        cfg.embed_width = v;
    }
    if let Some(v) = kv.usize("enc_hidden")? {
        cfg.enc_hidden = v;
    }
    if let Some(v) = kv.usize("dec_hidden")? {
        cfg.dec_hidden = v;
    }
    if let Some(v) = kv.usize("mlp_width")? {
        cfg.mlp_width = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn snapshot_pipeline(manifest: &mut RunManifest, cfg: &PipelineConfig) {
    manifest.set("t_h", cfg.t_h);
    manifest.set("t_f", cfg.t_f);
    manifest.set("native_rate", cfg.native_rate);
    manifest.set("downsample", cfg.downsample);
    manifest.set("segment_len", cfg.segment_len);
    manifest.set("accel_threshold", cfg.accel_threshold);
    manifest.set("split_train", cfg.split.0);
    manifest.set("split_val", cfg.split.1);
    manifest.set("split_test", cfg.split.2);
    manifest.set(
        "onramp_lanes",
        cfg.onramp_lanes
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("d_lat", cfg.neighborhood.d_lat);
    manifest.set("d_lon", cfg.neighborhood.d_lon);
}

pub fn snapshot_train(manifest: &mut RunManifest, cfg: &TrainConfig) {
    manifest.set("learning_rate", cfg.learning_rate);
    manifest.set("batch_size", cfg.batch_size);
    manifest.set("epochs", cfg.epochs);
    manifest.set("clip_norm", cfg.clip_norm);
    manifest.set("lambda_traj", cfg.lambda_traj);
    manifest.set("lambda_mnv", cfg.lambda_mnv);
}

pub fn snapshot_model(manifest: &mut RunManifest, cfg: &ModelConfig) {
    manifest.set("pooling", cfg.strategy.key());
    manifest.set("maneuvers", cfg.maneuvers);
    manifest.set(
        "output",
        match cfg.output {
            mpool_core::model::OutputKind::Bivariate => "bivariate",
            mpool_core::model::OutputKind::Trivariate => "trivariate",
        },
    );
    manifest.set("embed_width", cfg.embed_width);
    manifest.set("enc_hidden", cfg.enc_hidden);
    manifest.set("dec_hidden", cfg.dec_hidden);
    manifest.set("mlp_width", cfg.mlp_width);
    manifest.set("history_len", cfg.history_len);
    manifest.set("future_len", cfg.future_len);
}
