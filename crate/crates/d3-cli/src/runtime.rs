//! Shared harness plumbing: error taxonomy, resolved environment, per-run
//! seed derivation, and the lockstep trainer every experiment reuses.

use crate::config::ExperimentConfig;
use crate::reports::Provenance;
use d3_core::backbone::ToyBackbone;
use d3_core::head::{
    load_checkpoint, save_checkpoint, CheckpointMeta, HeadKind, HeadModel, PairMode, TrainConfig,
    TrainOutcome, Trainer,
};
use d3_core::imagekit::Disruption;
use d3_core::metrics::{eval_report, EvalReport};
use d3_core::pipeline::{scored_eval, EvalSet, TrainStream};
use d3_core::rng::derive_seed;
use d3_core::synthbench::Manifest;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;

pub const THRESHOLD: f64 = 0.5;

/// Failures sort into the two nonzero exit codes: bad inputs (1) and
/// everything that breaks after inputs were accepted (2).
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

pub fn rt(err: impl Display) -> CliError {
    CliError::Runtime(err.to_string())
}

/// Config resolved into live objects; construction performs all launch-time
/// validation.
pub struct Env {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub manifest: Manifest,
    pub backbone: ToyBackbone,
}

impl Env {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate().map_err(CliError::Validation)?;
        let config_hash = config.hash();
        let manifest = config.manifest().map_err(CliError::Validation)?;
        let backbone = config.backbone().map_err(CliError::Validation)?;
        Ok(Env { config, config_hash, manifest, backbone })
    }

    pub fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(command, &self.config_hash, self.manifest.spec.master_seed)
    }

    /// Training config actually used for a run: shuffle order is derived
    /// from the run seed, everything else comes from the config file.
    pub fn run_train_config(&self, run_seed: u64) -> TrainConfig {
        TrainConfig { seed: derive_seed(run_seed, "shuffle", &[]), ..self.config.train.clone() }
    }
}

pub fn stream_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, "stream", &[])
}

pub fn init_seed(run_seed: u64, slot: u64) -> u64 {
    derive_seed(run_seed, "init", &[slot])
}

/// One model trained against a shared stream: which disruption column it
/// consumes and which init slot seeds its parameters.
pub struct ModelSlot {
    pub kind: HeadKind,
    pub pair_mode: PairMode,
    pub init_slot: u64,
    pub stream_index: usize,
}

pub struct LockstepOutcome {
    pub outcomes: Vec<TrainOutcome>,
    /// Sorted generator ids observed in training batches.
    pub train_generators: Vec<String>,
}

/// Trains every slot against one augmentation stream so all models see
/// byte-identical inputs per epoch. `restrict` drops generators before
/// training (the scale sweep trains on prefixes).
pub fn train_lockstep(
    env: &Env,
    disruptions: Vec<Disruption>,
    run_seed: u64,
    slots: &[ModelSlot],
    restrict: Option<&BTreeSet<String>>,
) -> Result<LockstepOutcome, CliError> {
    let cfg = env.run_train_config(run_seed);
    let mut stream = TrainStream::new(
        &env.manifest,
        &env.backbone,
        env.config.augmentation.clone(),
        disruptions,
        stream_seed(run_seed),
    )
    .map_err(rt)?;
    if let Some(keep) = restrict {
        stream.restrict_generators(keep).map_err(rt)?;
    }

    let dim = env.backbone.out_dim();
    let mut trainers = Vec::with_capacity(slots.len());
    for slot in slots {
        let model = HeadModel::new(slot.kind, slot.pair_mode, dim, init_seed(run_seed, slot.init_slot))
            .map_err(rt)?;
        trainers.push(Trainer::new(model, cfg.clone()).map_err(rt)?);
    }

    let val = stream.val_pairs().map_err(rt)?;
    let mut train_generators: BTreeSet<String> = BTreeSet::new();
    for epoch in 0..cfg.epochs {
        let pairs = stream.epoch_pairs(epoch).map_err(rt)?;
        if epoch == 0 {
            for p in &pairs[0] {
                train_generators.insert(p.generator_id.clone());
            }
            for gen in &train_generators {
                if !env.manifest.spec.is_train_generator(gen) {
                    return Err(CliError::Runtime(format!(
                        "out-of-domain generator {gen} leaked into a training batch"
                    )));
                }
            }
        }
        for (trainer, slot) in trainers.iter_mut().zip(slots) {
            trainer.train_epoch(epoch, &pairs[slot.stream_index]).map_err(rt)?;
            trainer.validate_epoch(epoch, &val[slot.stream_index]).map_err(rt)?;
        }
    }

    Ok(LockstepOutcome {
        outcomes: trainers.into_iter().map(Trainer::finish).collect(),
        train_generators: train_generators.into_iter().collect(),
    })
}

pub fn save_model(
    path: &Path,
    model: &HeadModel,
    cfg_used: &TrainConfig,
    config_hash: &str,
) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(rt)?;
    }
    let meta = CheckpointMeta {
        train: cfg_used.clone(),
        config_hash: config_hash.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    save_checkpoint(path, model, &meta).map_err(rt)
}

pub fn load_model(path: &Path) -> Result<(HeadModel, CheckpointMeta), CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "checkpoint {} not found; run `d3 train` first",
            path.display()
        )));
    }
    load_checkpoint(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn eval_model(
    model: &HeadModel,
    set: &EvalSet,
    resample_seed: u64,
) -> Result<EvalReport, CliError> {
    let scored = scored_eval(model, set).map_err(rt)?;
    eval_report(&scored, THRESHOLD, resample_seed).map_err(rt)
}

/// Label strings used in reports and file names.
pub fn head_kind_label(kind: HeadKind) -> &'static str {
    match kind {
        HeadKind::FcOnly => "fc_only",
        HeadKind::Mlp => "mlp",
        HeadKind::SelfAttention => "self_attention",
        HeadKind::Transformer2 => "transformer2",
    }
}

pub fn pair_mode_label(mode: PairMode) -> &'static str {
    match mode {
        PairMode::OriginalOnly => "original_only",
        PairMode::OriginalDisrupted => "original_disrupted",
        PairMode::OriginalOriginal => "original_original",
        PairMode::DisruptedDisrupted => "disrupted_disrupted",
    }
}

pub fn disruption_label(d: &Disruption) -> String {
    match d {
        Disruption::PatchShuffle { patch_size } => format!("patch_shuffle_{patch_size}"),
        Disruption::HorizontalFlip => "horizontal_flip".to_string(),
        Disruption::VerticalFlip => "vertical_flip".to_string(),
        Disruption::RandomRotation { .. } => "random_rotation".to_string(),
    }
}
