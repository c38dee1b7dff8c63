//! Report documents and deterministic artifact writers.
//!
//! Reports carry no timestamps or durations so a rerun with the same config
//! and seeds is byte-identical. Maps use sorted keys and every document
//! embeds the same provenance triple.

use d3_core::head::EpochLog;
use d3_core::metrics::EvalReport;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(command: &str, config_hash: &str, master_seed: u64) -> Self {
        Provenance {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            master_seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthReport {
    pub provenance: Provenance,
    pub manifest_path: String,
    pub generator_count: usize,
    pub record_count: usize,
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub materialized_images: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelTrainSummary {
    pub head_kind: String,
    pub pair_mode: String,
    pub best_epoch: u32,
    pub best_val_accuracy: f64,
    pub checkpoint: String,
    pub epochs: Vec<EpochLog>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub seed: u64,
    /// Generators whose samples appeared in training batches; must stay
    /// within the benchmark's train subset.
    pub train_generators: Vec<String>,
    pub head: ModelTrainSummary,
    pub baseline: ModelTrainSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub provenance: Provenance,
    pub seeds: Vec<u64>,
    pub runs: Vec<TrainRunReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRunReport {
    pub seed: u64,
    /// Config hash embedded in the loaded checkpoint; matches the report's
    /// own hash when eval runs under the training config.
    pub head_checkpoint_hash: String,
    pub baseline_checkpoint_hash: String,
    pub head: EvalReport,
    pub baseline: EvalReport,
    /// head OOD mean accuracy minus baseline OOD mean accuracy; absent when
    /// the benchmark has no held-out generators.
    pub ood_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub head_id_mean_acc: Option<f64>,
    pub head_ood_mean_acc: Option<f64>,
    pub head_total_mean_acc: f64,
    pub baseline_ood_mean_acc: Option<f64>,
    pub mean_ood_margin: Option<f64>,
    pub min_ood_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalCommandReport {
    pub provenance: Provenance,
    pub runs: Vec<EvalRunReport>,
    pub summary: EvalSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub order_index: usize,
    pub prefix: usize,
    pub train_generators: Vec<String>,
    pub id_generator: String,
    pub id_mean_acc: f64,
    pub ood_mean_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCurves {
    pub prefixes: Vec<usize>,
    pub id_mean_acc: Vec<f64>,
    pub ood_mean_acc: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaleSweepReport {
    pub provenance: Provenance,
    pub seed: u64,
    pub orders: Vec<Vec<String>>,
    pub cells: Vec<SweepCell>,
    pub curves: SweepCurves,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub perturbation: String,
    pub value: f64,
    pub total_mean_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub provenance: Provenance,
    pub seed: u64,
    pub clean: EvalReport,
    pub cells: Vec<RobustnessCell>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub head_kind: String,
    pub pair_mode: String,
    pub disruption: String,
    pub best_val_accuracy: f64,
    pub eval: EvalReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub provenance: Provenance,
    pub seed: u64,
    pub axis: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OcclusionMapSummary {
    pub generator_id: String,
    pub sample_id: String,
    pub baseline_probability: f64,
    pub min_drop: f64,
    pub max_drop: f64,
    /// IoU between the union of top-decile windows and the planted
    /// fingerprint support rectangle.
    pub top_decile_support_iou: f64,
    pub map_png: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub provenance: Provenance,
    pub seed: u64,
    pub window: u32,
    pub stride: u32,
    pub fill: u8,
    pub maps: Vec<OcclusionMapSummary>,
}

/// Pretty JSON with a trailing newline; the bytes are a pure function of the
/// document.
pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, doc)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Plain CSV: a header row plus preformatted lines.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)
}

pub fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fmt_opt_acc(v: Option<f64>) -> String {
    v.map_or_else(|| "".to_string(), fmt_acc)
}
