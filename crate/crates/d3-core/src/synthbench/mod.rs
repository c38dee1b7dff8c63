//! Synthetic generator-fingerprint benchmark.
//!
//! "Real" images are procedural scenes (1/f noise base, smooth-shaded shapes,
//! sensor noise). "Fake" images add two planted traces to the same scene: a
//! universal fingerprint shared by every generator and a generator-specific
//! fingerprint. Detectors that latch onto specific fingerprints fit the
//! training generators and transfer poorly; the universal component is what
//! carries to unseen generators.

mod manifest;
mod synth;

pub use manifest::{build_manifest, load_manifest, save_manifest};
pub use synth::{
    specific_support_rect, synth_fake, synth_real, synth_record, universal_seed,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark spec invalid: {0}")]
    BadSpec(String),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest schema_version {0} is not supported (expected 1)")]
    UnknownSchemaVersion(u32),
    #[error("record {sample_id} references unknown generator {generator_id}")]
    UnknownGenerator { sample_id: String, generator_id: String },
    #[error("manifest integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GanLike,
    DiffusionLike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub generator_id: String,
    pub family: Family,
    /// Generators sharing a group are variants of one architecture and get
    /// merged during evaluation.
    pub architecture_group: String,
    pub specific_fingerprint_seed: u64,
    pub specific_amplitude: f32,
    pub universal_amplitude: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub generators: Vec<GeneratorSpec>,
    /// Generator ids whose samples may appear in the train split.
    pub train_subset: Vec<String>,
    pub samples_per_generator_per_class: u32,
    pub image_size: u32,
    pub master_seed: u64,
    pub validation_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub generator_id: String,
    pub label: Label,
    pub split: Split,
    pub architecture_group: String,
    pub sample_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub spec: BenchmarkSpec,
    pub records: Vec<SampleRecord>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::BadSpec(m));
        if self.generators.is_empty() {
            return bad("no generators".into());
        }
        let mut ids: Vec<&str> = self.generators.iter().map(|g| g.generator_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate generator_id".into());
        }
        for t in &self.train_subset {
            if !self.generators.iter().any(|g| &g.generator_id == t) {
                return bad(format!("train_subset entry {t} is not a generator"));
            }
        }
        if self.samples_per_generator_per_class == 0 {
            return bad("samples_per_generator_per_class must be positive".into());
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction {} outside [0, 1)", self.validation_fraction));
        }
        for g in &self.generators {
            if g.specific_amplitude < 0.0 || g.universal_amplitude < 0.0 {
                return bad(format!("{}: amplitudes must be nonnegative", g.generator_id));
            }
        }
        Ok(())
    }

    pub fn generator(&self, id: &str) -> Option<&GeneratorSpec> {
        self.generators.iter().find(|g| g.generator_id == id)
    }

    pub fn is_train_generator(&self, id: &str) -> bool {
        self.train_subset.iter().any(|t| t == id)
    }

    /// Per (generator, class) allocation: train-subset generators split their
    /// record budget 50/50 into train and test-destined, and the val slice is
    /// carved from the test-destined half. Others are test only.
    pub fn split_counts(&self, generator_id: &str) -> SplitCounts {
        let total = self.samples_per_generator_per_class;
        if self.is_train_generator(generator_id) {
            let train = total / 2;
            let destined = total - train;
            let val = (self.validation_fraction * destined as f64).round() as u32;
            let val = val.min(destined);
            SplitCounts { train, test: destined - val, val }
        } else {
            SplitCounts { train: 0, test: total, val: 0 }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: u32,
    pub test: u32,
    pub val: u32,
}

/// The stock twenty-generator benchmark: eight training generators (two
/// gan_like, six diffusion_like) and twelve held out, including one held-out
/// architecture pair that exercises result merging.
pub fn default_benchmark() -> BenchmarkSpec {
    let gen = |id: &str, family: Family, group: &str, seed: u64| GeneratorSpec {
        generator_id: id.into(),
        family,
        architecture_group: group.into(),
        specific_fingerprint_seed: seed,
        specific_amplitude: 10.0,
        universal_amplitude: 4.0,
    };
    let g = Family::GanLike;
    let d = Family::DiffusionLike;
    let generators = vec![
        gen("gan_alpha", g, "gan_alpha", 101),
        gen("gan_beta", g, "gan_beta", 102),
        gen("dm_alpha", d, "dm_alpha", 103),
        gen("dm_beta", d, "dm_beta", 104),
        gen("dm_gamma", d, "dm_gamma", 105),
        gen("dm_delta", d, "dm_delta", 106),
        gen("dm_epsilon", d, "dm_epsilon", 107),
        gen("dm_zeta", d, "dm_zeta", 108),
        gen("gan_gamma", g, "gan_gamma", 109),
        gen("gan_delta", g, "gan_delta", 110),
        gen("gan_epsilon", g, "gan_epsilon", 111),
        gen("gan_zeta", g, "gan_zeta", 112),
        gen("gan_eta", g, "gan_eta", 113),
        gen("gan_theta", g, "gan_theta", 114),
        gen("dm_eta_v1", d, "dm_eta", 115),
        gen("dm_eta_v2", d, "dm_eta", 116),
        gen("dm_iota", d, "dm_iota", 117),
        gen("dm_kappa", d, "dm_kappa", 118),
        gen("dm_lambda", d, "dm_lambda", 119),
        gen("dm_mu", d, "dm_mu", 120),
    ];
    BenchmarkSpec {
        generators,
        train_subset: vec![
            "gan_alpha".into(),
            "gan_beta".into(),
            "dm_alpha".into(),
            "dm_beta".into(),
            "dm_gamma".into(),
            "dm_delta".into(),
            "dm_epsilon".into(),
            "dm_zeta".into(),
        ],
        samples_per_generator_per_class: 200,
        image_size: 224,
        master_seed: 17,
        validation_fraction: 0.10,
    }
}
