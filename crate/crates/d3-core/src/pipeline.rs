//! End-to-end plumbing: manifest records are synthesized, augmented,
//! disrupted, and embedded into the pair samples the heads consume.
//!
//! Training re-augments every epoch from a fixed per-(epoch, index) stream,
//! so a run is a pure function of its seeds. Evaluation embeds each test
//! record once; the disruption draw for record `i` depends only on the eval
//! seed and `i`, never on which degradation (if any) was applied, so the
//! clean column of a robustness table is bit-identical to a plain eval.

use crate::backbone::{BackboneError, ToyBackbone};
use crate::head::{HeadError, HeadModel, PairSample};
use crate::imagekit::{
    augment, disrupt, eval_preprocess, gaussian_blur, jpeg_roundtrip, AugmentationPolicy,
    Disruption, ImageOpError, RgbImage,
};
use crate::metrics::{Domain, ScoredSample};
use crate::rng::derive_rng;
use crate::synthbench::{synth_record, BenchError, Manifest, SampleRecord, Split};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Image(#[from] ImageOpError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("manifest has no {0:?} records")]
    EmptySplit(Split),
    #[error("occlusion window {window}px does not fit a {width}x{height} image")]
    WindowTooLarge { window: u32, width: u32, height: u32 },
}

/// Synthesizes manifest samples on demand, optionally keeping every base
/// image in memory (worth it for the train split, which is revisited each
/// epoch; pointless for eval, which is visited once).
pub struct SampleSource<'a> {
    manifest: &'a Manifest,
    cache: Option<HashMap<u64, RgbImage>>,
}

impl<'a> SampleSource<'a> {
    pub fn new(manifest: &'a Manifest, cache_images: bool) -> Self {
        Self { manifest, cache: cache_images.then(HashMap::new) }
    }

    pub fn image(&mut self, record: &SampleRecord) -> Result<RgbImage, PipelineError> {
        if let Some(cache) = &mut self.cache {
            if let Some(img) = cache.get(&record.sample_seed) {
                return Ok(img.clone());
            }
            let img = synth_record(&self.manifest.spec, record)?;
            cache.insert(record.sample_seed, img.clone());
            return Ok(img);
        }
        Ok(synth_record(&self.manifest.spec, record)?)
    }
}

/// Produces per-epoch training pairs for one or more disruptions at once.
///
/// The base image and its augmentation are shared across all requested
/// disruptions, so training k disruption variants costs one augmented
/// embedding plus k disrupted embeddings per sample instead of 2k.
pub struct TrainStream<'a> {
    manifest: &'a Manifest,
    train_indices: Vec<usize>,
    val_indices: Vec<usize>,
    source: SampleSource<'a>,
    backbone: &'a ToyBackbone,
    policy: AugmentationPolicy,
    disruptions: Vec<Disruption>,
    seed: u64,
}

impl<'a> TrainStream<'a> {
    pub fn new(
        manifest: &'a Manifest,
        backbone: &'a ToyBackbone,
        policy: AugmentationPolicy,
        disruptions: Vec<Disruption>,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        policy.validate()?;
        let by_split = |split: Split| -> Vec<usize> {
            manifest
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.split == split)
                .map(|(i, _)| i)
                .collect()
        };
        let train_indices = by_split(Split::Train);
        let val_indices = by_split(Split::Val);
        if train_indices.is_empty() {
            return Err(PipelineError::EmptySplit(Split::Train));
        }
        Ok(Self {
            manifest,
            train_indices,
            val_indices,
            source: SampleSource::new(manifest, true),
            backbone,
            policy,
            disruptions,
            seed,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_indices.len()
    }

    pub fn disruptions(&self) -> &[Disruption] {
        &self.disruptions
    }

    /// Drops train and val records of every generator not in `keep`; used by
    /// the generator-count sweep to train on a prefix of the train subset.
    pub fn restrict_generators(&mut self, keep: &BTreeSet<String>) -> Result<(), PipelineError> {
        let records = &self.manifest.records;
        self.train_indices.retain(|&i| keep.contains(&records[i].generator_id));
        self.val_indices.retain(|&i| keep.contains(&records[i].generator_id));
        if self.train_indices.is_empty() {
            return Err(PipelineError::EmptySplit(Split::Train));
        }
        Ok(())
    }

    /// One freshly augmented epoch. The outer vec is indexed like
    /// `disruptions`; inner vecs follow manifest record order.
    pub fn epoch_pairs(&mut self, epoch: u32) -> Result<Vec<Vec<PairSample>>, PipelineError> {
        let mut out: Vec<Vec<PairSample>> =
            (0..self.disruptions.len()).map(|_| Vec::with_capacity(self.train_indices.len())).collect();
        for (i, &ri) in self.train_indices.clone().iter().enumerate() {
            let record = &self.manifest.records[ri];
            let base = self.source.image(record)?;
            let mut aug_rng = derive_rng(self.seed, "aug", &[u64::from(epoch), i as u64]);
            let augmented = augment(&base, &self.policy, &mut aug_rng)?;
            let original = self.backbone.embed(&augmented)?;
            for (d, disruption) in self.disruptions.iter().enumerate() {
                let mut d_rng = derive_rng(self.seed, "disrupt", &[u64::from(epoch), i as u64]);
                let disrupted_img = disrupt(&augmented, disruption, &mut d_rng)?;
                let disrupted = self.backbone.embed(&disrupted_img)?;
                out[d].push(PairSample {
                    original: original.clone(),
                    disrupted,
                    label: record.label.as_u8(),
                    generator_id: record.generator_id.clone(),
                    architecture_group: record.architecture_group.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Validation pairs are deterministic per stream seed and built once:
    /// plain resize, no augmentation.
    pub fn val_pairs(&mut self) -> Result<Vec<Vec<PairSample>>, PipelineError> {
        if self.val_indices.is_empty() {
            return Err(PipelineError::EmptySplit(Split::Val));
        }
        let mut out: Vec<Vec<PairSample>> =
            (0..self.disruptions.len()).map(|_| Vec::with_capacity(self.val_indices.len())).collect();
        for (i, &ri) in self.val_indices.clone().iter().enumerate() {
            let record = &self.manifest.records[ri];
            let base = self.source.image(record)?;
            let img = eval_preprocess(&base, self.policy.crop_to)?;
            let original = self.backbone.embed(&img)?;
            for (d, disruption) in self.disruptions.iter().enumerate() {
                let mut d_rng = derive_rng(self.seed, "val_disrupt", &[i as u64]);
                let disrupted_img = disrupt(&img, disruption, &mut d_rng)?;
                let disrupted = self.backbone.embed(&disrupted_img)?;
                out[d].push(PairSample {
                    original: original.clone(),
                    disrupted,
                    label: record.label.as_u8(),
                    generator_id: record.generator_id.clone(),
                    architecture_group: record.architecture_group.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// Optional test-time corruption, applied to the synthetic image before the
/// standard eval resize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Degradation {
    Blur { sigma: f32 },
    Jpeg { quality: u8 },
}

impl Degradation {
    pub fn label(self) -> String {
        match self {
            Degradation::Blur { sigma } => format!("blur_sigma_{sigma:.1}"),
            Degradation::Jpeg { quality } => format!("jpeg_q_{quality}"),
        }
    }

    fn apply(self, img: &RgbImage) -> Result<RgbImage, ImageOpError> {
        match self {
            Degradation::Blur { sigma } => gaussian_blur(img, sigma),
            Degradation::Jpeg { quality } => jpeg_roundtrip(img, quality),
        }
    }
}

/// The standard robustness sweep: one blur row and one compression row,
/// each varying a single knob against an otherwise clean eval.
pub fn robustness_degradations() -> Vec<Degradation> {
    let mut cells: Vec<Degradation> =
        [0.0f32, 0.5, 1.0, 1.5, 2.0].into_iter().map(|sigma| Degradation::Blur { sigma }).collect();
    cells.extend((3..=10).map(|q| Degradation::Jpeg { quality: q * 10 }));
    cells
}

pub struct EvalSample {
    pub pair: PairSample,
    pub domain: Domain,
    pub sample_id: String,
}

/// Embedded test split, reusable across any number of trained heads.
pub struct EvalSet {
    pub samples: Vec<EvalSample>,
}

pub fn build_eval_set(
    manifest: &Manifest,
    backbone: &ToyBackbone,
    disruption: &Disruption,
    eval_seed: u64,
    crop_to: u32,
    degradation: Option<Degradation>,
) -> Result<EvalSet, PipelineError> {
    let mut sets = build_eval_sets(
        manifest,
        backbone,
        std::slice::from_ref(disruption),
        eval_seed,
        crop_to,
        degradation,
        None,
    )?;
    Ok(sets.remove(0))
}

/// Embeds the test split once per disruption. The synthesized base image,
/// any degradation, and the first-branch embedding are shared across all
/// disruptions; the per-record disruption draw depends only on the eval seed
/// and record position, so a one-disruption set equals the corresponding
/// column of a many-disruption call. An optional generator filter narrows
/// the pool (the sweep evaluates a single shared generator).
pub fn build_eval_sets(
    manifest: &Manifest,
    backbone: &ToyBackbone,
    disruptions: &[Disruption],
    eval_seed: u64,
    crop_to: u32,
    degradation: Option<Degradation>,
    generator_filter: Option<&BTreeSet<String>>,
) -> Result<Vec<EvalSet>, PipelineError> {
    let mut source = SampleSource::new(manifest, false);
    let records: Vec<&SampleRecord> = manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Test)
        .filter(|r| generator_filter.is_none_or(|keep| keep.contains(&r.generator_id)))
        .collect();
    if records.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Test));
    }
    let mut sets: Vec<EvalSet> = (0..disruptions.len())
        .map(|_| EvalSet { samples: Vec::with_capacity(records.len()) })
        .collect();
    for (i, record) in records.iter().enumerate() {
        let mut img = source.image(record)?;
        if let Some(deg) = degradation {
            img = deg.apply(&img)?;
        }
        let img = eval_preprocess(&img, crop_to)?;
        let original = backbone.embed(&img)?;
        let domain = if manifest.spec.is_train_generator(&record.generator_id) {
            Domain::Id
        } else {
            Domain::Ood
        };
        for (d, disruption) in disruptions.iter().enumerate() {
            let mut d_rng = derive_rng(eval_seed, "eval_disrupt", &[i as u64]);
            let disrupted_img = disrupt(&img, disruption, &mut d_rng)?;
            let disrupted = backbone.embed(&disrupted_img)?;
            sets[d].samples.push(EvalSample {
                pair: PairSample {
                    original: original.clone(),
                    disrupted,
                    label: record.label.as_u8(),
                    generator_id: record.generator_id.clone(),
                    architecture_group: record.architecture_group.clone(),
                },
                domain,
                sample_id: record.sample_id.clone(),
            });
        }
    }
    Ok(sets)
}

/// Scores an embedded eval set with one head; output order follows the set.
pub fn scored_eval(model: &HeadModel, set: &EvalSet) -> Result<Vec<ScoredSample>, HeadError> {
    set.samples
        .iter()
        .map(|s| {
            Ok(ScoredSample {
                probability: model.probability_for_pair(&s.pair.original, &s.pair.disrupted)?,
                label: s.pair.label,
                generator_id: s.pair.generator_id.clone(),
                architecture_group: s.pair.architecture_group.clone(),
                domain: s.domain,
            })
        })
        .collect()
}

pub struct OcclusionMap {
    pub rows: usize,
    pub cols: usize,
    pub window: u32,
    pub stride: u32,
    pub baseline: f64,
    /// Row-major probability drops: baseline minus the occluded score.
    pub cells: Vec<f64>,
}

/// Slides a gray square over an eval-ready image and records how much each
/// covered region was contributing to the score. The disruption draw is
/// re-derived per probe so every cell sees the same second branch.
#[allow(clippy::too_many_arguments)]
pub fn occlusion_map(
    model: &HeadModel,
    backbone: &ToyBackbone,
    image: &RgbImage,
    disruption: &Disruption,
    seed: u64,
    window: u32,
    stride: u32,
    fill: u8,
) -> Result<OcclusionMap, PipelineError> {
    let (width, height) = image.dimensions();
    if window == 0 || stride == 0 || window > width || window > height {
        return Err(PipelineError::WindowTooLarge { window, width, height });
    }
    let probe = |img: &RgbImage| -> Result<f64, PipelineError> {
        let mut rng = derive_rng(seed, "occlude_disrupt", &[]);
        let disrupted_img = disrupt(img, disruption, &mut rng)?;
        let original = backbone.embed(img)?;
        let disrupted = backbone.embed(&disrupted_img)?;
        Ok(model.probability_for_pair(&original, &disrupted)?)
    };
    let baseline = probe(image)?;
    let cols = ((width - window) / stride + 1) as usize;
    let rows = ((height - window) / stride + 1) as usize;
    let mut cells = Vec::with_capacity(rows * cols);
    for gy in 0..rows as u32 {
        for gx in 0..cols as u32 {
            let mut occluded = image.clone();
            let x0 = gx * stride;
            let y0 = gy * stride;
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    occluded.put_pixel(x, y, image::Rgb([fill, fill, fill]));
                }
            }
            cells.push(baseline - probe(&occluded)?);
        }
    }
    Ok(OcclusionMap { rows, cols, window, stride, baseline, cells })
}
