//! `d3 occlude`: trains one head, then renders an occlusion saliency map for
//! the first fake test image of every training generator. Cell values are
//! fake-probability drops; heatmaps land in maps/ as normalized graymaps.

use crate::reports::{write_json, OcclusionMapSummary, OcclusionReport};
use crate::runtime::{rt, save_model, train_lockstep, CliError, Env, ModelSlot};
use d3_core::imagekit::{eval_preprocess, save_gray_png};
use d3_core::pipeline::{occlusion_map, OcclusionMap, SampleSource};
use d3_core::synthbench::{specific_support_rect, Label, Split};

pub const WINDOW: u32 = 28;
pub const STRIDE: u32 = 14;
pub const FILL: u8 = 128;

pub fn run(env: &Env) -> Result<(), CliError> {
    let run_seed = env.config.seeds[0];
    let crop = env.config.augmentation.crop_to;
    let slots = [ModelSlot {
        kind: env.config.head_kind,
        pair_mode: env.config.pair_mode,
        init_slot: 0,
        stream_index: 0,
    }];
    let result =
        train_lockstep(env, vec![env.config.disruption.clone()], run_seed, &slots, None)?;
    let model = &result.outcomes[0].model;
    let cfg_used = env.run_train_config(run_seed);
    save_model(
        &env.config.checkpoints_dir().join(format!("occlude_seed{run_seed}.d3ck")),
        model,
        &cfg_used,
        &env.config_hash,
    )?;

    let maps_dir = env.config.maps_dir();
    std::fs::create_dir_all(&maps_dir).map_err(rt)?;
    let mut source = SampleSource::new(&env.manifest, false);
    let mut maps = Vec::new();
    for generator_id in &env.manifest.spec.train_subset {
        let record = env
            .manifest
            .records
            .iter()
            .find(|r| {
                &r.generator_id == generator_id && r.split == Split::Test && r.label == Label::Fake
            })
            .ok_or_else(|| {
                CliError::Runtime(format!("no fake test record for generator {generator_id}"))
            })?;
        let img = source.image(record).map_err(rt)?;
        let img = eval_preprocess(&img, crop).map_err(rt)?;
        let map = occlusion_map(
            model,
            &env.backbone,
            &img,
            &env.config.disruption,
            env.config.eval_seed,
            WINDOW,
            STRIDE,
            FILL,
        )
        .map_err(rt)?;

        let png = maps_dir.join(format!("occlusion_{generator_id}.png"));
        save_gray_png(&map.cells, map.cols as u32, map.rows as u32, &png).map_err(rt)?;

        let generator = env
            .manifest
            .spec
            .generator(generator_id)
            .expect("train subset ids are validated against the generator list");
        let support = scaled_support(
            specific_support_rect(generator, env.manifest.spec.image_size),
            env.manifest.spec.image_size,
            crop,
        );
        let iou = top_decile_iou(&map, support, crop);
        println!(
            "occlude {generator_id}: baseline {:.4}, top-decile IoU vs fingerprint support {:.3}",
            map.baseline, iou
        );
        maps.push(OcclusionMapSummary {
            generator_id: generator_id.clone(),
            sample_id: record.sample_id.clone(),
            baseline_probability: map.baseline,
            min_drop: map.cells.iter().cloned().fold(f64::INFINITY, f64::min),
            max_drop: map.cells.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            top_decile_support_iou: iou,
            map_png: png.display().to_string(),
        });
    }

    let report = OcclusionReport {
        provenance: env.provenance("occlude"),
        seed: run_seed,
        window: WINDOW,
        stride: STRIDE,
        fill: FILL,
        maps,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}

/// Maps a rectangle from benchmark-image coordinates onto the eval crop.
fn scaled_support(rect: (u32, u32, u32, u32), from: u32, to: u32) -> (u32, u32, u32, u32) {
    let scale = |v: u32| (u64::from(v) * u64::from(to) / u64::from(from)) as u32;
    (scale(rect.0), scale(rect.1), scale(rect.2).max(1), scale(rect.3).max(1))
}

/// IoU between the union of the highest-decile occlusion windows and the
/// fingerprint support rectangle, measured in pixels.
fn top_decile_iou(map: &OcclusionMap, support: (u32, u32, u32, u32), size: u32) -> f64 {
    let n = map.cells.len();
    let take = n.div_ceil(10);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.cells[b].partial_cmp(&map.cells[a]).unwrap().then(a.cmp(&b)));

    let size = size as usize;
    let mut heat = vec![false; size * size];
    for &cell in order.iter().take(take) {
        let row = cell / map.cols;
        let col = cell % map.cols;
        let y0 = row * map.stride as usize;
        let x0 = col * map.stride as usize;
        for y in y0..(y0 + map.window as usize).min(size) {
            for x in x0..(x0 + map.window as usize).min(size) {
                heat[y * size + x] = true;
            }
        }
    }
    let (sx, sy, sw, sh) = support;
    let in_support = |x: usize, y: usize| {
        x >= sx as usize && x < (sx + sw) as usize && y >= sy as usize && y < (sy + sh) as usize
    };
    let mut intersection = 0u64;
    let mut union = 0u64;
    for y in 0..size {
        for x in 0..size {
            let h = heat[y * size + x];
            let s = in_support(x, y);
            if h && s {
                intersection += 1;
            }
            if h || s {
                union += 1;
            }
        }
    }
    if union == 0 {
        return 0.0;
    }
    intersection as f64 / union as f64
}
