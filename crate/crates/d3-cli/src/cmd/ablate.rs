//! `d3 ablate {disruption|patch-size|head|branch}`.
//!
//! Each axis trains its variants in lockstep against one augmentation
//! stream, so rows differ only in the component under study, then scores
//! them on one shared embedded test split per disruption.

use crate::reports::{fmt_acc, fmt_opt_acc, write_csv, write_json, AblationReport, AblationRow};
use crate::runtime::{
    disruption_label, eval_model, head_kind_label, pair_mode_label, rt, save_model,
    train_lockstep, CliError, Env, ModelSlot,
};
use d3_core::head::{gradcheck::max_rel_grad_error, HeadKind, HeadModel, PairMode};
use d3_core::imagekit::Disruption;
use d3_core::pipeline::build_eval_sets;
use d3_core::rng::derive_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Disruption,
    PatchSize,
    Head,
    Branch,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Disruption => "disruption",
            Axis::PatchSize => "patch_size",
            Axis::Head => "head",
            Axis::Branch => "branch",
        }
    }
}

struct RowSpec {
    label: String,
    kind: HeadKind,
    pair_mode: PairMode,
    disruption: Disruption,
    /// Index into the stream's disruption list.
    stream_index: usize,
}

pub fn run(env: &Env, axis: Axis) -> Result<(), CliError> {
    let (rows, disruptions) = plan(env, axis)?;
    if axis == Axis::Head {
        gradient_smoke_check()?;
    }

    let run_seed = env.config.seeds[0];
    let slots: Vec<ModelSlot> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| ModelSlot {
            kind: r.kind,
            pair_mode: r.pair_mode,
            init_slot: i as u64,
            stream_index: r.stream_index,
        })
        .collect();
    let result = train_lockstep(env, disruptions.clone(), run_seed, &slots, None)?;

    let cfg_used = env.run_train_config(run_seed);
    for (row, outcome) in rows.iter().zip(&result.outcomes) {
        save_model(
            &env.config
                .checkpoints_dir()
                .join(format!("{}_{}.d3ck", axis.name(), row.label)),
            &outcome.model,
            &cfg_used,
            &env.config_hash,
        )?;
    }

    let sets = build_eval_sets(
        &env.manifest,
        &env.backbone,
        &disruptions,
        env.config.eval_seed,
        env.config.augmentation.crop_to,
        None,
        None,
    )
    .map_err(rt)?;

    let mut report_rows = Vec::new();
    for (row, outcome) in rows.iter().zip(&result.outcomes) {
        let eval = eval_model(&outcome.model, &sets[row.stream_index], env.config.resample_seed)?;
        println!(
            "ablate {} {}: id {} ood {} total {:.4}",
            axis.name(),
            row.label,
            fmt_opt_acc(eval.id_mean_acc),
            fmt_opt_acc(eval.ood_mean_acc),
            eval.total_mean_acc
        );
        report_rows.push(AblationRow {
            label: row.label.clone(),
            head_kind: head_kind_label(row.kind).to_string(),
            pair_mode: pair_mode_label(row.pair_mode).to_string(),
            disruption: disruption_label(&row.disruption),
            best_val_accuracy: outcome.best_val_accuracy,
            eval,
        });
    }

    let csv_rows: Vec<String> = report_rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.head_kind,
                r.pair_mode,
                r.disruption,
                fmt_opt_acc(r.eval.id_mean_acc),
                fmt_opt_acc(r.eval.ood_mean_acc),
                fmt_acc(r.eval.total_mean_acc),
                fmt_opt_acc(r.eval.id_ap),
                fmt_opt_acc(r.eval.ood_ap),
                fmt_acc(r.eval.total_ap),
            )
        })
        .collect();
    write_csv(
        &env.config.tables_dir().join(format!("{}_ablation.csv", axis.name())),
        "label,head_kind,pair_mode,disruption,id_mean_acc,ood_mean_acc,total_mean_acc,id_ap,ood_ap,total_ap",
        &csv_rows,
    )
    .map_err(rt)?;

    let report = AblationReport {
        provenance: env.provenance(&format!("ablate {}", axis.name())),
        seed: run_seed,
        axis: axis.name().to_string(),
        rows: report_rows,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}

/// Rows are canonical per axis; the configured head/pair/disruption fills in
/// whichever dimensions the axis does not vary.
fn plan(env: &Env, axis: Axis) -> Result<(Vec<RowSpec>, Vec<Disruption>), CliError> {
    let cfg = &env.config;
    match axis {
        Axis::Disruption => {
            let variants = vec![
                Disruption::HorizontalFlip,
                Disruption::VerticalFlip,
                Disruption::RandomRotation { rotation_range_deg: (0.0, 180.0) },
                Disruption::PatchShuffle { patch_size: 14 },
            ];
            let rows = variants
                .iter()
                .enumerate()
                .map(|(i, d)| RowSpec {
                    label: disruption_label(d),
                    kind: cfg.head_kind,
                    pair_mode: cfg.pair_mode,
                    disruption: d.clone(),
                    stream_index: i,
                })
                .collect();
            Ok((rows, variants))
        }
        Axis::PatchSize => {
            let sizes = [1u32, 14, 28, 56, 112, 224];
            let crop = cfg.augmentation.crop_to;
            for &s in &sizes {
                if !crop.is_multiple_of(s) {
                    return Err(CliError::Validation(format!(
                        "patch size {s} does not divide the {crop}px eval crop"
                    )));
                }
            }
            let variants: Vec<Disruption> =
                sizes.iter().map(|&s| Disruption::PatchShuffle { patch_size: s }).collect();
            let rows = variants
                .iter()
                .enumerate()
                .map(|(i, d)| RowSpec {
                    label: disruption_label(d),
                    kind: cfg.head_kind,
                    pair_mode: cfg.pair_mode,
                    disruption: d.clone(),
                    stream_index: i,
                })
                .collect();
            Ok((rows, variants))
        }
        Axis::Head => {
            let rows = HeadKind::ALL
                .into_iter()
                .map(|kind| RowSpec {
                    label: head_kind_label(kind).to_string(),
                    kind,
                    pair_mode: cfg.pair_mode,
                    disruption: cfg.disruption.clone(),
                    stream_index: 0,
                })
                .collect();
            Ok((rows, vec![cfg.disruption.clone()]))
        }
        Axis::Branch => {
            let groups = [
                ("group1_original_fc", HeadKind::FcOnly, PairMode::OriginalOnly),
                ("group2_original_sa", HeadKind::SelfAttention, PairMode::OriginalOnly),
                ("group3_pair_fc", HeadKind::FcOnly, PairMode::OriginalDisrupted),
                ("group4_pair_sa", HeadKind::SelfAttention, PairMode::OriginalDisrupted),
                ("group5_original_twice_sa", HeadKind::SelfAttention, PairMode::OriginalOriginal),
                ("group6_disrupted_twice_sa", HeadKind::SelfAttention, PairMode::DisruptedDisrupted),
            ];
            let rows = groups
                .into_iter()
                .map(|(label, kind, pair_mode)| RowSpec {
                    label: label.to_string(),
                    kind,
                    pair_mode,
                    disruption: cfg.disruption.clone(),
                    stream_index: 0,
                })
                .collect();
            Ok((rows, vec![cfg.disruption.clone()]))
        }
    }
}

/// Cheap pre-training assertion that every head kind's analytic gradients
/// still match finite differences.
fn gradient_smoke_check() -> Result<(), CliError> {
    let dim = 8;
    for (i, kind) in HeadKind::ALL.into_iter().enumerate() {
        let mut rng = derive_rng(4242, "gc", &[i as u64]);
        let mut model =
            HeadModel::new_randomized(kind, PairMode::OriginalDisrupted, dim, &mut rng)
                .map_err(rt)?;
        let x: Vec<f64> =
            (0..2 * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = f64::from(rng.gen_range(0..=1));
        let err = max_rel_grad_error(&mut model, &x, y, 1e-5);
        if err >= 1e-4 {
            return Err(CliError::Runtime(format!(
                "gradient check failed for {} head: max rel error {err:.2e}",
                head_kind_label(kind)
            )));
        }
    }
    Ok(())
}
