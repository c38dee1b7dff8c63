//! `d3 train` and `d3 eval`.
//!
//! Training always fits two models per seed in lockstep on the same stream:
//! the configured head and a single-branch linear baseline. Evaluation loads
//! both checkpoints per seed, scores them against one shared embedded test
//! split, and reports the out-of-domain margin the dual branch buys.

use crate::reports::{
    fmt_acc, fmt_opt_acc, write_csv, write_json, EvalCommandReport, EvalRunReport, EvalSummary,
    ModelTrainSummary, TrainReport, TrainRunReport,
};
use crate::runtime::{
    eval_model, head_kind_label, pair_mode_label, rt, save_model, train_lockstep, CliError, Env,
    ModelSlot,
};
use d3_core::head::{HeadKind, PairMode, TrainOutcome};
use d3_core::pipeline::build_eval_set;
use std::path::{Path, PathBuf};

pub const BASELINE_KIND: HeadKind = HeadKind::FcOnly;
pub const BASELINE_MODE: PairMode = PairMode::OriginalOnly;

pub fn head_checkpoint(env: &Env, seed: u64) -> PathBuf {
    env.config.checkpoints_dir().join(format!("head_seed{seed}.d3ck"))
}

pub fn baseline_checkpoint(env: &Env, seed: u64) -> PathBuf {
    env.config.checkpoints_dir().join(format!("baseline_seed{seed}.d3ck"))
}

fn summarize(
    kind: HeadKind,
    mode: PairMode,
    outcome: &TrainOutcome,
    checkpoint: &Path,
) -> ModelTrainSummary {
    ModelTrainSummary {
        head_kind: head_kind_label(kind).to_string(),
        pair_mode: pair_mode_label(mode).to_string(),
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        checkpoint: checkpoint.display().to_string(),
        epochs: outcome.log.clone(),
    }
}

pub fn train(env: &Env) -> Result<(), CliError> {
    let mut runs = Vec::new();
    for &seed in &env.config.seeds {
        let slots = [
            ModelSlot {
                kind: env.config.head_kind,
                pair_mode: env.config.pair_mode,
                init_slot: 0,
                stream_index: 0,
            },
            ModelSlot {
                kind: BASELINE_KIND,
                pair_mode: BASELINE_MODE,
                init_slot: 1,
                stream_index: 0,
            },
        ];
        let result =
            train_lockstep(env, vec![env.config.disruption.clone()], seed, &slots, None)?;
        let [head_out, baseline_out]: [TrainOutcome; 2] = result
            .outcomes
            .try_into()
            .map_err(|_| CliError::Runtime("trainer count mismatch".into()))?;

        let cfg_used = env.run_train_config(seed);
        let head_path = head_checkpoint(env, seed);
        let baseline_path = baseline_checkpoint(env, seed);
        save_model(&head_path, &head_out.model, &cfg_used, &env.config_hash)?;
        save_model(&baseline_path, &baseline_out.model, &cfg_used, &env.config_hash)?;

        println!(
            "train seed {seed}: head best val acc {:.4} (epoch {}), baseline {:.4} (epoch {})",
            head_out.best_val_accuracy,
            head_out.best_epoch,
            baseline_out.best_val_accuracy,
            baseline_out.best_epoch
        );
        runs.push(TrainRunReport {
            seed,
            train_generators: result.train_generators,
            head: summarize(env.config.head_kind, env.config.pair_mode, &head_out, &head_path),
            baseline: summarize(BASELINE_KIND, BASELINE_MODE, &baseline_out, &baseline_path),
        });
    }

    let report = TrainReport {
        provenance: env.provenance("train"),
        seeds: env.config.seeds.clone(),
        runs,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}

pub fn eval(env: &Env) -> Result<(), CliError> {
    // Load everything up front so missing checkpoints fail before the
    // expensive embedding pass.
    let mut models = Vec::new();
    for &seed in &env.config.seeds {
        let (head, head_meta) = crate::runtime::load_model(&head_checkpoint(env, seed))?;
        let (baseline, baseline_meta) =
            crate::runtime::load_model(&baseline_checkpoint(env, seed))?;
        for meta in [&head_meta, &baseline_meta] {
            if meta.config_hash != env.config_hash {
                eprintln!(
                    "warning: seed {seed} checkpoint was trained under config {} (current {})",
                    &meta.config_hash[..12.min(meta.config_hash.len())],
                    &env.config_hash[..12]
                );
            }
        }
        models.push((seed, head, head_meta, baseline, baseline_meta));
    }

    let set = build_eval_set(
        &env.manifest,
        &env.backbone,
        &env.config.disruption,
        env.config.eval_seed,
        env.config.augmentation.crop_to,
        None,
    )
    .map_err(rt)?;

    let mut runs = Vec::new();
    for (seed, head, head_meta, baseline, baseline_meta) in &models {
        let head_report = eval_model(head, &set, env.config.resample_seed)?;
        let baseline_report = eval_model(baseline, &set, env.config.resample_seed)?;
        let ood_margin = match (head_report.ood_mean_acc, baseline_report.ood_mean_acc) {
            (Some(h), Some(b)) => Some(h - b),
            _ => None,
        };
        println!(
            "eval seed {seed}: head id {} ood {} | baseline ood {} | margin {}",
            fmt_opt_acc(head_report.id_mean_acc),
            fmt_opt_acc(head_report.ood_mean_acc),
            fmt_opt_acc(baseline_report.ood_mean_acc),
            fmt_opt_acc(ood_margin),
        );
        runs.push(EvalRunReport {
            seed: *seed,
            head_checkpoint_hash: head_meta.config_hash.clone(),
            baseline_checkpoint_hash: baseline_meta.config_hash.clone(),
            head: head_report,
            baseline: baseline_report,
            ood_margin,
        });
    }

    let mean_of = |f: &dyn Fn(&EvalRunReport) -> Option<f64>| -> Option<f64> {
        let values: Vec<f64> = runs.iter().filter_map(&f).collect();
        (values.len() == runs.len())
            .then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let summary = EvalSummary {
        head_id_mean_acc: mean_of(&|r| r.head.id_mean_acc),
        head_ood_mean_acc: mean_of(&|r| r.head.ood_mean_acc),
        head_total_mean_acc: runs.iter().map(|r| r.head.total_mean_acc).sum::<f64>()
            / runs.len() as f64,
        baseline_ood_mean_acc: mean_of(&|r| r.baseline.ood_mean_acc),
        mean_ood_margin: mean_of(&|r| r.ood_margin),
        min_ood_margin: runs
            .iter()
            .map(|r| r.ood_margin)
            .collect::<Option<Vec<f64>>>()
            .map(|m| m.into_iter().fold(f64::INFINITY, f64::min)),
    };
    println!(
        "eval summary: head id {} ood {} | baseline ood {} | margin mean {} min {}",
        fmt_opt_acc(summary.head_id_mean_acc),
        fmt_opt_acc(summary.head_ood_mean_acc),
        fmt_opt_acc(summary.baseline_ood_mean_acc),
        fmt_opt_acc(summary.mean_ood_margin),
        fmt_opt_acc(summary.min_ood_margin),
    );

    let rows: Vec<String> = runs
        .iter()
        .flat_map(|r| {
            let line = |model: &str, e: &d3_core::metrics::EvalReport| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    r.seed,
                    model,
                    fmt_opt_acc(e.id_mean_acc),
                    fmt_opt_acc(e.ood_mean_acc),
                    fmt_acc(e.total_mean_acc),
                    fmt_opt_acc(e.id_ap),
                    fmt_opt_acc(e.ood_ap),
                    fmt_acc(e.total_ap),
                )
            };
            [line("head", &r.head), line("baseline", &r.baseline)]
        })
        .collect();
    write_csv(
        &env.config.tables_dir().join("eval_summary.csv"),
        "seed,model,id_mean_acc,ood_mean_acc,total_mean_acc,id_ap,ood_ap,total_ap",
        &rows,
    )
    .map_err(rt)?;

    let report = EvalCommandReport { provenance: env.provenance("eval"), runs, summary };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}
