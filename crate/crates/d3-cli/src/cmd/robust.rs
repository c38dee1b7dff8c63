//! `d3 robust`: trains one head and evaluates it under the two standard
//! degradation sweeps (Gaussian blur sigma, JPEG quality). Degradations hit
//! the test image before the eval resize; the zero-strength blur cell is
//! bit-identical to the clean evaluation by construction.

use crate::reports::{fmt_acc, write_csv, write_json, RobustnessCell, RobustnessReport};
use crate::runtime::{
    eval_model, rt, save_model, train_lockstep, CliError, Env, ModelSlot, THRESHOLD,
};
use d3_core::metrics::mean_accuracy;
use d3_core::pipeline::{build_eval_set, robustness_degradations, scored_eval, Degradation};

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
        &env.config.checkpoints_dir().join(format!("robust_seed{run_seed}.d3ck")),
        model,
        &cfg_used,
        &env.config_hash,
    )?;

    let clean_set = build_eval_set(
        &env.manifest,
        &env.backbone,
        &env.config.disruption,
        env.config.eval_seed,
        crop,
        None,
    )
    .map_err(rt)?;
    let clean = eval_model(model, &clean_set, env.config.resample_seed)?;
    drop(clean_set);
    println!("robust clean: total mean acc {:.4}", clean.total_mean_acc);

    let mut cells = Vec::new();
    for degradation in robustness_degradations() {
        let set = build_eval_set(
            &env.manifest,
            &env.backbone,
            &env.config.disruption,
            env.config.eval_seed,
            crop,
            Some(degradation),
        )
        .map_err(rt)?;
        let scored = scored_eval(model, &set).map_err(rt)?;
        let acc = mean_accuracy(&scored, THRESHOLD).map_err(rt)?.total_mean;
        let (perturbation, value) = match degradation {
            Degradation::Blur { sigma } => ("blur", f64::from(sigma)),
            Degradation::Jpeg { quality } => ("jpeg", f64::from(quality)),
        };
        println!("robust {perturbation} {value}: total mean acc {acc:.4}");
        cells.push(RobustnessCell {
            perturbation: perturbation.to_string(),
            value,
            total_mean_acc: acc,
        });
    }

    let rows: Vec<String> = cells
        .iter()
        .map(|c| {
            let value = if c.perturbation == "blur" {
                format!("{:.1}", c.value)
            } else {
                format!("{}", c.value as u64)
            };
            format!("{},{},{}", c.perturbation, value, fmt_acc(c.total_mean_acc))
        })
        .collect();
    write_csv(
        &env.config.tables_dir().join("robustness.csv"),
        "perturbation,value,total_mean_acc",
        &rows,
    )
    .map_err(rt)?;

    let report = RobustnessReport {
        provenance: env.provenance("robust"),
        seed: run_seed,
        clean,
        cells,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}
