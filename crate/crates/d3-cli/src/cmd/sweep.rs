//! `d3 scale-sweep`: retrains on {1, 2, 4, 8}-generator prefixes of three
//! seeded random orders of the train subset.
//!
//! Every order's in-domain score comes from its FIRST generator only (the
//! one all prefixes share), while out-of-domain scores use the full held-out
//! pool; curves are arithmetic means over the orders per prefix size.

use crate::reports::{fmt_acc, write_csv, write_json, ScaleSweepReport, SweepCell, SweepCurves};
use crate::runtime::{rt, save_model, train_lockstep, CliError, Env, ModelSlot};
use d3_core::metrics::mean_accuracy;
use d3_core::pipeline::{build_eval_sets, scored_eval, EvalSet};
use d3_core::rng::derive_rng;
use rand::seq::SliceRandom;
use std::collections::BTreeSet;

pub const PREFIXES: [usize; 4] = [1, 2, 4, 8];
pub const ORDERS: usize = 3;

pub fn run(env: &Env) -> Result<(), CliError> {
    let spec = &env.manifest.spec;
    if spec.train_subset.len() < *PREFIXES.last().unwrap() {
        return Err(CliError::Validation(format!(
            "scale sweep needs at least {} train generators, benchmark has {}",
            PREFIXES.last().unwrap(),
            spec.train_subset.len()
        )));
    }
    let run_seed = env.config.seeds[0];
    let crop = env.config.augmentation.crop_to;

    let orders: Vec<Vec<String>> = (0..ORDERS)
        .map(|o| {
            let mut order = spec.train_subset.clone();
            order.shuffle(&mut derive_rng(spec.master_seed, "sweep_order", &[o as u64]));
            order
        })
        .collect();

    let ood_pool: BTreeSet<String> = spec
        .generators
        .iter()
        .map(|g| g.generator_id.clone())
        .filter(|id| !spec.is_train_generator(id))
        .collect();
    if ood_pool.is_empty() {
        return Err(CliError::Validation("benchmark has no held-out generators".into()));
    }
    let ood_set = one_eval_set(env, &ood_pool, crop)?;

    let mut cells = Vec::new();
    for (o, order) in orders.iter().enumerate() {
        let id_pool: BTreeSet<String> = [order[0].clone()].into();
        let id_set = one_eval_set(env, &id_pool, crop)?;
        for &prefix in &PREFIXES {
            let keep: BTreeSet<String> = order[..prefix].iter().cloned().collect();
            let slots = [ModelSlot {
                kind: env.config.head_kind,
                pair_mode: env.config.pair_mode,
                init_slot: 0,
                stream_index: 0,
            }];
            let result = train_lockstep(
                env,
                vec![env.config.disruption.clone()],
                run_seed,
                &slots,
                Some(&keep),
            )?;
            let outcome = &result.outcomes[0];
            let cfg_used = env.run_train_config(run_seed);
            save_model(
                &env.config
                    .checkpoints_dir()
                    .join(format!("sweep_order{o}_prefix{prefix}.d3ck")),
                &outcome.model,
                &cfg_used,
                &env.config_hash,
            )?;

            let id_acc = accuracy_on(&outcome.model, &id_set)?;
            let ood_acc = accuracy_on(&outcome.model, &ood_set)?;
            println!(
                "sweep order {o} prefix {prefix}: id({}) {:.4} ood {:.4}",
                order[0], id_acc, ood_acc
            );
            cells.push(SweepCell {
                order_index: o,
                prefix,
                train_generators: result.train_generators,
                id_generator: order[0].clone(),
                id_mean_acc: id_acc,
                ood_mean_acc: ood_acc,
            });
        }
    }

    let per_prefix = |f: &dyn Fn(&SweepCell) -> f64| -> Vec<f64> {
        PREFIXES
            .iter()
            .map(|&p| {
                let vals: Vec<f64> =
                    cells.iter().filter(|c| c.prefix == p).map(&f).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    };
    let curves = SweepCurves {
        prefixes: PREFIXES.to_vec(),
        id_mean_acc: per_prefix(&|c| c.id_mean_acc),
        ood_mean_acc: per_prefix(&|c| c.ood_mean_acc),
    };
    for (i, &p) in PREFIXES.iter().enumerate() {
        println!(
            "sweep curve prefix {p}: id {:.4} ood {:.4}",
            curves.id_mean_acc[i], curves.ood_mean_acc[i]
        );
    }

    let cell_rows: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.order_index,
                c.prefix,
                c.id_generator,
                fmt_acc(c.id_mean_acc),
                fmt_acc(c.ood_mean_acc)
            )
        })
        .collect();
    write_csv(
        &env.config.tables_dir().join("scale_sweep.csv"),
        "order,prefix,id_generator,id_mean_acc,ood_mean_acc",
        &cell_rows,
    )
    .map_err(rt)?;
    let curve_rows: Vec<String> = PREFIXES
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!("{},{},{}", p, fmt_acc(curves.id_mean_acc[i]), fmt_acc(curves.ood_mean_acc[i]))
        })
        .collect();
    write_csv(
        &env.config.tables_dir().join("scale_sweep_curves.csv"),
        "prefix,id_mean_acc,ood_mean_acc",
        &curve_rows,
    )
    .map_err(rt)?;

    let report = ScaleSweepReport {
        provenance: env.provenance("scale-sweep"),
        seed: run_seed,
        orders,
        cells,
        curves,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    Ok(())
}

fn one_eval_set(env: &Env, keep: &BTreeSet<String>, crop: u32) -> Result<EvalSet, CliError> {
    let mut sets = build_eval_sets(
        &env.manifest,
        &env.backbone,
        std::slice::from_ref(&env.config.disruption),
        env.config.eval_seed,
        crop,
        None,
        Some(keep),
    )
    .map_err(rt)?;
    Ok(sets.remove(0))
}

fn accuracy_on(model: &d3_core::head::HeadModel, set: &EvalSet) -> Result<f64, CliError> {
    let scored = scored_eval(model, set).map_err(rt)?;
    Ok(mean_accuracy(&scored, crate::runtime::THRESHOLD).map_err(rt)?.total_mean)
}
