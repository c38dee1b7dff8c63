//! `d3 synth`: writes the benchmark manifest (and optionally every image).

use crate::reports::{write_json, SynthReport};
use crate::runtime::{rt, CliError, Env};
use d3_core::imagekit::save_png;
use d3_core::pipeline::SampleSource;
use d3_core::synthbench::{save_manifest, Split};

pub fn run(env: &Env, materialize: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(&env.config.out_dir).map_err(rt)?;
    let manifest_path = env.config.out_dir.join("manifest.jsonl");
    save_manifest(&env.manifest, &manifest_path).map_err(rt)?;

    let mut materialized = 0;
    if materialize {
        let images_dir = env.config.out_dir.join("images");
        std::fs::create_dir_all(&images_dir).map_err(rt)?;
        let mut source = SampleSource::new(&env.manifest, false);
        for record in &env.manifest.records {
            let img = source.image(record).map_err(rt)?;
            save_png(&img, &images_dir.join(format!("{}.png", record.sample_id))).map_err(rt)?;
            materialized += 1;
        }
    }

    let count_split =
        |s: Split| env.manifest.records.iter().filter(|r| r.split == s).count();
    let report = SynthReport {
        provenance: env.provenance("synth"),
        manifest_path: manifest_path.display().to_string(),
        generator_count: env.manifest.spec.generators.len(),
        record_count: env.manifest.records.len(),
        train_records: count_split(Split::Train),
        val_records: count_split(Split::Val),
        test_records: count_split(Split::Test),
        materialized_images: materialized,
    };
    write_json(&env.config.report_path(), &report).map_err(rt)?;
    println!(
        "synth: {} records ({} train / {} val / {} test) -> {}",
        report.record_count,
        report.train_records,
        report.val_records,
        report.test_records,
        manifest_path.display()
    );
    Ok(())
}
