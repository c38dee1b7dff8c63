//! Manifest construction and JSONL persistence.
//!
//! Line 1 is a header `{"schema_version": 1, "benchmark": {...}}`; every
//! following line is one SampleRecord. Loading validates schema version,
//! referential integrity, and per-generator counts.

use super::{
    BenchError, BenchmarkSpec, Label, Manifest, SampleRecord, Split, MANIFEST_SCHEMA_VERSION,
};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    benchmark: BenchmarkSpec,
}

/// Expands a spec into concrete records. Record order is deterministic:
/// generators as listed, real class before fake, index ascending. Within a
/// class the first `train` indices are train, then test, with the val slice
/// at the tail.
pub fn build_manifest(spec: &BenchmarkSpec) -> Result<Manifest, BenchError> {
    spec.validate()?;
    let mut records = Vec::new();
    for (gi, g) in spec.generators.iter().enumerate() {
        let counts = spec.split_counts(&g.generator_id);
        for (ci, label) in [Label::Real, Label::Fake].into_iter().enumerate() {
            for i in 0..spec.samples_per_generator_per_class {
                let split = if i < counts.train {
                    Split::Train
                } else if i < counts.train + counts.test {
                    Split::Test
                } else {
                    Split::Val
                };
                let class_tag = match label {
                    Label::Real => "real",
                    Label::Fake => "fake",
                };
                records.push(SampleRecord {
                    sample_id: format!("{}_{}_{:04}", g.generator_id, class_tag, i),
                    generator_id: g.generator_id.clone(),
                    label,
                    split,
                    architecture_group: g.architecture_group.clone(),
                    sample_seed: derive_seed(
                        spec.master_seed,
                        "sample",
                        &[gi as u64, ci as u64, i as u64],
                    ),
                });
            }
        }
    }
    Ok(Manifest { spec: spec.clone(), records })
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), BenchError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema_version: MANIFEST_SCHEMA_VERSION,
        benchmark: manifest.spec.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(io_err)?;
    w.write_all(b"\n")?;
    for r in &manifest.records {
        serde_json::to_writer(&mut w, r).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest, BenchError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or(BenchError::Parse { line: 1, message: "empty manifest".into() })??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| BenchError::Parse { line: 1, message: e.to_string() })?;
    if header.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(BenchError::UnknownSchemaVersion(header.schema_version));
    }
    header.benchmark.validate()?;

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| BenchError::Parse { line: idx + 2, message: e.to_string() })?;
        records.push(record);
    }
    let manifest = Manifest { spec: header.benchmark, records };
    verify_integrity(&manifest)?;
    Ok(manifest)
}

/// Checks referential integrity and exact per-generator split counts.
pub fn verify_integrity(manifest: &Manifest) -> Result<(), BenchError> {
    let spec = &manifest.spec;
    let mut seen_ids: HashMap<&str, ()> = HashMap::new();
    let mut counts: HashMap<(String, Label, Split), u32> = HashMap::new();
    for r in &manifest.records {
        let g = spec.generator(&r.generator_id).ok_or_else(|| BenchError::UnknownGenerator {
            sample_id: r.sample_id.clone(),
            generator_id: r.generator_id.clone(),
        })?;
        if g.architecture_group != r.architecture_group {
            return Err(BenchError::Integrity(format!(
                "record {} carries group {} but generator declares {}",
                r.sample_id, r.architecture_group, g.architecture_group
            )));
        }
        if seen_ids.insert(&r.sample_id, ()).is_some() {
            return Err(BenchError::Integrity(format!("duplicate sample_id {}", r.sample_id)));
        }
        if !spec.is_train_generator(&r.generator_id) && r.split != Split::Test {
            return Err(BenchError::Integrity(format!(
                "record {} puts a held-out generator in split {:?}",
                r.sample_id, r.split
            )));
        }
        *counts.entry((r.generator_id.clone(), r.label, r.split)).or_insert(0) += 1;
    }
    for g in &spec.generators {
        let want = spec.split_counts(&g.generator_id);
        for label in [Label::Real, Label::Fake] {
            let have = |s: Split| counts.get(&(g.generator_id.clone(), label, s)).copied().unwrap_or(0);
            if have(Split::Train) != want.train
                || have(Split::Test) != want.test
                || have(Split::Val) != want.val
            {
                return Err(BenchError::Integrity(format!(
                    "{} {:?}: counts train/test/val {}/{}/{} do not match expected {}/{}/{}",
                    g.generator_id,
                    label,
                    have(Split::Train),
                    have(Split::Test),
                    have(Split::Val),
                    want.train,
                    want.test,
                    want.val
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::default_benchmark;

    #[test]
    fn record_count_is_generators_times_classes_times_budget() {
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 100;
        let m = build_manifest(&spec).unwrap();
        assert_eq!(m.records.len(), 20 * 2 * 100);
        let train_generators: std::collections::HashSet<_> = m
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.generator_id.clone())
            .collect();
        assert_eq!(train_generators.len(), 8);
        // held-out generators have no train or val records
        for r in &m.records {
            if !spec.is_train_generator(&r.generator_id) {
                assert_eq!(r.split, Split::Test);
            }
        }
    }

    #[test]
    fn sample_seeds_are_unique_and_stable() {
        let spec = default_benchmark();
        let a = build_manifest(&spec).unwrap();
        let b = build_manifest(&spec).unwrap();
        assert_eq!(a, b);
        let mut seeds: Vec<u64> = a.records.iter().map(|r| r.sample_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), a.records.len());
    }

    #[test]
    fn save_load_round_trips_bytes() {
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 6;
        let m = build_manifest(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.jsonl");
        let p2 = dir.path().join("m2.jsonl");
        save_manifest(&m, &p1).unwrap();
        let loaded = load_manifest(&p1).unwrap();
        assert_eq!(loaded, m);
        save_manifest(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_record_reports_line_number() {
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 4;
        let m = build_manifest(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = lines[3];
        let cut = &cut[..cut.len() / 2];
        lines[3] = cut;
        std::fs::write(&p, lines.join("\n")).unwrap();
        match load_manifest(&p) {
            Err(BenchError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 2;
        let m = build_manifest(&spec).unwrap();
        save_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let text = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_manifest(&p), Err(BenchError::UnknownSchemaVersion(9))));
    }

    #[test]
    fn foreign_generator_reference_is_rejected() {
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 2;
        let mut m = build_manifest(&spec).unwrap();
        m.records[0].generator_id = "ghost".into();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&m, &p).unwrap();
        assert!(matches!(load_manifest(&p), Err(BenchError::UnknownGenerator { .. })));
    }

    #[test]
    fn tampered_split_counts_are_rejected() {
        let mut spec = default_benchmark();
        spec.samples_per_generator_per_class = 4;
        let mut m = build_manifest(&spec).unwrap();
        let idx = m.records.iter().position(|r| r.split == Split::Train).unwrap();
        m.records[idx].split = Split::Test;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&m, &p).unwrap();
        assert!(matches!(load_manifest(&p), Err(BenchError::Integrity(_))));
    }
}
