//! `d3 report`: validates and summarizes an existing report.json.

use crate::runtime::CliError;
use serde_json::Value;
use std::path::Path;

pub fn run(out_dir: &Path) -> Result<(), CliError> {
    let path = out_dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", path.display()))
    })?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;

    let prov = doc
        .get("provenance")
        .and_then(Value::as_object)
        .ok_or_else(|| bad(&path, "missing provenance block"))?;
    let field = |name: &str| -> Result<String, CliError> {
        prov.get(name)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| bad(&path, &format!("provenance.{name} missing or not a string")))
    };
    let command = field("command")?;
    let config_hash = field("config_hash")?;
    let code_version = field("code_version")?;
    let master_seed = prov
        .get("master_seed")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(&path, "provenance.master_seed missing or not an integer"))?;

    println!("report: {}", path.display());
    println!("  command:      {command}");
    println!("  config hash:  {config_hash}");
    println!("  master seed:  {master_seed}");
    println!("  code version: {code_version}");

    match command.as_str() {
        "synth" => {
            let records = need_u64(&doc, "/record_count", &path)?;
            let trains = need_u64(&doc, "/train_records", &path)?;
            let tests = need_u64(&doc, "/test_records", &path)?;
            println!("  records:      {records} ({trains} train, {tests} test)");
        }
        "train" => {
            let runs = need_array_len(&doc, "/runs", &path)?;
            println!("  runs:         {runs}");
            for run in doc["runs"].as_array().unwrap() {
                let seed = run.get("seed").and_then(Value::as_u64).unwrap_or(0);
                let acc = run
                    .pointer("/head/best_val_accuracy")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| bad(&path, "run missing head.best_val_accuracy"))?;
                println!("  seed {seed}: head best val acc {acc:.4}");
            }
        }
        "eval" => {
            let runs = need_array_len(&doc, "/runs", &path)?;
            let ood = doc.pointer("/summary/head_ood_mean_acc").and_then(Value::as_f64);
            let margin = doc.pointer("/summary/mean_ood_margin").and_then(Value::as_f64);
            println!("  runs:         {runs}");
            if let (Some(ood), Some(margin)) = (ood, margin) {
                println!("  head ood acc: {ood:.4} (margin {margin:+.4} over baseline)");
            }
        }
        "scale-sweep" => {
            let cells = need_array_len(&doc, "/cells", &path)?;
            println!("  cells:        {cells}");
            if let Some(curve) = doc.pointer("/curves/ood_mean_acc").and_then(Value::as_array) {
                let pts: Vec<String> = curve
                    .iter()
                    .filter_map(Value::as_f64)
                    .map(|v| format!("{v:.4}"))
                    .collect();
                println!("  ood curve:    {}", pts.join(" -> "));
            }
        }
        "robust" => {
            let cells = need_array_len(&doc, "/cells", &path)?;
            let clean = doc
                .pointer("/clean/total_mean_acc")
                .and_then(Value::as_f64)
                .ok_or_else(|| bad(&path, "missing clean.total_mean_acc"))?;
            println!("  cells:        {cells}, clean total acc {clean:.4}");
        }
        "occlude" => {
            let maps = need_array_len(&doc, "/maps", &path)?;
            println!("  maps:         {maps}");
        }
        other if other.starts_with("ablate") => {
            let rows = need_array_len(&doc, "/rows", &path)?;
            println!("  rows:         {rows}");
            for row in doc["rows"].as_array().unwrap() {
                let label = row.get("label").and_then(Value::as_str).unwrap_or("?");
                let total = row
                    .pointer("/eval/total_mean_acc")
                    .and_then(Value::as_f64)
                    .ok_or_else(|| bad(&path, "row missing eval.total_mean_acc"))?;
                println!("  {label}: total mean acc {total:.4}");
            }
        }
        other => {
            return Err(bad(&path, &format!("unknown report command {other:?}")));
        }
    }
    Ok(())
}

fn bad(path: &Path, msg: &str) -> CliError {
    CliError::Validation(format!("{}: {msg}", path.display()))
}

fn need_u64(doc: &Value, pointer: &str, path: &Path) -> Result<u64, CliError> {
    doc.pointer(pointer)
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(path, &format!("missing numeric field {pointer}")))
}

fn need_array_len(doc: &Value, pointer: &str, path: &Path) -> Result<usize, CliError> {
    doc.pointer(pointer)
        .and_then(Value::as_array)
        .map(Vec::len)
        .ok_or_else(|| bad(path, &format!("missing array field {pointer}")))
}
