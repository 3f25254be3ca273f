//! Report emission: metrics CSV, JSON run manifest, and SVG charts.
//!
//! CSV columns: `method,k,b,seed,accuracy,proportion,sampled_steps,wall_ms,
//! note`. One row per (method, K, b, seed) plus `mean` and `std` aggregate
//! rows. `wall_ms` is a timing diagnostic and, like the manifest timestamp,
//! is excluded from reproducibility guarantees; everything else is
//! byte-stable for a fixed config and seed set.

use super::svg::{line_chart, Series};
use super::{EnvConfig, ExperimentConfig, ExperimentOutcome, MetricsRow};
use crate::env::{rat_to_string, KeyMode};
use crate::error::{CoreError, Result};
use crate::policy::PolicyKind;
use crate::rng::fnv64;
use crate::value_models::{atomic_write, BackendConfig};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

pub fn render_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("method,k,b,seed,accuracy,proportion,sampled_steps,wall_ms,note\n");
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let note = if row.vanilla_equivalent {
            "vanilla-equivalent"
        } else {
            ""
        };
        for m in &row.per_seed {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{},{},{}\n",
                row.method,
                opt(row.k),
                opt(row.b),
                m.seed,
                m.accuracy,
                m.proportion,
                m.sampled_steps,
                m.wall_ms,
                note
            ));
        }
        let mean_sampled = super::mean(
            &row.per_seed
                .iter()
                .map(|m| m.sampled_steps as f64)
                .collect::<Vec<_>>(),
        );
        let mean_wall = super::mean(
            &row.per_seed
                .iter()
                .map(|m| m.wall_ms as f64)
                .collect::<Vec<_>>(),
        );
        out.push_str(&format!(
            "{},{},{},mean,{:.6},{:.6},{:.1},{:.1},{}\n",
            row.method,
            opt(row.k),
            opt(row.b),
            row.mean_accuracy,
            row.mean_proportion,
            mean_sampled,
            mean_wall,
            note
        ));
        out.push_str(&format!(
            "{},{},{},std,{:.6},{:.6},,,{}\n",
            row.method,
            opt(row.k),
            opt(row.b),
            row.std_accuracy,
            row.std_proportion,
            note
        ));
    }
    out
}

/// Strip the non-deterministic columns (`wall_ms`) from a rendered CSV;
/// used by determinism checks.
pub fn csv_without_timings(csv: &str) -> String {
    let mut out = String::new();
    for line in csv.lines() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() == 9 {
            out.push_str(&cells[..7].join(","));
            out.push(',');
            out.push_str(cells[8]);
        } else {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

pub fn config_json(config: &ExperimentConfig) -> Value {
    let env = match &config.env {
        EnvConfig::Game24 {
            train_questions,
            eval_questions,
            min_value,
            max_value,
            puzzle_file,
        } => json!({
            "kind": "game24",
            "train_questions": train_questions,
            "eval_questions": eval_questions,
            "min_value": min_value,
            "max_value": max_value,
            "puzzle_file": puzzle_file.as_ref().map(|p| p.display().to_string()),
        }),
        EnvConfig::Chain {
            steps,
            wrong_branches,
            good_prob,
            instances,
        } => json!({
            "kind": "chain",
            "steps": steps,
            "wrong_branches": wrong_branches,
            "good_prob": good_prob.iter().map(rat_to_string).collect::<Vec<_>>(),
            "instances": instances,
        }),
    };
    let policy = json!({
        "kind": match config.policy.kind {
            PolicyKind::NoisyExpert => "noisy-expert",
            PolicyKind::UniformLegal => "uniform-legal",
            PolicyKind::SoftmaxTabular => "softmax-tabular",
        },
        "epsilon": rat_to_string(&config.policy.epsilon),
        "wrong_result_weight": rat_to_string(&config.policy.wrong_result_weight),
        "unavailable_weight": rat_to_string(&config.policy.unavailable_weight),
        "temperature": config.policy.temperature,
        "seed_namespace": config.policy.seed_namespace,
    });
    let training = json!({
        "paths_per_question": config.training.paths_per_question,
        "backend": match config.training.backend {
            BackendConfig::Tabular => json!("tabular"),
            BackendConfig::HashedLinear { dimension } =>
                json!({"hashed-linear": {"dimension": dimension}}),
        },
        "key_mode": match config.training.key_mode {
            KeyMode::FullPrefix => "prefix",
            KeyMode::AbstractState => "state",
        },
        "fallback": config.training.fallback,
        "epochs": config.training.hyper.epochs,
        "batch_size": config.training.hyper.batch_size,
        "learning_rate": config.training.hyper.learning_rate,
        "train_seed": config.training.hyper.seed,
    });
    let decodes: Vec<Value> = config
        .decodes
        .iter()
        .map(|d| {
            json!({
                "method": d.method_label(),
                "k": d.k(),
                "b": d.b(),
            })
        })
        .collect();
    json!({
        "env": env,
        "policy": policy,
        "training": training,
        "decodes": decodes,
        "seeds": config.seeds,
        "max_steps": config.max_steps,
        "dedup_priority": config.dedup_priority,
    })
}

/// Content hash of the canonical JSON rendering (64-bit FNV-1a, hex).
pub fn content_hash(value: &Value) -> String {
    format!("{:016x}", fnv64(value.to_string().as_bytes()))
}

pub fn render_manifest(outcome: &ExperimentOutcome, outputs: &[String]) -> String {
    let manifest = json!({
        "tool": "ovmlab",
        "modules": { "ovmlab-core": env!("CARGO_PKG_VERSION") },
        "created_unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        "config_hash": outcome.config_hash,
        "seeds": outcome.config_json.get("seeds").cloned().unwrap_or_default(),
        "config": outcome.config_json,
        "label_consistency": outcome.label_consistency,
        "annotation_costs": outcome.costs.iter().map(|c| json!({
            "outcome_labels": c.outcome_labels,
            "outcome_annotations": c.outcome_annotations,
            "process_labels": c.process_labels,
            "process_annotations": c.process_annotations,
            "mean_path_len": c.mean_path_len,
        })).collect::<Vec<_>>(),
        "outputs": outputs,
    });
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

/// Series of (x, accuracy/proportion) per method for the vs-K charts, taking
/// the best value across beam widths at each K.
fn best_by_k(rows: &[MetricsRow], accuracy: bool) -> Vec<Series> {
    let mut methods: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut series = Vec::new();
    for method in methods {
        let mut points: Vec<(f64, f64)> = Vec::new();
        let mut ks: Vec<usize> = rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.k)
            .collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let best = rows
                .iter()
                .filter(|r| r.method == method && r.k == Some(k))
                .map(|r| {
                    if accuracy {
                        r.mean_accuracy
                    } else {
                        r.mean_proportion
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                points.push((k as f64, best));
            }
        }
        if !points.is_empty() {
            series.push(Series {
                name: method,
                points,
            });
        }
    }
    series
}

/// Series of (b, metric) per (beam method, K).
fn beam_by_b(rows: &[MetricsRow], accuracy: bool) -> Vec<Series> {
    let mut keys: Vec<(String, usize)> = rows
        .iter()
        .filter(|r| r.b.is_some())
        .filter_map(|r| r.k.map(|k| (r.method.clone(), k)))
        .collect();
    keys.sort();
    keys.dedup();
    let mut series = Vec::new();
    for (method, k) in keys {
        let mut points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == method && r.k == Some(k))
            .filter_map(|r| {
                r.b.map(|b| {
                    (
                        b as f64,
                        if accuracy {
                            r.mean_accuracy
                        } else {
                            r.mean_proportion
                        },
                    )
                })
            })
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if points.len() >= 2 {
            series.push(Series {
                name: format!("{method} K={k}"),
                points,
            });
        }
    }
    series
}

/// Write metrics CSV, manifest and charts into `dir`. Returns the files
/// written.
pub fn emit_report(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join("metrics.csv");
    atomic_write(&csv_path, render_csv(&outcome.rows).as_bytes())?;
    written.push(csv_path);

    let charts = dir.join("charts");
    std::fs::create_dir_all(&charts)?;
    let chart_specs: [(&str, Vec<Series>, &str); 4] = [
        (
            "accuracy_vs_k.svg",
            best_by_k(&outcome.rows, true),
            "accuracy",
        ),
        (
            "proportion_vs_k.svg",
            best_by_k(&outcome.rows, false),
            "correct-answer proportion",
        ),
        (
            "accuracy_vs_b.svg",
            beam_by_b(&outcome.rows, true),
            "accuracy",
        ),
        (
            "proportion_vs_b.svg",
            beam_by_b(&outcome.rows, false),
            "correct-answer proportion",
        ),
    ];
    for (name, series, ylab) in chart_specs {
        if series.is_empty() {
            continue;
        }
        let xlab = if name.contains("_vs_k") { "K" } else { "b" };
        let path = charts.join(name);
        let title = name.trim_end_matches(".svg").replace('_', " ");
        atomic_write(&path, line_chart(&title, xlab, ylab, &series).as_bytes())?;
        written.push(path);
    }

    let manifest_path = dir.join("manifest.json");
    let outputs: Vec<String> = written
        .iter()
        .map(|p| {
            p.strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    atomic_write(
        &manifest_path,
        render_manifest(outcome, &outputs).as_bytes(),
    )?;
    written.push(manifest_path);
    Ok(written)
}

/// Parsed aggregate row of a metrics CSV (the `mean` rows), enough to
/// regenerate charts.
pub fn parse_csv_means(csv: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::InvalidData("empty CSV".into()))?;
    if !header.starts_with("method,k,b,seed") {
        return Err(CoreError::InvalidData("unrecognized CSV header".into()));
    }
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 || cells[3] != "mean" {
            continue;
        }
        let parse_opt = |s: &str| -> Option<usize> { s.parse().ok() };
        let accuracy: f64 = cells[4]
            .parse()
            .map_err(|_| CoreError::InvalidData(format!("bad accuracy in: {line}")))?;
        let proportion: f64 = cells[5]
            .parse()
            .map_err(|_| CoreError::InvalidData(format!("bad proportion in: {line}")))?;
        rows.push(MetricsRow {
            method: cells[0].to_string(),
            k: parse_opt(cells[1]),
            b: parse_opt(cells[2]),
            vanilla_equivalent: cells[8] == "vanilla-equivalent",
            per_seed: Vec::new(),
            mean_accuracy: accuracy,
            std_accuracy: 0.0,
            mean_proportion: proportion,
            std_proportion: 0.0,
        });
    }
    Ok(rows)
}

/// Regenerate charts from an existing metrics CSV.
pub fn charts_from_csv(csv: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = parse_csv_means(csv)?;
    if rows.is_empty() {
        return Err(CoreError::InvalidData("no aggregate rows in CSV".into()));
    }
    let charts = dir.join("charts");
    std::fs::create_dir_all(&charts)?;
    let mut written = Vec::new();
    let specs: [(&str, Vec<Series>, &str); 4] = [
        ("accuracy_vs_k.svg", best_by_k(&rows, true), "accuracy"),
        (
            "proportion_vs_k.svg",
            best_by_k(&rows, false),
            "correct-answer proportion",
        ),
        ("accuracy_vs_b.svg", beam_by_b(&rows, true), "accuracy"),
        (
            "proportion_vs_b.svg",
            beam_by_b(&rows, false),
            "correct-answer proportion",
        ),
    ];
    for (name, series, ylab) in specs {
        if series.is_empty() {
            continue;
        }
        let xlab = if name.contains("_vs_k") { "K" } else { "b" };
        let path = charts.join(name);
        let title = name.trim_end_matches(".svg").replace('_', " ");
        atomic_write(&path, line_chart(&title, xlab, ylab, &series).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
