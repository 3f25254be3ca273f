//! JSONL dataset files: a header line, one line per task instance, then one
//! line per training sample (instance id, serialized steps, outcome label,
//! optional step labels).

use super::TrainingSample;
use crate::env::{
    rat_from_str, rat_to_string, PartialPath, ReasoningStep, StepLabel, TaskInstance, TaskSpec,
};
use crate::error::{CoreError, Result};
use crate::GameValue;
use serde_json::{json, Value};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

const DATASET_VERSION: u64 = 1;

fn instance_json(instance: &TaskInstance) -> Value {
    match instance.spec() {
        TaskSpec::Game24 { inputs } => json!({
            "type": "instance",
            "id": instance.id(),
            "kind": "game24",
            "inputs": inputs.iter().map(rat_to_string).collect::<Vec<_>>(),
        }),
        TaskSpec::Chain {
            steps,
            wrong_branches,
            good_prob,
        } => json!({
            "type": "instance",
            "id": instance.id(),
            "kind": "chain",
            "steps": steps,
            "wrong_branches": wrong_branches,
            "good_prob": good_prob.iter().map(rat_to_string).collect::<Vec<_>>(),
        }),
    }
}

fn instance_from_json(value: &Value) -> Result<Arc<TaskInstance>> {
    let bad = |msg: &str| CoreError::InvalidData(format!("dataset instance: {msg}"));
    let id = value["id"].as_str().ok_or_else(|| bad("missing id"))?;
    match value["kind"].as_str() {
        Some("game24") => {
            let inputs = value["inputs"]
                .as_array()
                .ok_or_else(|| bad("missing inputs"))?;
            if inputs.len() != 4 {
                return Err(bad("game24 needs 4 inputs"));
            }
            let mut parsed = [GameValue::from_integer(1); 4];
            for (slot, v) in parsed.iter_mut().zip(inputs) {
                *slot = rat_from_str(v.as_str().ok_or_else(|| bad("non-string input"))?)?;
            }
            TaskInstance::game24(id, parsed)
        }
        Some("chain") => {
            let steps = value["steps"]
                .as_u64()
                .ok_or_else(|| bad("missing steps"))? as usize;
            let wrong = value["wrong_branches"]
                .as_u64()
                .ok_or_else(|| bad("missing wrong_branches"))? as usize;
            let good_prob = value["good_prob"]
                .as_array()
                .ok_or_else(|| bad("missing good_prob"))?
                .iter()
                .map(|v| rat_from_str(v.as_str().unwrap_or_default()))
                .collect::<Result<Vec<_>>>()?;
            TaskInstance::chain(id, steps, wrong, good_prob)
        }
        _ => Err(bad("unknown kind")),
    }
}

pub fn render_dataset(samples: &[TrainingSample], meta: Value) -> String {
    let mut out = String::new();
    let header = json!({
        "type": "header",
        "version": DATASET_VERSION,
        "meta": meta,
    });
    out.push_str(&header.to_string());
    out.push('\n');

    let mut seen: Vec<&str> = Vec::new();
    for sample in samples {
        let id = sample.instance_id();
        if !seen.contains(&id) {
            seen.push(id);
            out.push_str(&instance_json(sample.path.instance()).to_string());
            out.push('\n');
        }
    }
    for sample in samples {
        let steps: Vec<String> = sample.path.steps().iter().map(|s| s.line()).collect();
        let mut record = json!({
            "type": "sample",
            "instance": sample.instance_id(),
            "steps": steps,
            "outcome": sample.outcome as u8,
            "truncated": sample.path.is_truncated(),
        });
        if let Some(labels) = &sample.step_labels {
            record["step_labels"] = labels
                .iter()
                .map(|l| json!([l.prm as u8, l.prm_o as u8]))
                .collect();
        }
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

pub fn write_dataset(samples: &[TrainingSample], meta: Value, path: &Path) -> Result<()> {
    super::atomic_write(path, render_dataset(samples, meta).as_bytes())
}

pub fn parse_dataset(text: &str) -> Result<Vec<TrainingSample>> {
    let bad = |msg: String| CoreError::InvalidData(msg);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Value = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| bad("empty dataset file".into()))?,
    )
    .map_err(|e| bad(format!("bad header: {e}")))?;
    if header["type"] != "header" {
        return Err(bad("first line is not a dataset header".into()));
    }
    if header["version"].as_u64() != Some(DATASET_VERSION) {
        return Err(bad(format!(
            "unsupported dataset version {}",
            header["version"]
        )));
    }

    let mut instances: HashMap<String, Arc<TaskInstance>> = HashMap::new();
    let mut samples = Vec::new();
    for line in lines {
        let record: Value =
            serde_json::from_str(line).map_err(|e| bad(format!("bad record: {e}")))?;
        match record["type"].as_str() {
            Some("instance") => {
                let instance = instance_from_json(&record)?;
                instances.insert(instance.id().to_string(), instance);
            }
            Some("sample") => {
                let id = record["instance"]
                    .as_str()
                    .ok_or_else(|| bad("sample without instance id".into()))?;
                let instance = instances
                    .get(id)
                    .ok_or_else(|| bad(format!("sample references unknown instance {id}")))?;
                let mut path = PartialPath::empty(instance.clone());
                for step_line in record["steps"]
                    .as_array()
                    .ok_or_else(|| bad("sample without steps".into()))?
                {
                    let step = ReasoningStep::parse_line(
                        step_line
                            .as_str()
                            .ok_or_else(|| bad("non-string step".into()))?,
                    )?;
                    path = path.force_step(&step)?;
                }
                if record["truncated"].as_bool() == Some(true) {
                    path = path.mark_truncated();
                }
                if !path.is_terminal() {
                    return Err(bad(format!("sample on {id} is not a complete path")));
                }
                let outcome = match record["outcome"].as_u64() {
                    Some(0) => false,
                    Some(1) => true,
                    _ => return Err(bad("outcome must be 0 or 1".into())),
                };
                if outcome != path.verdict()?.correct {
                    return Err(bad(format!(
                        "outcome label disagrees with verification on {id}"
                    )));
                }
                let step_labels = match record.get("step_labels") {
                    None | Some(Value::Null) => None,
                    Some(Value::Array(rows)) => {
                        if rows.len() != path.len() {
                            return Err(bad("step_labels length mismatch".into()));
                        }
                        Some(
                            rows.iter()
                                .map(|row| {
                                    let pair = row.as_array()?;
                                    let prm = pair.first()?.as_u64()?;
                                    let prm_o = pair.get(1)?.as_u64()?;
                                    Some(StepLabel::new(prm == 1, prm_o == 1))
                                })
                                .collect::<Option<Vec<_>>>()
                                .ok_or_else(|| bad("malformed step_labels".into()))?,
                        )
                    }
                    Some(_) => return Err(bad("malformed step_labels".into())),
                };
                samples.push(TrainingSample {
                    path,
                    outcome,
                    step_labels,
                });
            }
            _ => return Err(bad(format!("unknown record type in line: {line}"))),
        }
    }
    Ok(samples)
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingSample>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}
