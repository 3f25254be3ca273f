//! TOML configuration: schema, dotted-key overrides, and conversion into the
//! core experiment types. Unknown keys are rejected; override values are
//! type-checked by the same deserialization pass as the file itself.

use ovmlab_core::env::KeyMode;
use ovmlab_core::experiments::{
    DecodeSpec, EnvConfig, ExperimentConfig, ScorerKind, SweepGrid, TrainingConfig,
};
use ovmlab_core::policy::{PolicyKind, PolicySpec};
use ovmlab_core::value_models::{BackendConfig, TrainHyper};
use ovmlab_core::GameValue;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum ConfigError {
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type ConfigResult<T> = Result<T, ConfigError>;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// A rational-valued knob: an exact string such as `"1/2"` or `"0.85"`, or a
/// plain integer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RationalParam {
    Int(i64),
    Text(String),
}

impl RationalParam {
    pub fn parse(&self) -> ConfigResult<GameValue> {
        match self {
            RationalParam::Int(v) => Ok(GameValue::from_integer(*v)),
            RationalParam::Text(s) => parse_rational(s),
        }
    }
}

/// Parse `"n"`, `"n/d"`, or a decimal string such as `"0.85"` exactly.
pub fn parse_rational(s: &str) -> ConfigResult<GameValue> {
    let s = s.trim();
    let err = || ConfigError::Invalid(format!("cannot parse rational: {s:?}"));
    if let Some((whole, frac)) = s.split_once('.') {
        let sign = if whole.starts_with('-') { -1 } else { 1 };
        let whole_num: i64 = if whole.is_empty() || whole == "-" {
            0
        } else {
            whole.parse().map_err(|_| err())?
        };
        if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let denom = 10i64.pow(frac.len() as u32);
        let frac_num: i64 = frac.parse().map_err(|_| err())?;
        return Ok(GameValue::new(whole_num * denom + sign * frac_num, denom));
    }
    ovmlab_core::env::rat_from_str(s).map_err(|_| err())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: String,
    // game24
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_questions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub puzzle_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_questions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_value: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_value: Option<i64>,
    // chain
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrong_branches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub good_prob: Option<Vec<RationalParam>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<RationalParam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrong_result_weight: Option<RationalParam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable_weight: Option<RationalParam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Label root for streams derived on behalf of this policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_namespace: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths_per_question: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_seed: Option<u64>,
    /// Model targets the `train` subcommand writes: any of
    /// "outcome", "prm", "prm-o".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supervision: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dedup_priority: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub scorers: Vec<String>,
    pub k_values: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: EnvSection,
    pub policy: PolicySection,
    #[serde(default)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub decode: Vec<DecodeSection>,
    #[serde(default)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

/// Parse TOML text, apply `--set` overrides (dotted keys), deserialize.
pub fn load_config(text: &str, overrides: &[String]) -> ConfigResult<FileConfig> {
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| ConfigError::Parse(format!("{e}")))?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    value
        .try_into()
        .map_err(|e| ConfigError::Parse(format!("{e}")))
}

fn apply_override(root: &mut toml::Value, entry: &str) -> ConfigResult<()> {
    let (path, raw) = entry.split_once('=').ok_or_else(|| {
        ConfigError::Invalid(format!("override {entry:?} is not of the form key=value"))
    })?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t
            .get("v")
            .cloned()
            .unwrap_or(toml::Value::String(raw.into())),
        _ => toml::Value::String(raw.trim().to_string()),
    };
    let mut cursor = root;
    let segments: Vec<&str> = path.trim().split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(ConfigError::Invalid(format!("bad override key {path:?}")));
        }
        if i + 1 == segments.len() {
            match cursor {
                toml::Value::Table(t) => {
                    t.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "override path {path:?} does not address a table"
                    )))
                }
            }
        }
        let table = match cursor {
            toml::Value::Table(t) => t,
            _ => {
                return Err(ConfigError::Invalid(format!(
                    "override path {path:?} does not address a table"
                )))
            }
        };
        cursor = table
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!("split never yields an empty iterator")
}

// ---------------------------------------------------------------------------
// Conversion into core types
// ---------------------------------------------------------------------------

pub fn env_config(section: &EnvSection) -> ConfigResult<EnvConfig> {
    match section.kind.as_str() {
        "game24" => Ok(EnvConfig::Game24 {
            train_questions: section.train_questions.unwrap_or(50),
            eval_questions: section.eval_questions.unwrap_or(30),
            min_value: section.min_value.unwrap_or(1),
            max_value: section.max_value.unwrap_or(13),
            puzzle_file: section.puzzle_file.as_ref().map(Into::into),
        }),
        "chain" => {
            let good_prob = section
                .good_prob
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("chain env needs good_prob".into()))?
                .iter()
                .map(|p| p.parse())
                .collect::<ConfigResult<Vec<_>>>()?;
            Ok(EnvConfig::Chain {
                steps: section
                    .steps
                    .ok_or_else(|| ConfigError::Invalid("chain env needs steps".into()))?,
                wrong_branches: section.wrong_branches.unwrap_or(2),
                good_prob,
                instances: section.instances.unwrap_or(1),
            })
        }
        other => Err(ConfigError::Invalid(format!("unknown env kind {other:?}"))),
    }
}

pub fn policy_spec(section: &PolicySection) -> ConfigResult<PolicySpec> {
    let rat = |p: &Option<RationalParam>, default: GameValue| -> ConfigResult<GameValue> {
        p.as_ref().map(|v| v.parse()).unwrap_or(Ok(default))
    };
    let kind = match section.kind.as_str() {
        "noisy-expert" => PolicyKind::NoisyExpert,
        "uniform-legal" => PolicyKind::UniformLegal,
        "softmax-tabular" => PolicyKind::SoftmaxTabular,
        other => {
            return Err(ConfigError::Invalid(format!(
                "unknown policy kind {other:?}"
            )))
        }
    };
    let spec = PolicySpec {
        kind,
        epsilon: rat(&section.epsilon, GameValue::from_integer(0))?,
        wrong_result_weight: rat(&section.wrong_result_weight, GameValue::from_integer(1))?,
        unavailable_weight: rat(&section.unavailable_weight, GameValue::from_integer(0))?,
        temperature: section.temperature.unwrap_or(1.0),
        seed_namespace: section
            .seed_namespace
            .clone()
            .unwrap_or_else(|| "policy".into()),
    };
    spec.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(spec)
}

pub fn training_config(section: &Option<TrainingSection>) -> ConfigResult<TrainingConfig> {
    let defaults = TrainingConfig::default();
    let Some(s) = section else {
        return Ok(defaults);
    };
    let backend = match s.backend.as_deref() {
        None | Some("tabular") => BackendConfig::Tabular,
        Some("hashed-linear") => BackendConfig::HashedLinear {
            dimension: s.dimension.unwrap_or(4096),
        },
        Some(other) => return Err(ConfigError::Invalid(format!("unknown backend {other:?}"))),
    };
    let key_mode = match s.key_mode.as_deref() {
        None | Some("prefix") => KeyMode::FullPrefix,
        Some("state") => KeyMode::AbstractState,
        Some(other) => return Err(ConfigError::Invalid(format!("unknown key_mode {other:?}"))),
    };
    Ok(TrainingConfig {
        paths_per_question: s.paths_per_question.unwrap_or(defaults.paths_per_question),
        backend,
        key_mode,
        fallback: s.fallback.unwrap_or(defaults.fallback),
        hyper: TrainHyper {
            epochs: s.epochs.unwrap_or(defaults.hyper.epochs),
            batch_size: s.batch_size.unwrap_or(defaults.hyper.batch_size),
            learning_rate: s.learning_rate.unwrap_or(defaults.hyper.learning_rate),
            seed: s.train_seed.unwrap_or(defaults.hyper.seed),
        },
    })
}

pub fn scorer_kind(name: &str) -> ConfigResult<ScorerKind> {
    match name {
        "ovm" | "orm" => Ok(ScorerKind::Ovm),
        "prm" => Ok(ScorerKind::Prm),
        "prmo" | "prm-o" => Ok(ScorerKind::PrmO),
        "oracle" => Ok(ScorerKind::Oracle),
        other => Err(ConfigError::Invalid(format!("unknown scorer {other:?}"))),
    }
}

pub fn decode_spec(section: &DecodeSection) -> ConfigResult<DecodeSpec> {
    let k = || {
        section
            .k
            .ok_or_else(|| ConfigError::Invalid(format!("method {} needs k", section.method)))
    };
    match section.method.as_str() {
        "greedy" => Ok(DecodeSpec::Greedy),
        "sc" => Ok(DecodeSpec::SelfConsistency { k: k()? }),
        m if m.ends_with("-rerank") => Ok(DecodeSpec::Rerank {
            scorer: scorer_kind(m.trim_end_matches("-rerank"))?,
            k: k()?,
        }),
        m if m.ends_with("-beam") => Ok(DecodeSpec::Beam {
            scorer: scorer_kind(m.trim_end_matches("-beam"))?,
            k: k()?,
            b: section.b.ok_or_else(|| {
                ConfigError::Invalid(format!("method {} needs b", section.method))
            })?,
        }),
        other => Err(ConfigError::Invalid(format!(
            "unknown decode method {other:?}"
        ))),
    }
}

pub fn experiment_config(file: &FileConfig) -> ConfigResult<ExperimentConfig> {
    let run = file.run.clone().unwrap_or(RunSection {
        seeds: None,
        max_steps: None,
        dedup_priority: None,
        output_dir: None,
    });
    let decodes = file
        .decode
        .iter()
        .map(decode_spec)
        .collect::<ConfigResult<Vec<_>>>()?;
    let config = ExperimentConfig {
        env: env_config(&file.env)?,
        policy: policy_spec(&file.policy)?,
        training: training_config(&file.training)?,
        decodes,
        seeds: run.seeds.unwrap_or_else(|| vec![0, 1, 2]),
        max_steps: run.max_steps.unwrap_or(10),
        dedup_priority: run.dedup_priority.unwrap_or(true),
    };
    Ok(config)
}

pub fn sweep_grid(file: &FileConfig) -> ConfigResult<SweepGrid> {
    let section = file
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("config has no [sweep] section".into()))?;
    let scorers = section
        .scorers
        .iter()
        .map(|s| scorer_kind(s))
        .collect::<ConfigResult<Vec<_>>>()?;
    Ok(SweepGrid {
        scorers,
        k_values: section.k_values.clone(),
        b_values: section.b_values.clone().unwrap_or_default(),
        include_baselines: section.baselines.unwrap_or(true),
    })
}

pub fn output_dir(file: &FileConfig, flag: Option<&str>) -> std::path::PathBuf {
    if let Some(dir) = flag {
        return dir.into();
    }
    file.run
        .as_ref()
        .and_then(|r| r.output_dir.as_deref())
        .unwrap_or("out")
        .into()
}

/// Model targets requested by `[training].supervision`; defaults to outcome
/// supervision only.
pub fn supervision_targets(file: &FileConfig) -> ConfigResult<Vec<String>> {
    let targets = file
        .training
        .as_ref()
        .and_then(|t| t.supervision.clone())
        .unwrap_or_else(|| vec!["outcome".into()]);
    for t in &targets {
        if !matches!(t.as_str(), "outcome" | "prm" | "prm-o") {
            return Err(ConfigError::Invalid(format!(
                "unknown supervision target {t:?}"
            )));
        }
    }
    Ok(targets)
}
