//! End-to-end experiment harness.
//!
//! A run is: build instances, sample a training set, train the requested
//! scorers, decode every evaluation instance with every decode spec, and
//! aggregate accuracy and correct-answer proportion across seeds. Everything
//! is keyed off derived random streams, so a run is a pure function of
//! (config, seeds) up to wall-clock diagnostics.

pub mod report;
mod svg;

use crate::env::{generate_puzzles, KeyMode, PartialPath, TaskInstance};
use crate::error::{CoreError, Result};
use crate::policy::PolicySpec;
use crate::rng::RngStream;
use crate::search::{
    greedy_decode, rerank_best_of_k, self_consistency, value_guided_beam_search, vanilla_sample,
    BeamConfig, OracleScorer, PrefixScorer,
};
use crate::value_models::{
    build_training_set, BackendConfig, OutcomeValueModel, PrmVariant, ProcessRewardModel,
    TrainHyper, TrainingSample,
};
use crate::GameValue;
use std::sync::Arc;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Game24 {
        train_questions: usize,
        eval_questions: usize,
        min_value: i64,
        max_value: i64,
        /// Take puzzles from this list file instead of the seeded generator.
        puzzle_file: Option<std::path::PathBuf>,
    },
    /// Chain tasks evaluate on the same parametric instances they train on.
    Chain {
        steps: usize,
        wrong_branches: usize,
        good_prob: Vec<GameValue>,
        instances: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub paths_per_question: usize,
    pub backend: BackendConfig,
    pub key_mode: KeyMode,
    pub fallback: f64,
    pub hyper: TrainHyper,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            paths_per_question: 200,
            backend: BackendConfig::Tabular,
            // Per-prefix statistics by default; experiments that evaluate on
            // held-out questions opt into state keying explicitly.
            key_mode: KeyMode::FullPrefix,
            fallback: 0.5,
            hyper: TrainHyper::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    Ovm,
    Prm,
    PrmO,
    Oracle,
}

impl ScorerKind {
    fn tag(&self) -> &'static str {
        match self {
            ScorerKind::Ovm => "ovm",
            ScorerKind::Prm => "prm",
            ScorerKind::PrmO => "prmo",
            ScorerKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeSpec {
    Greedy,
    SelfConsistency {
        k: usize,
    },
    Rerank {
        scorer: ScorerKind,
        k: usize,
    },
    Beam {
        scorer: ScorerKind,
        k: usize,
        b: usize,
    },
}

impl DecodeSpec {
    pub fn method_label(&self) -> String {
        match self {
            DecodeSpec::Greedy => "greedy".into(),
            DecodeSpec::SelfConsistency { .. } => "sc".into(),
            DecodeSpec::Rerank { scorer, .. } => match scorer {
                ScorerKind::Ovm => "orm-rerank".into(),
                other => format!("{}-rerank", other.tag()),
            },
            DecodeSpec::Beam { scorer, .. } => format!("{}-beam", scorer.tag()),
        }
    }

    pub fn k(&self) -> Option<usize> {
        match self {
            DecodeSpec::Greedy => None,
            DecodeSpec::SelfConsistency { k }
            | DecodeSpec::Rerank { k, .. }
            | DecodeSpec::Beam { k, .. } => Some(*k),
        }
    }

    pub fn b(&self) -> Option<usize> {
        match self {
            DecodeSpec::Beam { b, .. } => Some(*b),
            _ => None,
        }
    }

    /// Beam with b = K performs no pruning: it is vanilla sampling plus
    /// post-selection.
    pub fn is_vanilla_equivalent(&self) -> bool {
        matches!(self, DecodeSpec::Beam { k, b, .. } if k == b)
    }

    fn scorer(&self) -> Option<ScorerKind> {
        match self {
            DecodeSpec::Rerank { scorer, .. } | DecodeSpec::Beam { scorer, .. } => Some(*scorer),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DecodeSpec::Greedy => Ok(()),
            DecodeSpec::SelfConsistency { k } | DecodeSpec::Rerank { k, .. } => {
                if *k == 0 {
                    return Err(CoreError::InvalidConfig("k must be at least 1".into()));
                }
                Ok(())
            }
            DecodeSpec::Beam { k, b, .. } => {
                if *k == 0 || *b == 0 || b > k || !k.is_multiple_of(*b) {
                    return Err(CoreError::InvalidConfig(format!(
                        "beam spec requires b | k, got k={k} b={b}"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: PolicySpec,
    pub training: TrainingConfig,
    pub decodes: Vec<DecodeSpec>,
    pub seeds: Vec<u64>,
    pub max_steps: usize,
    pub dedup_priority: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::InvalidConfig("seeds must be non-empty".into()));
        }
        if self.max_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "max_steps must be positive".into(),
            ));
        }
        if self.decodes.is_empty() {
            return Err(CoreError::InvalidConfig(
                "at least one decode spec is required".into(),
            ));
        }
        self.policy.validate()?;
        for d in &self.decodes {
            d.validate()?;
        }
        match &self.env {
            EnvConfig::Game24 {
                train_questions,
                eval_questions,
                min_value,
                max_value,
                ..
            } => {
                if *train_questions == 0 || *eval_questions == 0 {
                    return Err(CoreError::InvalidConfig(
                        "game24 requires train and eval questions".into(),
                    ));
                }
                if *min_value < 1 || max_value < min_value {
                    return Err(CoreError::InvalidConfig("bad game24 value range".into()));
                }
            }
            EnvConfig::Chain {
                steps,
                wrong_branches,
                good_prob,
                instances,
            } => {
                if *instances == 0 {
                    return Err(CoreError::InvalidConfig(
                        "chain requires at least one instance".into(),
                    ));
                }
                // Constructor re-checks, but fail early with a clear message.
                TaskInstance::chain("probe", *steps, *wrong_branches, good_prob.clone())?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub proportion: f64,
    pub sampled_steps: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub k: Option<usize>,
    pub b: Option<usize>,
    pub vanilla_equivalent: bool,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_proportion: f64,
    pub std_proportion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub outcome_labels: u64,
    pub outcome_annotations: u64,
    pub process_labels: u64,
    pub process_annotations: u64,
    pub mean_path_len: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<MetricsRow>,
    /// Per-seed agreement rate between the two process-label schemes.
    pub label_consistency: Vec<f64>,
    /// Per-seed annotation-cost accounting of the training sets.
    pub costs: Vec<CostReport>,
    pub config_json: serde_json::Value,
    pub config_hash: String,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Fraction of steps where the two process-label schemes agree.
pub fn label_consistency(samples: &[TrainingSample]) -> Result<f64> {
    let mut agree = 0u64;
    let mut total = 0u64;
    for sample in samples {
        let labels = sample
            .step_labels
            .as_ref()
            .ok_or(CoreError::MissingStepLabels)?;
        for l in labels {
            agree += (l.prm == l.prm_o) as u64;
            total += 1;
        }
    }
    if total == 0 {
        return Err(CoreError::MissingStepLabels);
    }
    Ok(agree as f64 / total as f64)
}

/// Outcome supervision needs one label (and one annotation) per sample;
/// process supervision needs one per step.
pub fn annotation_cost_report(samples: &[TrainingSample]) -> CostReport {
    let outcome = samples.len() as u64;
    let steps: u64 = samples.iter().map(|s| s.path.len() as u64).sum();
    CostReport {
        outcome_labels: outcome,
        outcome_annotations: outcome,
        process_labels: steps,
        process_annotations: steps,
        mean_path_len: if outcome == 0 {
            0.0
        } else {
            steps as f64 / outcome as f64
        },
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Train and eval instance lists for one seed.
pub type InstanceSplit = (Vec<Arc<TaskInstance>>, Vec<Arc<TaskInstance>>);

/// Train and eval instances for one seed.
pub fn make_instances(env: &EnvConfig, stream: &RngStream) -> Result<InstanceSplit> {
    match env {
        EnvConfig::Game24 {
            train_questions,
            eval_questions,
            min_value,
            max_value,
            puzzle_file,
        } => {
            let puzzles = match puzzle_file {
                Some(path) => {
                    let listed = crate::env::read_puzzle_file(path)?;
                    if listed.len() < train_questions + eval_questions {
                        return Err(CoreError::InvalidConfig(format!(
                            "puzzle file {} has {} puzzles, need {}",
                            path.display(),
                            listed.len(),
                            train_questions + eval_questions
                        )));
                    }
                    listed[..train_questions + eval_questions].to_vec()
                }
                None => generate_puzzles(
                    train_questions + eval_questions,
                    *min_value,
                    *max_value,
                    stream,
                )?,
            };
            let mut all = Vec::with_capacity(puzzles.len());
            for (i, p) in puzzles.iter().enumerate() {
                all.push(TaskInstance::game24_ints(format!("q{i:04}"), *p)?);
            }
            let eval = all.split_off(*train_questions);
            Ok((all, eval))
        }
        EnvConfig::Chain {
            steps,
            wrong_branches,
            good_prob,
            instances,
        } => {
            let mut all = Vec::with_capacity(*instances);
            for i in 0..*instances {
                all.push(TaskInstance::chain(
                    format!("chain{i:02}"),
                    *steps,
                    *wrong_branches,
                    good_prob.clone(),
                )?);
            }
            Ok((all.clone(), all))
        }
    }
}

struct SeedModels {
    ovm: Option<OutcomeValueModel>,
    prm: Option<ProcessRewardModel>,
    prmo: Option<ProcessRewardModel>,
}

fn train_models(
    config: &ExperimentConfig,
    samples: &[TrainingSample],
    needed: &std::collections::HashSet<ScorerKind>,
) -> Result<SeedModels> {
    let t = &config.training;
    let mut models = SeedModels {
        ovm: None,
        prm: None,
        prmo: None,
    };
    if needed.contains(&ScorerKind::Ovm) {
        let mut m = OutcomeValueModel::new(t.backend, t.key_mode, t.fallback);
        m.train(samples, &t.hyper)?;
        models.ovm = Some(m);
    }
    if needed.contains(&ScorerKind::Prm) {
        let mut m = ProcessRewardModel::new(PrmVariant::Prm, t.backend, t.key_mode, t.fallback);
        m.train(samples, &t.hyper)?;
        models.prm = Some(m);
    }
    if needed.contains(&ScorerKind::PrmO) {
        let mut m = ProcessRewardModel::new(PrmVariant::PrmO, t.backend, t.key_mode, t.fallback);
        m.train(samples, &t.hyper)?;
        models.prmo = Some(m);
    }
    Ok(models)
}

/// Outcome of one decode spec on one instance.
struct DecodeOutcome {
    correct: bool,
    pool_correct: usize,
    pool_size: usize,
    sampled_steps: usize,
}

fn decode_one(
    spec: &DecodeSpec,
    instance: &Arc<TaskInstance>,
    config: &ExperimentConfig,
    models: &SeedModels,
    oracle: &OracleScorer<'_>,
    stream: &RngStream,
) -> Result<DecodeOutcome> {
    let scorer: Option<&dyn PrefixScorer> = match spec.scorer() {
        Some(ScorerKind::Ovm) => Some(models.ovm.as_ref().expect("ovm trained")),
        Some(ScorerKind::Prm) => Some(models.prm.as_ref().expect("prm trained")),
        Some(ScorerKind::PrmO) => Some(models.prmo.as_ref().expect("prmo trained")),
        Some(ScorerKind::Oracle) => Some(oracle),
        None => None,
    };
    match spec {
        DecodeSpec::Greedy => {
            let result = greedy_decode(instance, &config.policy, config.max_steps)?;
            Ok(DecodeOutcome {
                correct: result.verdict.correct,
                pool_correct: result.verdict.correct as usize,
                pool_size: 1,
                sampled_steps: result.sampled_steps,
            })
        }
        DecodeSpec::SelfConsistency { k } => {
            let paths = vanilla_sample(instance, &config.policy, *k, config.max_steps, stream)?;
            let correct = match self_consistency(&paths) {
                Ok((_, idx)) => paths[idx].verdict()?.correct,
                Err(CoreError::NoAnsweredPaths) => false,
                Err(e) => return Err(e),
            };
            Ok(pool_outcome(correct, &paths))
        }
        DecodeSpec::Rerank { k, .. } => {
            let paths = vanilla_sample(instance, &config.policy, *k, config.max_steps, stream)?;
            let idx = rerank_best_of_k(&paths, scorer.expect("rerank has a scorer"))?;
            let correct = paths[idx].verdict()?.correct;
            Ok(pool_outcome(correct, &paths))
        }
        DecodeSpec::Beam { k, b, .. } => {
            let beam = BeamConfig {
                k: *k,
                b: *b,
                max_steps: config.max_steps,
                dedup_priority: config.dedup_priority,
            };
            let result = value_guided_beam_search(
                instance,
                &config.policy,
                scorer.expect("beam has a scorer"),
                &beam,
                stream,
            )?;
            let pool_correct = result
                .final_pool
                .iter()
                .filter(|(p, _)| p.verdict().map(|v| v.correct).unwrap_or(false))
                .count();
            Ok(DecodeOutcome {
                correct: result.verdict.correct,
                pool_correct,
                pool_size: result.final_pool.len(),
                sampled_steps: result.sampled_steps,
            })
        }
    }
}

fn pool_outcome(correct: bool, paths: &[PartialPath]) -> DecodeOutcome {
    let pool_correct = paths
        .iter()
        .filter(|p| p.verdict().map(|v| v.correct).unwrap_or(false))
        .count();
    DecodeOutcome {
        correct,
        pool_correct,
        pool_size: paths.len(),
        sampled_steps: paths.iter().map(|p| p.len()).sum(),
    }
}

/// Run every decode spec on every seed and aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let needed: std::collections::HashSet<ScorerKind> =
        config.decodes.iter().filter_map(|d| d.scorer()).collect();

    let mut per_spec: Vec<Vec<SeedMetrics>> = vec![Vec::new(); config.decodes.len()];
    let mut consistency = Vec::with_capacity(config.seeds.len());
    let mut costs = Vec::with_capacity(config.seeds.len());

    for &seed in &config.seeds {
        let base = RngStream::new(seed, "exp");
        let (train, eval) = make_instances(&config.env, &base.derive("instances"))?;
        let samples = build_training_set(
            &train,
            &config.policy,
            config.training.paths_per_question,
            config.max_steps,
            true,
            &base.derive("train"),
        )?;
        consistency.push(label_consistency(&samples)?);
        costs.push(annotation_cost_report(&samples));
        let models = train_models(config, &samples, &needed)?;
        let oracle = OracleScorer::new(&config.policy);

        for (spec_idx, spec) in config.decodes.iter().enumerate() {
            let started = Instant::now();
            let mut hits = 0usize;
            let mut proportions = Vec::with_capacity(eval.len());
            let mut sampled_total = 0u64;
            for instance in &eval {
                // Streams are shared across decode specs (common random
                // numbers); a beam with b = K therefore reproduces the
                // rerank row over the same rollouts exactly.
                let stream = base.derive(&format!("decode/{}", instance.id()));
                let outcome = decode_one(spec, instance, config, &models, &oracle, &stream)?;
                hits += outcome.correct as usize;
                proportions.push(outcome.pool_correct as f64 / outcome.pool_size.max(1) as f64);
                sampled_total += outcome.sampled_steps as u64;
            }
            per_spec[spec_idx].push(SeedMetrics {
                seed,
                accuracy: hits as f64 / eval.len() as f64,
                proportion: mean(&proportions),
                sampled_steps: sampled_total,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
    }

    let rows = config
        .decodes
        .iter()
        .zip(per_spec)
        .map(|(spec, per_seed)| {
            let accs: Vec<f64> = per_seed.iter().map(|m| m.accuracy).collect();
            let props: Vec<f64> = per_seed.iter().map(|m| m.proportion).collect();
            MetricsRow {
                method: spec.method_label(),
                k: spec.k(),
                b: spec.b(),
                vanilla_equivalent: spec.is_vanilla_equivalent(),
                mean_accuracy: mean(&accs),
                std_accuracy: sample_std(&accs),
                mean_proportion: mean(&props),
                std_proportion: sample_std(&props),
                per_seed,
            }
        })
        .collect();

    let config_json = report::config_json(config);
    let config_hash = report::content_hash(&config_json);
    Ok(ExperimentOutcome {
        rows,
        label_consistency: consistency,
        costs,
        config_json,
        config_hash,
    })
}

/// Grid of decode specs for sweep runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub scorers: Vec<ScorerKind>,
    pub k_values: Vec<usize>,
    /// Beam widths to try per K; only divisors of K are kept. Empty means
    /// every divisor of K.
    pub b_values: Vec<usize>,
    /// Also run greedy, self-consistency and reranking baselines.
    pub include_baselines: bool,
}

impl SweepGrid {
    pub fn decode_specs(&self) -> Result<Vec<DecodeSpec>> {
        if self.k_values.is_empty() || self.scorers.is_empty() {
            return Err(CoreError::InvalidConfig(
                "sweep needs at least one K and one scorer".into(),
            ));
        }
        let mut out = Vec::new();
        if self.include_baselines {
            out.push(DecodeSpec::Greedy);
        }
        for &k in &self.k_values {
            if k == 0 {
                return Err(CoreError::InvalidConfig("k must be positive".into()));
            }
            if self.include_baselines {
                out.push(DecodeSpec::SelfConsistency { k });
                for &scorer in &self.scorers {
                    out.push(DecodeSpec::Rerank { scorer, k });
                }
            }
            let widths: Vec<usize> = if self.b_values.is_empty() {
                (1..=k).filter(|b| k % b == 0).collect()
            } else {
                self.b_values
                    .iter()
                    .copied()
                    .filter(|b| *b >= 1 && k % b == 0 && *b <= k)
                    .collect()
            };
            for &scorer in &self.scorers {
                for &b in &widths {
                    out.push(DecodeSpec::Beam { scorer, k, b });
                }
            }
        }
        Ok(out)
    }
}

/// Expand the grid into decode specs and run. Rows for b = K come back
/// flagged as vanilla-equivalent.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid) -> Result<ExperimentOutcome> {
    let mut config = base.clone();
    config.decodes = grid.decode_specs()?;
    run_experiment(&config)
}
