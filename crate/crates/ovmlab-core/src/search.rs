//! Value-guided beam search and the decoding baselines it is compared
//! against: greedy decoding, vanilla multi-sampling, self-consistency voting,
//! and best-of-K reranking.
//!
//! The beam keeps `b` of `K` sampled candidates per stage, ranked by a prefix
//! scorer. Every stage-0 candidate owns a derived random stream and its
//! first continuation inherits that stream, so with `b = K` (no pruning) the
//! search degenerates to exactly the paths `vanilla_sample` produces from the
//! same base stream, draw for draw. Completed candidates freeze: they re-enter
//! each stage's pool carrying their verification score, unexpanded.

use crate::env::{AnswerVerdict, KeyMode, PartialPath, TaskInstance};
use crate::error::{CoreError, Result};
use crate::oracle::ValueOracle;
use crate::policy::{greedy_rollout, rollout, sample_step, PolicySpec};
use crate::rng::RngStream;
use crate::value_models::{OutcomeValueModel, ProcessRewardModel};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::sync::Arc;

/// Anything that can score partial paths for guidance and complete paths for
/// final selection.
pub trait PrefixScorer {
    fn score_prefix(&self, path: &PartialPath) -> f64;

    /// Verification score of a terminal path. Defaults to the prefix score.
    fn score_complete(&self, path: &PartialPath) -> Result<f64> {
        if !path.is_terminal() {
            return Err(CoreError::IncompletePath);
        }
        Ok(self.score_prefix(path))
    }

    /// Short name for traces and reports.
    fn label(&self) -> String;
}

impl PrefixScorer for OutcomeValueModel {
    fn score_prefix(&self, path: &PartialPath) -> f64 {
        OutcomeValueModel::score_prefix(self, path)
    }

    fn score_complete(&self, path: &PartialPath) -> Result<f64> {
        OutcomeValueModel::score_complete(self, path)
    }

    fn label(&self) -> String {
        "ovm".into()
    }
}

impl PrefixScorer for ProcessRewardModel {
    fn score_prefix(&self, path: &PartialPath) -> f64 {
        ProcessRewardModel::score_prefix(self, path)
    }

    fn score_complete(&self, path: &PartialPath) -> Result<f64> {
        ProcessRewardModel::score_complete(self, path)
    }

    fn label(&self) -> String {
        match self.variant {
            crate::value_models::PrmVariant::Prm => "prm".into(),
            crate::value_models::PrmVariant::PrmO => "prm-o".into(),
        }
    }
}

/// Perfect scorer backed by the exact value oracle; useful as an upper
/// baseline and in tests.
pub struct OracleScorer<'a> {
    inner: RefCell<ValueOracle<'a, f64>>,
}

impl<'a> OracleScorer<'a> {
    pub fn new(policy: &'a PolicySpec) -> Self {
        OracleScorer {
            inner: RefCell::new(ValueOracle::new(policy, KeyMode::AbstractState)),
        }
    }
}

impl PrefixScorer for OracleScorer<'_> {
    fn score_prefix(&self, path: &PartialPath) -> f64 {
        self.inner
            .borrow_mut()
            .value(path)
            .expect("oracle evaluates reachable paths")
    }

    fn label(&self) -> String {
        "oracle".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    /// Candidates sampled per stage.
    pub k: usize,
    /// Beam width; must divide `k`.
    pub b: usize,
    /// Step budget per path.
    pub max_steps: usize,
    /// Prefer distinct step sequences over duplicates when selecting.
    pub dedup_priority: bool,
}

impl BeamConfig {
    pub fn new(k: usize, b: usize, max_steps: usize) -> Result<Self> {
        let config = BeamConfig {
            k,
            b,
            max_steps,
            dedup_priority: true,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.b == 0 || self.max_steps == 0 {
            return Err(CoreError::InvalidConfig(
                "k, b and max_steps must be positive".into(),
            ));
        }
        if self.b > self.k || !self.k.is_multiple_of(self.b) {
            return Err(CoreError::InvalidConfig(format!(
                "beam size {} must divide sampling size {}",
                self.b, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CandidateView {
    pub summary: String,
    pub value: f64,
    pub selected: bool,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct StageSnapshot {
    pub stage: usize,
    /// All scored candidates of the stage, listed by value (descending) with
    /// selection flags.
    pub candidates: Vec<CandidateView>,
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub chosen: PartialPath,
    pub verdict: AnswerVerdict,
    /// The final stage's candidate pool (at most `k` entries) with the values
    /// they were ranked by.
    pub final_pool: Vec<(PartialPath, f64)>,
    pub stages: Vec<StageSnapshot>,
    /// Total generator samples drawn; at most `k * max_steps`.
    pub sampled_steps: usize,
}

struct Candidate {
    path: PartialPath,
    value: f64,
    lineage: Vec<u32>,
    stream: RngStream,
    rng: ChaCha8Rng,
}

fn score_candidate(scorer: &dyn PrefixScorer, path: &PartialPath) -> f64 {
    if path.is_terminal() {
        scorer
            .score_complete(path)
            .expect("terminal paths are scorable")
    } else {
        scorer.score_prefix(path)
    }
}

/// Indices selected for the beam: up to `b`, ranked by (value desc, lineage
/// asc). With `dedup_priority`, candidates with novel step sequences outrank
/// duplicates; remaining slots fill with the best duplicates.
fn select_indices(
    values: &[f64],
    lineages: &[&[u32]],
    keys: &[String],
    b: usize,
    dedup_priority: bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| lineages[i].cmp(lineages[j]))
    });
    let mut selected = Vec::with_capacity(b);
    if dedup_priority {
        let mut seen: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for &i in &order {
            if selected.len() == b {
                break;
            }
            if seen.insert(keys[i].as_str()) {
                selected.push(i);
            }
        }
    }
    for &i in &order {
        if selected.len() == b {
            break;
        }
        if !selected.contains(&i) {
            selected.push(i);
        }
    }
    selected
}

/// Beam search guided by `scorer`, per the staged sample-score-select loop.
pub fn value_guided_beam_search(
    instance: &Arc<TaskInstance>,
    policy: &PolicySpec,
    scorer: &dyn PrefixScorer,
    config: &BeamConfig,
    stream: &RngStream,
) -> Result<DecodeResult> {
    config.validate()?;
    let root = PartialPath::empty(instance.clone());
    let mut sampled_steps = 0usize;
    let mut stages = Vec::new();

    // Stage 0: K independent first steps, each on its own derived stream.
    let mut pool: Vec<Candidate> = Vec::with_capacity(config.k);
    for k_idx in 0..config.k {
        let stream = stream.derive(&format!("cand{k_idx}"));
        let mut rng = stream.rng();
        let step = sample_step(policy, &root, &mut rng)?;
        sampled_steps += 1;
        let path = root.force_step(&step)?;
        let value = score_candidate(scorer, &path);
        pool.push(Candidate {
            path,
            value,
            lineage: vec![k_idx as u32],
            stream,
            rng,
        });
    }
    let mut beam = select_stage(&mut stages, &pool, config);

    let mut t = 1usize;
    while beam.iter().any(|&i| !pool[i].path.is_terminal()) && t < config.max_steps {
        let per_beam = config.k / config.b;
        let mut next: Vec<Candidate> = Vec::with_capacity(config.k);
        for &i in &beam {
            let cand = &pool[i];
            if cand.path.is_terminal() {
                // Frozen: re-enters the pool unexpanded with its own value.
                next.push(Candidate {
                    path: cand.path.clone(),
                    value: cand.value,
                    lineage: cand.lineage.clone(),
                    stream: cand.stream.clone(),
                    rng: cand.rng.clone(),
                });
                continue;
            }
            for child_idx in 0..per_beam {
                let (child_stream, mut child_rng) = if child_idx == 0 {
                    (cand.stream.clone(), cand.rng.clone())
                } else {
                    let s = cand.stream.derive(&format!("s{t}c{child_idx}"));
                    let r = s.rng();
                    (s, r)
                };
                let step = sample_step(policy, &cand.path, &mut child_rng)?;
                sampled_steps += 1;
                let path = cand.path.force_step(&step)?;
                let value = score_candidate(scorer, &path);
                let mut lineage = cand.lineage.clone();
                lineage.push(child_idx as u32);
                next.push(Candidate {
                    path,
                    value,
                    lineage,
                    stream: child_stream,
                    rng: child_rng,
                });
            }
        }
        pool = next;
        beam = select_stage(&mut stages, &pool, config);
        t += 1;
    }

    // Final choice: best completed pool member; if nothing completed in the
    // step budget, the best-valued path, truncated and unanswered.
    let mut chosen_idx: Option<usize> = None;
    for (i, cand) in pool.iter().enumerate() {
        if !cand.path.is_terminal() {
            continue;
        }
        let better = match chosen_idx {
            None => true,
            Some(j) => {
                cand.value > pool[j].value
                    || (cand.value == pool[j].value && cand.lineage < pool[j].lineage)
            }
        };
        if better {
            chosen_idx = Some(i);
        }
    }
    let chosen = match chosen_idx {
        Some(i) => pool[i].path.clone(),
        None => {
            let mut best = 0usize;
            for (i, cand) in pool.iter().enumerate() {
                if cand.value > pool[best].value {
                    best = i;
                }
            }
            pool[best].path.clone().mark_truncated()
        }
    };
    let verdict = chosen.verdict()?;
    let final_pool = pool
        .iter()
        .map(|c| {
            let p = if c.path.is_terminal() {
                c.path.clone()
            } else {
                c.path.clone().mark_truncated()
            };
            (p, c.value)
        })
        .collect();
    Ok(DecodeResult {
        chosen,
        verdict,
        final_pool,
        stages,
        sampled_steps,
    })
}

fn select_stage(
    stages: &mut Vec<StageSnapshot>,
    pool: &[Candidate],
    config: &BeamConfig,
) -> Vec<usize> {
    let values: Vec<f64> = pool.iter().map(|c| c.value).collect();
    let lineages: Vec<&[u32]> = pool.iter().map(|c| c.lineage.as_slice()).collect();
    let keys: Vec<String> = pool
        .iter()
        .map(|c| c.path.canonical_key(KeyMode::FullPrefix))
        .collect();
    let mut selected = select_indices(&values, &lineages, &keys, config.b, config.dedup_priority);

    // Snapshot in value order for reporting.
    let mut view_order: Vec<usize> = (0..pool.len()).collect();
    view_order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| lineages[i].cmp(lineages[j]))
    });
    let candidates = view_order
        .iter()
        .map(|&i| CandidateView {
            summary: pool[i].path.display_line(),
            value: pool[i].value,
            selected: selected.contains(&i),
            complete: pool[i].path.is_terminal(),
        })
        .collect();
    stages.push(StageSnapshot {
        stage: stages.len(),
        candidates,
    });

    // Expansion proceeds in lineage order so stream consumption is stable.
    selected.sort_by(|&i, &j| pool[i].lineage.cmp(&pool[j].lineage));
    selected
}

/// Deterministic greedy rollout; the pool is the single decoded path.
pub fn greedy_decode(
    instance: &Arc<TaskInstance>,
    policy: &PolicySpec,
    max_steps: usize,
) -> Result<DecodeResult> {
    let root = PartialPath::empty(instance.clone());
    let path = greedy_rollout(policy, &root, max_steps);
    let verdict = path.verdict()?;
    let sampled_steps = path.len();
    Ok(DecodeResult {
        chosen: path.clone(),
        verdict,
        final_pool: vec![(path, if verdict.correct { 1.0 } else { 0.0 })],
        stages: Vec::new(),
        sampled_steps,
    })
}

/// K independent rollouts on derived streams `cand0..candK-1`.
pub fn vanilla_sample(
    instance: &Arc<TaskInstance>,
    policy: &PolicySpec,
    k: usize,
    max_steps: usize,
    stream: &RngStream,
) -> Result<Vec<PartialPath>> {
    if k == 0 {
        return Err(CoreError::InvalidConfig("k must be at least 1".into()));
    }
    let root = PartialPath::empty(instance.clone());
    Ok((0..k)
        .map(|i| {
            let sub = stream.derive(&format!("cand{i}"));
            rollout(policy, &root, max_steps, &mut sub.rng())
        })
        .collect())
}

/// Canonical answer class of a terminal path, or `None` if unanswered.
/// Game-of-24 answers group by (expression value, input multiset); chain
/// paths group by terminal correctness.
pub fn answer_signature(path: &PartialPath) -> Option<String> {
    let verdict = path.verdict().ok()?;
    if !verdict.answered {
        return None;
    }
    match path.steps().last() {
        Some(crate::env::ReasoningStep::Answer { expr }) => {
            let value = expr
                .eval()
                .map(|v| crate::env::rat_to_string(&v))
                .unwrap_or_else(|| "?".into());
            let leaves: Vec<String> = expr
                .leaves()
                .iter()
                .map(crate::env::rat_to_string)
                .collect();
            Some(format!("v={value}|in={}", leaves.join(",")))
        }
        _ => Some(if verdict.correct {
            "chain:correct".into()
        } else {
            "chain:wrong".into()
        }),
    }
}

/// Majority vote over answered paths. Returns the winning answer class and
/// the index of its earliest path; ties break toward the earlier first
/// occurrence.
pub fn self_consistency(paths: &[PartialPath]) -> Result<(String, usize)> {
    let mut classes: Vec<(String, usize, usize)> = Vec::new(); // (sig, count, first)
    for (i, path) in paths.iter().enumerate() {
        let Some(sig) = answer_signature(path) else {
            continue;
        };
        match classes.iter_mut().find(|(s, _, _)| *s == sig) {
            Some(entry) => entry.1 += 1,
            None => classes.push((sig, 1, i)),
        }
    }
    classes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(sig, _, first)| (sig, first))
        .ok_or(CoreError::NoAnsweredPaths)
}

/// Index of the path with the highest verification score; ties break to the
/// earliest path.
pub fn rerank_best_of_k(paths: &[PartialPath], scorer: &dyn PrefixScorer) -> Result<usize> {
    if paths.is_empty() {
        return Err(CoreError::InvalidConfig(
            "rerank requires at least one path".into(),
        ));
    }
    let mut best = 0usize;
    let mut best_score = scorer.score_complete(&paths[0])?;
    for (i, path) in paths.iter().enumerate().skip(1) {
        let score = scorer.score_complete(path)?;
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
