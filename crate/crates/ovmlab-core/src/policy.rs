//! Stochastic generator policies with explicit step distributions.
//!
//! Each policy exposes its full distribution over next steps, not just a
//! sampler, so expected values over continuations can be computed exactly.
//! Distributions are generic over the probability scalar: `f64` for speed,
//! `BigRational` for exact normalization and exact dynamic programming.
//!
//! `NoisyExpert` mixes an expert teacher (true-result combines that keep the
//! table solvable) with corrupted steps. Corruption targets the canonically
//! first legal combine and comes in two kinds, split by the corruption mix:
//! wrong claimed results (offsets +-1, +-2) and hallucinated operands that
//! were never on the table. On chain tasks the per-depth probabilities of the
//! instance drive the distribution directly.

use crate::env::{label_step, solvable, PartialPath, ReasoningStep, TaskSpec};
use crate::error::{CoreError, Result};
use crate::rng::unit_draw;
use crate::scalar::Prob;
use crate::GameValue;
use num_traits::{One, Zero};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    NoisyExpert,
    UniformLegal,
    SoftmaxTabular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Corruption probability for `NoisyExpert`, an exact rational in [0, 1].
    pub epsilon: GameValue,
    /// Split of the corruption mass: wrong claimed results vs unavailable
    /// operands. Non-negative, sums to 1.
    pub wrong_result_weight: GameValue,
    pub unavailable_weight: GameValue,
    /// Softmax temperature; only `SoftmaxTabular` uses it.
    pub temperature: f64,
    /// Label prefix for streams derived on behalf of this policy.
    pub seed_namespace: String,
}

impl PolicySpec {
    pub fn noisy_expert(
        epsilon: GameValue,
        wrong_result_weight: GameValue,
        unavailable_weight: GameValue,
    ) -> Result<Self> {
        let spec = PolicySpec {
            kind: PolicyKind::NoisyExpert,
            epsilon,
            wrong_result_weight,
            unavailable_weight,
            temperature: 1.0,
            seed_namespace: "policy".into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Noise-free expert.
    pub fn expert() -> Self {
        Self::noisy_expert(GameValue::zero(), GameValue::one(), GameValue::zero())
            .expect("static parameters are valid")
    }

    pub fn uniform_legal() -> Self {
        PolicySpec {
            kind: PolicyKind::UniformLegal,
            epsilon: GameValue::zero(),
            wrong_result_weight: GameValue::one(),
            unavailable_weight: GameValue::zero(),
            temperature: 1.0,
            seed_namespace: "policy".into(),
        }
    }

    pub fn softmax_tabular(temperature: f64) -> Result<Self> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "softmax temperature must be positive".into(),
            ));
        }
        Ok(PolicySpec {
            kind: PolicyKind::SoftmaxTabular,
            epsilon: GameValue::zero(),
            wrong_result_weight: GameValue::one(),
            unavailable_weight: GameValue::zero(),
            temperature,
            seed_namespace: "policy".into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (zero, one) = (GameValue::zero(), GameValue::one());
        if self.epsilon < zero || self.epsilon > one {
            return Err(CoreError::InvalidConfig(
                "epsilon must lie in [0, 1]".into(),
            ));
        }
        if self.wrong_result_weight < zero || self.unavailable_weight < zero {
            return Err(CoreError::InvalidConfig(
                "corruption weights must be non-negative".into(),
            ));
        }
        if self.wrong_result_weight + self.unavailable_weight != one {
            return Err(CoreError::InvalidConfig(
                "corruption weights must sum to 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Finite, duplicate-free distribution over candidate next steps.
#[derive(Debug, Clone)]
pub struct StepDistribution<P: Prob> {
    entries: Vec<(ReasoningStep, P)>,
}

impl<P: Prob> StepDistribution<P> {
    pub fn entries(&self) -> &[(ReasoningStep, P)] {
        &self.entries
    }

    pub fn total(&self) -> P {
        self.entries.iter().map(|(_, p)| p.clone()).sum()
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// Weighted draw; reproducible given the generator state.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> &ReasoningStep {
        let u = unit_draw(rng);
        let mut acc = 0.0_f64;
        for (step, p) in &self.entries {
            acc += p.to_f64();
            if u < acc {
                return step;
            }
        }
        &self.entries.last().expect("non-empty support").0
    }

    /// Highest-probability step; ties resolve to the earliest entry in
    /// canonical order.
    pub fn argmax(&self) -> &ReasoningStep {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        &best.0
    }
}

/// Exact distribution over the steps the generator may emit at `path`.
pub fn step_distribution<P: Prob>(
    policy: &PolicySpec,
    path: &PartialPath,
) -> Result<StepDistribution<P>> {
    if path.is_terminal() {
        return Err(CoreError::CompletePath);
    }
    match path.instance().spec() {
        TaskSpec::Chain {
            wrong_branches,
            good_prob,
            ..
        } => chain_distribution(policy, path, *wrong_branches, good_prob),
        TaskSpec::Game24 { .. } => game24_distribution(policy, path),
    }
}

fn chain_distribution<P: Prob>(
    policy: &PolicySpec,
    path: &PartialPath,
    wrong_branches: usize,
    good_prob: &[GameValue],
) -> Result<StepDistribution<P>> {
    let moves = path.legal_steps()?;
    let w = wrong_branches as i64;
    let entries = match policy.kind {
        PolicyKind::NoisyExpert => {
            let p_good = good_prob[path.len()];
            let p_wrong = (GameValue::one() - p_good) / GameValue::from_integer(w);
            moves
                .into_iter()
                .enumerate()
                .map(|(i, step)| {
                    let p = if i == 0 { p_good } else { p_wrong };
                    (step, P::from_ratio(p))
                })
                .filter(|(_, p)| !p.is_zero())
                .collect()
        }
        PolicyKind::UniformLegal => {
            let share = GameValue::new(1, w + 1);
            moves
                .into_iter()
                .map(|step| (step, P::from_ratio(share)))
                .collect()
        }
        PolicyKind::SoftmaxTabular => {
            let scores: Vec<f64> = (0..=wrong_branches)
                .map(|i| if i == 0 { 1.0 } else { 0.0 })
                .collect();
            softmax_entries(moves, &scores, policy.temperature)
        }
    };
    Ok(StepDistribution { entries })
}

fn game24_distribution<P: Prob>(
    policy: &PolicySpec,
    path: &PartialPath,
) -> Result<StepDistribution<P>> {
    let legal = path.legal_steps()?;

    // Forced answer: composing the final expression is deterministic, so the
    // full mass sits on the single answer step for every policy kind.
    if matches!(legal.as_slice(), [ReasoningStep::Answer { .. }]) {
        let entries = vec![(legal[0].clone(), P::one())];
        return Ok(StepDistribution { entries });
    }

    match policy.kind {
        PolicyKind::UniformLegal => {
            let share = GameValue::new(1, legal.len() as i64);
            Ok(StepDistribution {
                entries: legal
                    .into_iter()
                    .map(|step| (step, P::from_ratio(share)))
                    .collect(),
            })
        }
        PolicyKind::SoftmaxTabular => {
            let scores: Vec<f64> = legal
                .iter()
                .map(|step| {
                    if preserves_solvability(path, step) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(StepDistribution {
                entries: softmax_entries(legal, &scores, policy.temperature),
            })
        }
        PolicyKind::NoisyExpert => noisy_expert_entries(policy, path, legal),
    }
}

fn preserves_solvability(path: &PartialPath, step: &ReasoningStep) -> bool {
    match path.apply_step(step) {
        Ok(next) => solvable(&next.claimed_values()),
        Err(_) => false,
    }
}

fn noisy_expert_entries<P: Prob>(
    policy: &PolicySpec,
    path: &PartialPath,
    legal: Vec<ReasoningStep>,
) -> Result<StepDistribution<P>> {
    let experts: Vec<ReasoningStep> = {
        let preserving: Vec<ReasoningStep> = legal
            .iter()
            .filter(|s| preserves_solvability(path, s))
            .cloned()
            .collect();
        if preserving.is_empty() {
            legal.clone()
        } else {
            preserving
        }
    };

    let mut entries: Vec<(ReasoningStep, P)> = Vec::new();
    let expert_mass = GameValue::one() - policy.epsilon;
    if !expert_mass.is_zero() {
        let share = expert_mass / GameValue::from_integer(experts.len() as i64);
        entries.extend(experts.into_iter().map(|step| (step, P::from_ratio(share))));
    }

    if !policy.epsilon.is_zero() {
        let (wrong, unavailable) = corrupted_variants(path, &legal[0]);
        let wrong_mass = policy.epsilon * policy.wrong_result_weight;
        if !wrong_mass.is_zero() && !wrong.is_empty() {
            let share = wrong_mass / GameValue::from_integer(wrong.len() as i64);
            entries.extend(wrong.into_iter().map(|s| (s, P::from_ratio(share))));
        }
        let unavailable_mass = policy.epsilon * policy.unavailable_weight;
        if !unavailable_mass.is_zero() && !unavailable.is_empty() {
            let share = unavailable_mass / GameValue::from_integer(unavailable.len() as i64);
            entries.extend(unavailable.into_iter().map(|s| (s, P::from_ratio(share))));
        }
    }

    // Degenerate mixes (for example epsilon = 1 with an empty corruption
    // class) renormalize over whatever support remains.
    let total = entries.iter().map(|(_, p)| p.clone()).sum::<P>();
    if total.is_zero() {
        return Err(CoreError::InvalidConfig(
            "policy assigns zero mass to every candidate step".into(),
        ));
    }
    if total != P::one() {
        for (_, p) in entries.iter_mut() {
            *p = p.clone() / total.clone();
        }
    }
    Ok(StepDistribution { entries })
}

/// Corrupted variants of the canonically first legal combine: four wrong
/// claimed results and up to two hallucinated left operands.
fn corrupted_variants(
    path: &PartialPath,
    first_legal: &ReasoningStep,
) -> (Vec<ReasoningStep>, Vec<ReasoningStep>) {
    let (lhs, rhs, op, claimed) = match first_legal {
        ReasoningStep::Combine {
            lhs,
            rhs,
            op,
            claimed,
        } => (*lhs, *rhs, *op, *claimed),
        _ => return (Vec::new(), Vec::new()),
    };

    let offsets = [1i64, -1, 2, -2];
    let wrong: Vec<ReasoningStep> = offsets
        .iter()
        .map(|&d| ReasoningStep::Combine {
            lhs,
            rhs,
            op,
            claimed: claimed + GameValue::from_integer(d),
        })
        .collect();

    let table = path.claimed_values();
    let mut unavailable = Vec::new();
    let mut bump = 1i64;
    while unavailable.len() < 2 && bump <= 16 {
        let ghost = lhs + GameValue::from_integer(bump);
        bump += 1;
        if table.contains(&ghost) {
            continue;
        }
        if let Some(true_result) = op.apply(ghost, rhs) {
            unavailable.push(ReasoningStep::Combine {
                lhs: ghost,
                rhs,
                op,
                claimed: true_result,
            });
        }
    }
    (wrong, unavailable)
}

fn softmax_entries<P: Prob>(
    steps: Vec<ReasoningStep>,
    scores: &[f64],
    temperature: f64,
) -> Vec<(ReasoningStep, P)> {
    let weights: Vec<P> = scores
        .iter()
        .map(|s| P::from_f64_weight((s / temperature).exp()))
        .collect();
    let total: P = weights.iter().cloned().sum();
    steps
        .into_iter()
        .zip(weights)
        .map(|(step, w)| (step, w / total.clone()))
        .collect()
}

/// Draw one step. The draw itself always walks the `f64` rendering of the
/// distribution so sampling is identical regardless of the scalar used for
/// analysis.
pub fn sample_step(
    policy: &PolicySpec,
    path: &PartialPath,
    rng: &mut ChaCha8Rng,
) -> Result<ReasoningStep> {
    let dist = step_distribution::<f64>(policy, path)?;
    Ok(dist.sample(rng).clone())
}

/// Most likely step, ties broken by canonical enumeration order.
pub fn greedy_step(policy: &PolicySpec, path: &PartialPath) -> Result<ReasoningStep> {
    let dist = step_distribution::<f64>(policy, path)?;
    Ok(dist.argmax().clone())
}

/// Sample steps until the path is terminal or `max_steps` is reached; a path
/// cut off without an answer is marked truncated (unanswered, incorrect).
pub fn rollout(
    policy: &PolicySpec,
    start: &PartialPath,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> PartialPath {
    let mut path = start.clone();
    loop {
        if path.is_terminal() {
            return path;
        }
        if path.len() >= max_steps {
            return path.mark_truncated();
        }
        let step = sample_step(policy, &path, rng).expect("non-terminal path");
        path = path.force_step(&step).expect("non-terminal path");
    }
}

/// Deterministic rollout following `greedy_step`.
pub fn greedy_rollout(policy: &PolicySpec, start: &PartialPath, max_steps: usize) -> PartialPath {
    let mut path = start.clone();
    loop {
        if path.is_terminal() {
            return path;
        }
        if path.len() >= max_steps {
            return path.mark_truncated();
        }
        let step = greedy_step(policy, &path).expect("non-terminal path");
        path = path.force_step(&step).expect("non-terminal path");
    }
}

/// Fraction of distribution mass on steps labeled helpful (`prm_o`); a
/// diagnostic used by tests and calibration.
pub fn helpful_mass(policy: &PolicySpec, path: &PartialPath) -> Result<f64> {
    let dist = step_distribution::<f64>(policy, path)?;
    Ok(dist
        .entries()
        .iter()
        .filter(|(s, _)| label_step(path, s).prm_o)
        .map(|(_, p)| p)
        .sum())
}
