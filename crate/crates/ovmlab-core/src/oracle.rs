//! Ground-truth value computation by exhaustive expectation, plus the
//! independent recounting oracles used to audit trained models.
//!
//! `ValueOracle` computes the probability that continuing a prefix under a
//! policy ends in a correct answer: terminal paths contribute their verdict,
//! interior nodes the probability-weighted sum over the policy's full
//! support. With the exact scalar the result is an exact rational; with `f64`
//! it is accurate to accumulation error.

use crate::env::{KeyMode, PartialPath};
use crate::error::CoreError;
use crate::error::Result;
use crate::policy::{step_distribution, PolicySpec};
use crate::scalar::Prob;
use crate::value_models::TrainingSample;
use std::collections::{BTreeMap, HashMap, HashSet};

pub struct ValueOracle<'a, P: Prob> {
    policy: &'a PolicySpec,
    key_mode: KeyMode,
    memo: HashMap<String, P>,
}

impl<'a, P: Prob> ValueOracle<'a, P> {
    /// `key_mode` selects the memo granularity: per distinct prefix, or per
    /// abstract state (valid whenever the environment is Markovian in that
    /// state, which both built-in tasks are).
    pub fn new(policy: &'a PolicySpec, key_mode: KeyMode) -> Self {
        ValueOracle {
            policy,
            key_mode,
            memo: HashMap::new(),
        }
    }

    pub fn value(&mut self, path: &PartialPath) -> Result<P> {
        if path.is_terminal() {
            return Ok(if path.verdict()?.correct {
                P::one()
            } else {
                P::zero()
            });
        }
        let key = path.canonical_key(self.key_mode);
        if let Some(hit) = self.memo.get(&key) {
            return Ok(hit.clone());
        }
        let dist = step_distribution::<P>(self.policy, path)?;
        let mut total = P::zero();
        for (step, p) in dist.entries() {
            let child = path.force_step(step)?;
            total = total + p.clone() * self.value(&child)?;
        }
        self.memo.insert(key, total.clone());
        Ok(total)
    }
}

/// Probability of reaching a correct answer from `path` under `policy`,
/// memoized per distinct prefix.
pub fn exact_value<P: Prob>(policy: &PolicySpec, path: &PartialPath) -> Result<P> {
    ValueOracle::new(policy, KeyMode::FullPrefix).value(path)
}

/// Maximum over reachable prefixes of |V(x) - sum_s pi(s|x) V(x + s)|, with
/// the expectation re-accumulated in reverse support order. Zero under exact
/// rationals; bounded by accumulation error under `f64`.
pub fn bellman_residual<P: Prob>(
    policy: &PolicySpec,
    root: &PartialPath,
    key_mode: KeyMode,
) -> Result<P> {
    let mut oracle = ValueOracle::new(policy, key_mode);
    let mut visited: HashSet<String> = HashSet::new();
    let mut worst = P::zero();
    let mut stack = vec![root.clone()];
    while let Some(path) = stack.pop() {
        if path.is_terminal() {
            continue;
        }
        if !visited.insert(path.canonical_key(key_mode)) {
            continue;
        }
        let v = oracle.value(&path)?;
        let dist = step_distribution::<P>(policy, &path)?;
        let mut expectation = P::zero();
        for (step, p) in dist.entries().iter().rev() {
            let child = path.force_step(step)?;
            expectation = expectation + p.clone() * oracle.value(&child)?;
            stack.push(child);
        }
        let residual = v.abs_diff(&expectation);
        if residual > worst {
            worst = residual;
        }
    }
    Ok(worst)
}

/// Naive per-key recount of the outcome-label mean at `key`: scans every
/// prefix of every sample. Independent of the training accumulation path.
pub fn empirical_prefix_mean(
    samples: &[TrainingSample],
    key: &str,
    mode: KeyMode,
) -> Result<(u64, u64)> {
    let mut sum = 0u64;
    let mut count = 0u64;
    for sample in samples {
        for prefix in sample.path.prefixes() {
            if prefix.canonical_key(mode) == key {
                sum += sample.outcome as u64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(CoreError::PrefixNotFound(key.to_string()));
    }
    Ok((sum, count))
}

/// Sort-and-group recount of every prefix key. A second, structurally
/// different counting route for auditing trained tabular models wholesale.
pub fn recount_prefix_stats(
    samples: &[TrainingSample],
    mode: KeyMode,
) -> BTreeMap<String, (u64, u64)> {
    let mut pairs: Vec<(String, bool)> = Vec::new();
    for sample in samples {
        for prefix in sample.path.prefixes() {
            pairs.push((prefix.canonical_key(mode), sample.outcome));
        }
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut i = 0usize;
    while i < pairs.len() {
        let mut j = i;
        let mut sum = 0u64;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            sum += pairs[j].1 as u64;
            j += 1;
        }
        out.insert(pairs[i].0.clone(), (sum, (j - i) as u64));
        i = j;
    }
    out
}
