//! Property tests for environment, policy, model and search invariants.

use num_traits::{One, Zero};
use ovmlab_core::env::{label_path, Expr, KeyMode, PartialPath, ReasoningStep, TaskInstance};
use ovmlab_core::policy::{rollout, sample_step, step_distribution, PolicySpec};
use ovmlab_core::rng::RngStream;
use ovmlab_core::search::{value_guided_beam_search, BeamConfig, OracleScorer};
use ovmlab_core::value_models::dataset::{parse_dataset, render_dataset};
use ovmlab_core::value_models::{build_training_set, expand_outcome_labels, TabularTable};
use ovmlab_core::{ExactProb, GameValue};
use proptest::prelude::*;
use std::sync::Arc;

fn puzzle_strategy() -> impl Strategy<Value = [i64; 4]> {
    prop::array::uniform4(1i64..=13)
}

fn policy_strategy() -> impl Strategy<Value = PolicySpec> {
    (0i64..=10, 0i64..=5, prop::bool::ANY).prop_map(|(eps_num, wrong_num, uniform)| {
        if uniform {
            PolicySpec::uniform_legal()
        } else {
            let wrong = GameValue::new(wrong_num, 5);
            PolicySpec::noisy_expert(GameValue::new(eps_num, 10), wrong, GameValue::one() - wrong)
                .expect("weights sum to 1")
        }
    })
}

fn instance_of(puzzle: [i64; 4]) -> Arc<TaskInstance> {
    TaskInstance::game24_ints("prop", puzzle).expect("values >= 1")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Distributions over every prefix visited by a random rollout sum to
    /// exactly one in rational arithmetic.
    #[test]
    fn distributions_normalize_exactly(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let mut path = PartialPath::empty(instance);
        let mut rng = RngStream::new(seed, "prop/norm").rng();
        while !path.is_terminal() {
            let dist = step_distribution::<ExactProb>(&policy, &path).unwrap();
            prop_assert_eq!(dist.total(), ExactProb::one());
            let approx = step_distribution::<f64>(&policy, &path).unwrap();
            prop_assert!((approx.total() - 1.0).abs() < 1e-12);
            let step = sample_step(&policy, &path, &mut rng).unwrap();
            path = path.force_step(&step).unwrap();
        }
    }

    /// Derived state is a pure function of instance and steps: replaying the
    /// recorded steps reproduces the path exactly.
    #[test]
    fn rollout_paths_rederive_exactly(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let mut rng = RngStream::new(seed, "prop/rederive").rng();
        let path = rollout(&policy, &root, 10, &mut rng);
        prop_assert_eq!(path.clone(), path.rederive());
    }

    /// Step labels couple: a helpful step is always logically valid, and an
    /// all-helpful path ending in a true answer verifies correct.
    #[test]
    fn labels_couple_on_rollouts(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let mut rng = RngStream::new(seed, "prop/labels").rng();
        let path = rollout(&policy, &root, 10, &mut rng);
        let labels = label_path(&path);
        prop_assert_eq!(labels.len(), path.len());
        for l in &labels {
            prop_assert!(l.prm || !l.prm_o);
        }
        let verdict = path.verdict().unwrap();
        if labels.iter().all(|l| l.prm_o) && verdict.answered {
            prop_assert!(verdict.correct);
        }
    }

    /// Full-prefix keys are injective over step sequences: distinct rollouts
    /// share a key iff they carry identical steps.
    #[test]
    fn prefix_keys_are_injective(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let a = rollout(&policy, &root, 10, &mut RngStream::new(seed, "prop/a").rng());
        let b = rollout(&policy, &root, 10, &mut RngStream::new(seed, "prop/b").rng());
        let same_steps = a.steps() == b.steps();
        let same_keys =
            a.canonical_key(KeyMode::FullPrefix) == b.canonical_key(KeyMode::FullPrefix);
        prop_assert_eq!(same_steps, same_keys);
    }

    /// Monotone data refinement: a label-1 sample never lowers the tabular
    /// value of its own prefixes; a label-0 sample never raises it.
    #[test]
    fn tabular_refinement_is_monotone(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seeds in prop::collection::vec(0u64..1000, 2..8),
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let mut table = TabularTable::default();
        for seed in seeds {
            let mut rng = RngStream::new(seed, "prop/mono").rng();
            let path = rollout(&policy, &root, 10, &mut rng);
            let outcome = path.verdict().unwrap().correct;
            let sample = ovmlab_core::value_models::TrainingSample {
                path,
                outcome,
                step_labels: None,
            };
            let pairs = expand_outcome_labels(&sample, KeyMode::FullPrefix);
            let before: Vec<Option<f64>> =
                pairs.iter().map(|(k, _)| table.value(k)).collect();
            for (k, y) in &pairs {
                table.add(k.clone(), *y);
            }
            for ((key, label), old) in pairs.iter().zip(before) {
                let new = table.value(key).unwrap();
                if let Some(old) = old {
                    if *label {
                        prop_assert!(new >= old - 1e-15);
                    } else {
                        prop_assert!(new <= old + 1e-15);
                    }
                }
            }
        }
    }

    /// Expression serialization round-trips.
    #[test]
    fn expressions_round_trip(
        puzzle in puzzle_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let mut rng = RngStream::new(seed, "prop/expr").rng();
        let path = rollout(&PolicySpec::uniform_legal(), &root, 10, &mut rng);
        if let Some(ReasoningStep::Answer { expr }) = path.steps().last() {
            let text = expr.to_string();
            prop_assert_eq!(&Expr::parse(&text).unwrap(), expr);
        }
    }

    /// Dataset files round-trip samples exactly.
    #[test]
    fn datasets_round_trip(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
    ) {
        let instance = instance_of(puzzle);
        let samples = build_training_set(
            &[instance],
            &policy,
            8,
            10,
            true,
            &RngStream::new(seed, "prop/ds"),
        )
        .unwrap();
        let text = render_dataset(&samples, serde_json::json!({}));
        let parsed = parse_dataset(&text).unwrap();
        prop_assert_eq!(samples.len(), parsed.len());
        for (a, b) in samples.iter().zip(&parsed) {
            prop_assert_eq!(a.outcome, b.outcome);
            prop_assert_eq!(&a.step_labels, &b.step_labels);
            prop_assert_eq!(a.path.steps(), b.path.steps());
        }
    }

    /// Beam search never exceeds its sampling budget, keeps pools within K,
    /// and selects values that match a naive top-b sort when deduplication
    /// is off.
    #[test]
    fn beam_budget_and_selection_invariants(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1000,
        k_index in 0usize..4,
        dedup in prop::bool::ANY,
    ) {
        let ks = [2usize, 4, 6, 12];
        let k = ks[k_index];
        let b = [1usize, 2, 2, 4][k_index];
        let instance = instance_of(puzzle);
        let scorer = OracleScorer::new(&policy);
        let config = BeamConfig { k, b, max_steps: 10, dedup_priority: dedup };
        let result = value_guided_beam_search(
            &instance,
            &policy,
            &scorer,
            &config,
            &RngStream::new(seed, "prop/beam"),
        )
        .unwrap();
        prop_assert!(result.sampled_steps <= k * 10);
        prop_assert!(result.final_pool.len() <= k);
        let chosen_key = result.chosen.canonical_key(KeyMode::FullPrefix);
        prop_assert!(result
            .final_pool
            .iter()
            .any(|(p, _)| p.canonical_key(KeyMode::FullPrefix) == chosen_key));
        for snap in &result.stages {
            prop_assert!(snap.candidates.len() <= k);
            let selected: Vec<f64> = snap
                .candidates
                .iter()
                .filter(|c| c.selected)
                .map(|c| c.value)
                .collect();
            prop_assert!(selected.len() <= b);
            for w in selected.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            if !dedup {
                let mut values: Vec<f64> =
                    snap.candidates.iter().map(|c| c.value).collect();
                values.sort_by(|x, y| y.partial_cmp(x).unwrap());
                let top: Vec<f64> = values.into_iter().take(selected.len()).collect();
                prop_assert_eq!(selected, top);
            }
        }
    }

    /// The exact oracle returns probabilities, and pure-expert values are 1
    /// exactly on solvable instances.
    #[test]
    fn oracle_values_are_probabilities(
        puzzle in puzzle_strategy(),
        policy in policy_strategy(),
    ) {
        let instance = instance_of(puzzle);
        let root = PartialPath::empty(instance);
        let v = ovmlab_core::oracle::exact_value::<ExactProb>(&policy, &root).unwrap();
        prop_assert!(v >= ExactProb::zero());
        prop_assert!(v <= ExactProb::one());
    }
}
