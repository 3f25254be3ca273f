//! Acceptance suite. One test per criterion; each prints a PASS line on
//! success (run with `--nocapture` to see them alongside the harness output).
//!
//! Criteria:
//!  1. tabular outcome values equal an independent recount exactly
//!  2. tabular values converge to exact chain values within 3-sigma bands
//!  3. exhaustive solver matches a brute force on every 4-multiset of 1..6
//!  4. OVM-guided beam search beats vanilla sampling on Game of 24
//!  5. outcome/PRM-O guidance beats PRM guidance under low label consistency
//!  6. beam search with b = K reproduces vanilla sampling + reranking
//!  7. vanilla-sampling proportion is invariant in K
//!  8. annotation-cost identities hold on a 900 x 100 run
//!  9. analytic gradients match central finite differences
//! 10. experiment reruns are byte-identical up to timing columns

use ovmlab_core::env::{
    solvable, solve_exhaustive, KeyMode, PartialPath, ReasoningStep, TaskInstance,
};
use ovmlab_core::experiments::report::{csv_without_timings, render_csv};
use ovmlab_core::experiments::{
    run_experiment, DecodeSpec, EnvConfig, ExperimentConfig, MetricsRow, ScorerKind, TrainingConfig,
};
use ovmlab_core::oracle::{empirical_prefix_mean, recount_prefix_stats, ValueOracle};
use ovmlab_core::policy::PolicySpec;
use ovmlab_core::rng::RngStream;
use ovmlab_core::search::{
    rerank_best_of_k, value_guided_beam_search, vanilla_sample, BeamConfig, OracleScorer,
};
use ovmlab_core::value_models::{
    build_training_set, BackendConfig, HashedLinear, OutcomeValueModel, TrainHyper,
};
use ovmlab_core::GameValue;
use rand_chacha::rand_core::RngCore;
use std::sync::Arc;

fn rq1_policy() -> PolicySpec {
    PolicySpec::noisy_expert(
        GameValue::new(7, 10),
        GameValue::new(4, 5),
        GameValue::new(1, 5),
    )
    .expect("valid policy")
}

fn desk_training(paths_per_question: usize, key_mode: KeyMode) -> TrainingConfig {
    TrainingConfig {
        paths_per_question,
        backend: BackendConfig::Tabular,
        key_mode,
        fallback: 0.0,
        hyper: TrainHyper::default(),
    }
}

fn desk_env() -> EnvConfig {
    EnvConfig::Game24 {
        train_questions: 50,
        eval_questions: 30,
        min_value: 1,
        max_value: 13,
        puzzle_file: None,
    }
}

fn row<'a>(
    rows: &'a [MetricsRow],
    method: &str,
    k: Option<usize>,
    b: Option<usize>,
) -> &'a MetricsRow {
    rows.iter()
        .find(|r| r.method == method && r.k == k && r.b == b)
        .unwrap_or_else(|| panic!("missing row {method} K={k:?} b={b:?}"))
}

// -----------------------------------------------------------------------------
// 1. Fixed point of outcome training
// -----------------------------------------------------------------------------

#[test]
fn criterion_1_tabular_fixed_point_is_exact() {
    let stream = RngStream::new(0, "exp");
    let (train, _) =
        ovmlab_core::experiments::make_instances(&desk_env(), &stream.derive("instances"))
            .expect("instances");
    let samples = build_training_set(
        &train,
        &rq1_policy(),
        200,
        10,
        false,
        &stream.derive("train"),
    )
    .expect("training set");
    assert!(samples.len() >= 10_000, "need at least 10k samples");

    let mut model = OutcomeValueModel::new(BackendConfig::Tabular, KeyMode::FullPrefix, 0.5);
    model
        .train(&samples, &TrainHyper::default())
        .expect("train");

    let recount = recount_prefix_stats(&samples, KeyMode::FullPrefix);
    let table = model.tabular().expect("tabular backend");
    assert_eq!(table.len(), recount.len(), "key sets differ");
    for (key, (sum, count)) in &recount {
        let (ms, mc) = model.exact_ratio(key).expect("key present");
        // Rational equality by cross-multiplication, then the stronger
        // accumulator identity.
        assert_eq!(ms * count, sum * mc, "ratio mismatch at {key}");
        assert_eq!((ms, mc), (*sum, *count), "accumulator mismatch at {key}");
    }

    // Spot-check a sample of keys against the naive per-key scan.
    for (i, (key, (sum, count))) in recount.iter().enumerate() {
        if i % 199 != 0 {
            continue;
        }
        let (s, c) = empirical_prefix_mean(&samples, key, KeyMode::FullPrefix).expect("found");
        assert_eq!((s, c), (*sum, *count));
    }
    println!(
        "ACCEPTANCE 1 (fixed point, {} samples, {} keys): PASS",
        samples.len(),
        recount.len()
    );
}

// -----------------------------------------------------------------------------
// 2. Convergence to exact values on the chain task
// -----------------------------------------------------------------------------

#[test]
fn criterion_2_chain_values_converge_to_the_oracle() {
    let instance = TaskInstance::chain("conv", 3, 2, vec![GameValue::new(4, 5); 3]).unwrap();
    let policy = PolicySpec::expert();
    let samples = build_training_set(
        std::slice::from_ref(&instance),
        &policy,
        20_000,
        10,
        false,
        &RngStream::new(0, "exp/train"),
    )
    .expect("training set");
    let mut model = OutcomeValueModel::new(BackendConfig::Tabular, KeyMode::FullPrefix, 0.5);
    model
        .train(&samples, &TrainHyper::default())
        .expect("train");

    // Alive depth-1 prefix against the closed form 0.64.
    let alive1 = PartialPath::empty(instance.clone())
        .apply_step(&ReasoningStep::ChainMove { token_index: 0 })
        .unwrap();
    let key = alive1.canonical_key(KeyMode::FullPrefix);
    let (sum, count) = model.exact_ratio(&key).expect("depth-1 prefix observed");
    let value = sum as f64 / count as f64;
    let band = 3.0 * (0.64_f64 * 0.36 / count as f64).sqrt();
    assert!(
        (value - 0.64).abs() <= band,
        "depth-1 value {value} outside {band:.4} of 0.64 (count {count})"
    );

    // Every stored prefix with count >= 30 sits within its 3-sigma band of
    // the exact oracle value.
    let mut oracle = ValueOracle::<f64>::new(&policy, KeyMode::FullPrefix);
    let mut checked = 0usize;
    let mut inside = 0usize;
    let mut frontier = vec![PartialPath::empty(instance.clone())];
    while let Some(path) = frontier.pop() {
        if !path.is_terminal() {
            for step in path.legal_steps().unwrap() {
                frontier.push(path.apply_step(&step).unwrap());
            }
        }
        if path.is_empty() {
            continue;
        }
        let key = path.canonical_key(KeyMode::FullPrefix);
        let Some((sum, count)) = model.exact_ratio(&key) else {
            continue;
        };
        if count < 30 {
            continue;
        }
        let v = oracle.value(&path).unwrap();
        let sigma = (v * (1.0 - v) / count as f64).sqrt();
        let observed = sum as f64 / count as f64;
        checked += 1;
        inside += ((observed - v).abs() <= 3.0 * sigma + 1e-12) as usize;
    }
    assert!(checked >= 10, "too few populated prefixes ({checked})");
    let rate = inside as f64 / checked as f64;
    assert!(rate >= 0.99, "only {rate:.3} of {checked} prefixes in band");
    println!(
        "ACCEPTANCE 2 (convergence, {checked} prefixes, {:.1}% in band): PASS",
        rate * 100.0
    );
}

// -----------------------------------------------------------------------------
// 3. Solver vs brute force on the full 1..6 universe
// -----------------------------------------------------------------------------

type Frac = (i128, i128);

fn norm(mut n: i128, mut d: i128) -> Frac {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    if d < 0 {
        n = -n;
        d = -d;
    }
    let g = gcd(n, d).max(1);
    (n / g, d / g)
}

fn brute_solvable(nums: &[Frac]) -> bool {
    if nums.len() == 1 {
        return nums[0].0 == 24 * nums[0].1;
    }
    for i in 0..nums.len() {
        for j in 0..nums.len() {
            if i == j {
                continue;
            }
            let ((an, ad), (bn, bd)) = (nums[i], nums[j]);
            let mut next: Vec<Frac> = vec![
                norm(an * bd + bn * ad, ad * bd),
                norm(an * bd - bn * ad, ad * bd),
                norm(an * bn, ad * bd),
            ];
            if bn != 0 {
                next.push(norm(an * bd, ad * bn));
            }
            for c in next {
                let rest: Vec<Frac> = nums
                    .iter()
                    .enumerate()
                    .filter_map(|(t, v)| (t != i && t != j).then_some(*v))
                    .chain(std::iter::once(c))
                    .collect();
                if brute_solvable(&rest) {
                    return true;
                }
            }
        }
    }
    false
}

#[test]
fn criterion_3_solver_matches_brute_force_on_126_instances() {
    let mut total = 0usize;
    let mut agreements = 0usize;
    let mut solvable_count = 0usize;
    for a in 1..=6i64 {
        for b in a..=6 {
            for c in b..=6 {
                for d in c..=6 {
                    total += 1;
                    let instance =
                        TaskInstance::game24_ints(format!("u{a}{b}{c}{d}"), [a, b, c, d]).unwrap();
                    let found = !solve_exhaustive(&instance).is_empty();
                    let expected = brute_solvable(&[
                        (a as i128, 1),
                        (b as i128, 1),
                        (c as i128, 1),
                        (d as i128, 1),
                    ]);
                    assert_eq!(found, expected, "disagreement on {{{a},{b},{c},{d}}}");
                    agreements += 1;
                    solvable_count += found as usize;
                    // The memoized helper agrees with the enumerating solver.
                    let values: Vec<GameValue> = [a, b, c, d]
                        .iter()
                        .map(|&v| GameValue::from_integer(v))
                        .collect();
                    assert_eq!(solvable(&values), found);
                }
            }
        }
    }
    assert_eq!(total, 126);
    assert_eq!(agreements, 126);
    println!("ACCEPTANCE 3 (solver, 126/126 agree, {solvable_count} solvable): PASS");
}

// -----------------------------------------------------------------------------
// 4. Guided-decoding gain on Game of 24
// -----------------------------------------------------------------------------

#[test]
fn criterion_4_guided_decoding_beats_vanilla_sampling() {
    let mut decodes = vec![
        DecodeSpec::Greedy,
        DecodeSpec::Rerank {
            scorer: ScorerKind::Ovm,
            k: 20,
        },
    ];
    for b in [1usize, 2, 4, 5, 10] {
        decodes.push(DecodeSpec::Beam {
            scorer: ScorerKind::Ovm,
            k: 20,
            b,
        });
    }
    let config = ExperimentConfig {
        env: desk_env(),
        policy: rq1_policy(),
        training: desk_training(200, KeyMode::AbstractState),
        decodes,
        seeds: vec![0, 1, 2],
        max_steps: 10,
        dedup_priority: true,
    };
    let outcome = run_experiment(&config).expect("experiment");

    let greedy = row(&outcome.rows, "greedy", None, None);
    assert!(
        greedy.mean_accuracy >= 0.05 && greedy.mean_accuracy <= 0.20,
        "greedy accuracy {:.3} outside the 5-20% calibration band",
        greedy.mean_accuracy
    );

    let rerank = row(&outcome.rows, "orm-rerank", Some(20), None);
    let vanilla_proportion = rerank.mean_proportion;
    let mut best: Option<(usize, f64, f64)> = None;
    for b in [1usize, 2, 4, 5, 10] {
        let beam = row(&outcome.rows, "ovm-beam", Some(20), Some(b));
        // Pruning at any b < K improves the final-pool proportion over the
        // unpruned (b = K, i.e. vanilla) configuration.
        assert!(
            beam.mean_proportion >= vanilla_proportion,
            "b={b} proportion {:.3} below vanilla {vanilla_proportion:.3}",
            beam.mean_proportion
        );
        let gain_ok = beam.mean_proportion >= 2.0 * vanilla_proportion;
        let acc_ok = beam.mean_accuracy >= rerank.mean_accuracy - 0.02;
        if gain_ok && acc_ok {
            let better = match best {
                None => true,
                Some((_, _, acc)) => beam.mean_accuracy > acc,
            };
            if better {
                best = Some((b, beam.mean_proportion, beam.mean_accuracy));
            }
        }
    }
    let (b, proportion, accuracy) =
        best.expect("no beam width satisfies the proportion and accuracy conditions");
    println!(
        "ACCEPTANCE 4 (guided gain: greedy {:.3}, vanilla prop {:.3}, best b={b} prop {:.3} acc {:.3} vs rerank {:.3}): PASS",
        greedy.mean_accuracy, vanilla_proportion, proportion, accuracy, rerank.mean_accuracy
    );
}

// -----------------------------------------------------------------------------
// 5. Supervision comparison under low label consistency
// -----------------------------------------------------------------------------

#[test]
fn criterion_5_outcome_and_prmo_guidance_beat_prm_guidance() {
    let mut decodes = Vec::new();
    for scorer in [ScorerKind::Ovm, ScorerKind::Prm, ScorerKind::PrmO] {
        for b in [1usize, 2] {
            decodes.push(DecodeSpec::Beam { scorer, k: 20, b });
        }
    }
    let config = ExperimentConfig {
        env: desk_env(),
        policy: PolicySpec::uniform_legal(),
        training: desk_training(1000, KeyMode::AbstractState),
        decodes,
        seeds: vec![0, 1, 2],
        max_steps: 10,
        dedup_priority: true,
    };
    let outcome = run_experiment(&config).expect("experiment");

    let consistency =
        outcome.label_consistency.iter().sum::<f64>() / outcome.label_consistency.len() as f64;
    assert!(
        consistency < 0.8,
        "label consistency {consistency:.3} is not below 0.8"
    );

    for b in [1usize, 2] {
        let ovm = row(&outcome.rows, "ovm-beam", Some(20), Some(b)).mean_proportion;
        let prm = row(&outcome.rows, "prm-beam", Some(20), Some(b)).mean_proportion;
        let prmo = row(&outcome.rows, "prmo-beam", Some(20), Some(b)).mean_proportion;
        assert!(
            ovm - prm >= 0.20,
            "b={b}: ovm {ovm:.3} does not exceed prm {prm:.3} by 20 points"
        );
        assert!(
            prmo - prm >= 0.20,
            "b={b}: prm-o {prmo:.3} does not exceed prm {prm:.3} by 20 points"
        );
    }
    println!("ACCEPTANCE 5 (supervision comparison, consistency {consistency:.3}): PASS");
}

// -----------------------------------------------------------------------------
// 6. b = K equivalence with vanilla sampling + reranking
// -----------------------------------------------------------------------------

#[test]
fn criterion_6_b_equals_k_reproduces_vanilla_rerank_bit_exactly() {
    let policies = [
        PolicySpec::expert(),
        PolicySpec::uniform_legal(),
        PolicySpec::noisy_expert(
            GameValue::new(1, 2),
            GameValue::new(4, 5),
            GameValue::new(1, 5),
        )
        .unwrap(),
        PolicySpec::softmax_tabular(0.7).unwrap(),
    ];
    let puzzles: [[i64; 4]; 3] = [[4, 9, 10, 13], [2, 3, 5, 12], [1, 2, 7, 7]];
    let mut checked = 0usize;
    for (i, policy) in policies.iter().enumerate() {
        for k in [1usize, 3, 5, 8, 20] {
            let instance: Arc<TaskInstance> = if checked.is_multiple_of(2) {
                TaskInstance::game24_ints("equiv", puzzles[checked % puzzles.len()]).unwrap()
            } else {
                TaskInstance::chain("equiv", 3, 2, vec![GameValue::new(3, 5); 3]).unwrap()
            };
            let stream = RngStream::new(1000 + checked as u64, "equiv");
            let scorer = OracleScorer::new(policy);
            let config = BeamConfig {
                k,
                b: k,
                max_steps: 10,
                dedup_priority: true,
            };
            let beam = value_guided_beam_search(&instance, policy, &scorer, &config, &stream)
                .expect("beam");
            let paths = vanilla_sample(&instance, policy, k, 10, &stream).expect("vanilla");
            let beam_keys: Vec<String> = beam
                .final_pool
                .iter()
                .map(|(p, _)| p.canonical_key(KeyMode::FullPrefix))
                .collect();
            let vanilla_keys: Vec<String> = paths
                .iter()
                .map(|p| p.canonical_key(KeyMode::FullPrefix))
                .collect();
            assert_eq!(beam_keys, vanilla_keys, "pool mismatch (policy {i}, k {k})");
            let idx = rerank_best_of_k(&paths, &scorer).expect("rerank");
            assert_eq!(
                beam.chosen.canonical_key(KeyMode::FullPrefix),
                paths[idx].canonical_key(KeyMode::FullPrefix),
                "choice mismatch (policy {i}, k {k})"
            );
            assert_eq!(beam.verdict, paths[idx].verdict().unwrap());
            checked += 1;
        }
    }
    assert_eq!(checked, 20);
    println!("ACCEPTANCE 6 (b=K equivalence, {checked}/20 configs bit-exact): PASS");
}

// -----------------------------------------------------------------------------
// 7. Vanilla proportion is K-invariant
// -----------------------------------------------------------------------------

#[test]
fn criterion_7_vanilla_proportion_is_k_invariant() {
    let config = ExperimentConfig {
        env: desk_env(),
        policy: rq1_policy(),
        training: desk_training(10, KeyMode::AbstractState),
        decodes: vec![
            DecodeSpec::Rerank {
                scorer: ScorerKind::Oracle,
                k: 20,
            },
            DecodeSpec::Rerank {
                scorer: ScorerKind::Oracle,
                k: 100,
            },
        ],
        seeds: vec![0, 1, 2],
        max_steps: 10,
        dedup_priority: true,
    };
    let outcome = run_experiment(&config).expect("experiment");
    let p20 = row(&outcome.rows, "oracle-rerank", Some(20), None).mean_proportion;
    let p100 = row(&outcome.rows, "oracle-rerank", Some(100), None).mean_proportion;
    let n20 = (30 * 20 * 3) as f64;
    let n100 = (30 * 100 * 3) as f64;
    let pooled = (p20 * n20 + p100 * n100) / (n20 + n100);
    let sigma = (pooled * (1.0 - pooled) * (1.0 / n20 + 1.0 / n100)).sqrt();
    assert!(
        (p20 - p100).abs() < 3.0 * sigma,
        "K=20 proportion {p20:.4} vs K=100 {p100:.4} differ by more than 3 sigma ({sigma:.4})"
    );
    println!(
        "ACCEPTANCE 7 (K-invariance: {p20:.4} vs {p100:.4}, 3 sigma {:.4}): PASS",
        3.0 * sigma
    );
}

// -----------------------------------------------------------------------------
// 8. Annotation-cost identities at the 900 x 100 scale
// -----------------------------------------------------------------------------

#[test]
fn criterion_8_annotation_cost_identities() {
    let stream = RngStream::new(8, "cost");
    let puzzles = ovmlab_core::env::generate_puzzles(900, 1, 13, &stream.derive("puzzles"))
        .expect("900 distinct solvable puzzles");
    let instances: Vec<Arc<TaskInstance>> = puzzles
        .iter()
        .enumerate()
        .map(|(i, p)| TaskInstance::game24_ints(format!("q{i:04}"), *p).unwrap())
        .collect();
    // Wrong-result-only corruption keeps every path at full length.
    let policy = PolicySpec::noisy_expert(
        GameValue::new(1, 5),
        GameValue::new(1, 1),
        GameValue::new(0, 1),
    )
    .unwrap();
    let samples = build_training_set(&instances, &policy, 100, 10, false, &stream.derive("train"))
        .expect("training set");
    let report = ovmlab_core::experiments::annotation_cost_report(&samples);

    assert_eq!(report.outcome_labels, 900 * 100);
    assert_eq!(report.outcome_annotations, 900 * 100);
    let mut recount = 0u64;
    for s in &samples {
        recount += s.path.len() as u64;
    }
    assert_eq!(report.process_labels, recount);
    assert_eq!(report.process_annotations, recount);
    let ratio = report.process_labels as f64 / report.outcome_labels as f64;
    assert!((recount as f64 / 90_000.0 - report.mean_path_len).abs() < 1e-12);
    assert!(
        (3.5..=4.5).contains(&ratio),
        "process/outcome ratio {ratio:.3} is not near the mean path length"
    );
    println!(
        "ACCEPTANCE 8 (costs: outcome {}, process {}, ratio {:.3}): PASS",
        report.outcome_labels, report.process_labels, ratio
    );
}

// -----------------------------------------------------------------------------
// 9. Gradient check for the hashed-linear backend
// -----------------------------------------------------------------------------

#[test]
fn criterion_9_analytic_gradients_match_finite_differences() {
    let mut rng = RngStream::new(9, "grad").rng();
    let eps = 1e-5;
    for case in 0..100usize {
        let dim = 16 + (rng.next_u64() % 49) as usize;
        let mut model: HashedLinear<f64> = HashedLinear::new(dim);
        let weights: Vec<f64> = (0..dim)
            .map(|_| (rng.next_u64() % 2000) as f64 / 1000.0 - 1.0)
            .collect();
        let bias = (rng.next_u64() % 1000) as f64 / 1000.0 - 0.5;
        model.set_parameters(weights, bias);

        let rows = 4 + (rng.next_u64() % 24) as usize;
        let data: Vec<(Vec<usize>, f64)> = (0..rows)
            .map(|_| {
                let nfeat = 1 + (rng.next_u64() % 5) as usize;
                let mut feats: Vec<usize> = (0..nfeat)
                    .map(|_| (rng.next_u64() % dim as u64) as usize)
                    .collect();
                feats.sort_unstable();
                feats.dedup();
                let y = (rng.next_u64() % 2) as f64;
                (feats, y)
            })
            .collect();

        let (grad_w, grad_b) = model.gradient(&data);
        // Probe three weight coordinates and the bias per case.
        for probe in 0..3usize {
            let j = (case * 7 + probe * 13) % dim;
            let mut plus = model.clone();
            let mut w = plus.weights().to_vec();
            w[j] += eps;
            plus.set_parameters(w, plus.bias());
            let mut minus = model.clone();
            let mut w = minus.weights().to_vec();
            w[j] -= eps;
            minus.set_parameters(w, minus.bias());
            let fd = (plus.mse_loss(&data) - minus.mse_loss(&data)) / (2.0 * eps);
            let denom = fd.abs().max(grad_w[j].abs()).max(1e-8);
            assert!(
                ((grad_w[j] - fd) / denom).abs() <= 1e-4,
                "case {case} weight {j}: analytic {} vs fd {fd}",
                grad_w[j]
            );
        }
        let mut plus = model.clone();
        plus.set_parameters(plus.weights().to_vec(), model.bias() + eps);
        let mut minus = model.clone();
        minus.set_parameters(minus.weights().to_vec(), model.bias() - eps);
        let fd_b = (plus.mse_loss(&data) - minus.mse_loss(&data)) / (2.0 * eps);
        let denom = fd_b.abs().max(grad_b.abs()).max(1e-8);
        assert!(
            ((grad_b - fd_b) / denom).abs() <= 1e-4,
            "case {case} bias: analytic {grad_b} vs fd {fd_b}"
        );
    }
    println!("ACCEPTANCE 9 (gradient check, 100 cases at 1e-4): PASS");
}

// -----------------------------------------------------------------------------
// 10. Determinism of experiment reruns
// -----------------------------------------------------------------------------

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let config = ExperimentConfig {
        env: EnvConfig::Game24 {
            train_questions: 10,
            eval_questions: 5,
            min_value: 1,
            max_value: 10,
            puzzle_file: None,
        },
        policy: rq1_policy(),
        training: desk_training(50, KeyMode::AbstractState),
        decodes: vec![
            DecodeSpec::Greedy,
            DecodeSpec::SelfConsistency { k: 8 },
            DecodeSpec::Beam {
                scorer: ScorerKind::Ovm,
                k: 8,
                b: 4,
            },
        ],
        seeds: vec![0, 1, 2],
        max_steps: 10,
        dedup_priority: true,
    };
    let first = run_experiment(&config).expect("first run");
    let second = run_experiment(&config).expect("second run");
    let a = csv_without_timings(&render_csv(&first.rows));
    let b = csv_without_timings(&render_csv(&second.rows));
    assert_eq!(a, b, "CSV differs between identical reruns");
    assert_eq!(first.config_hash, second.config_hash);
    assert_eq!(first.label_consistency, second.label_consistency);
    println!("ACCEPTANCE 10 (determinism): PASS");
}
