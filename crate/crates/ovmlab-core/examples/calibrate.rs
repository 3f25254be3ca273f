//! Calibration sweep for the Game-of-24 experiment defaults: scans the
//! NoisyExpert corruption rate and prints greedy accuracy, vanilla-sampling
//! metrics and guided-beam metrics so the shipped configs can pin a regime
//! where greedy lands near the target band and guidance has clear headroom.

use ovmlab_core::experiments::{
    run_experiment, DecodeSpec, EnvConfig, ExperimentConfig, ScorerKind, TrainingConfig,
};
use ovmlab_core::policy::PolicySpec;
use ovmlab_core::value_models::BackendConfig;
use ovmlab_core::GameValue;

fn main() {
    let eps_grid: Vec<(i64, i64)> = vec![(13, 20), (7, 10), (3, 4), (4, 5)];
    for (num, den) in eps_grid {
        let policy = PolicySpec::noisy_expert(
            GameValue::new(num, den),
            GameValue::new(4, 5),
            GameValue::new(1, 5),
        )
        .unwrap();
        let mut decodes = vec![
            DecodeSpec::Greedy,
            DecodeSpec::SelfConsistency { k: 20 },
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
            env: EnvConfig::Game24 {
                train_questions: 50,
                eval_questions: 30,
                min_value: 1,
                max_value: 13,
                puzzle_file: None,
            },
            policy,
            training: TrainingConfig {
                paths_per_question: 200,
                backend: BackendConfig::Tabular,
                key_mode: ovmlab_core::env::KeyMode::AbstractState,
                fallback: 0.0,
                hyper: Default::default(),
            },
            decodes,
            seeds: vec![0, 1, 2],
            max_steps: 10,
            dedup_priority: true,
        };
        let outcome = run_experiment(&config).unwrap();
        println!("=== epsilon {num}/{den} ===");
        let consistency: f64 =
            outcome.label_consistency.iter().sum::<f64>() / outcome.label_consistency.len() as f64;
        println!("  label consistency: {consistency:.3}");
        for row in &outcome.rows {
            println!(
                "  {:<12} K={:?} b={:?}  acc {:.3} +- {:.3}  prop {:.3} +- {:.3}",
                row.method,
                row.k,
                row.b,
                row.mean_accuracy,
                row.std_accuracy,
                row.mean_proportion,
                row.std_proportion
            );
        }
    }
}
