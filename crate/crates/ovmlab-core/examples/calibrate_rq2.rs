//! Calibration for the supervision-comparison experiment: UniformLegal
//! generator, OVM vs PRM vs PRM-O guidance at K=20, b in {1, 2}.

use ovmlab_core::experiments::{
    run_experiment, DecodeSpec, EnvConfig, ExperimentConfig, ScorerKind, TrainingConfig,
};
use ovmlab_core::policy::PolicySpec;
use ovmlab_core::value_models::BackendConfig;

fn main() {
    let mut decodes = vec![DecodeSpec::Rerank {
        scorer: ScorerKind::Ovm,
        k: 20,
    }];
    for scorer in [ScorerKind::Ovm, ScorerKind::Prm, ScorerKind::PrmO] {
        for b in [1usize, 2] {
            decodes.push(DecodeSpec::Beam { scorer, k: 20, b });
        }
    }
    let config = ExperimentConfig {
        env: EnvConfig::Game24 {
            train_questions: 50,
            eval_questions: 30,
            min_value: 1,
            max_value: 13,
            puzzle_file: None,
        },
        policy: PolicySpec::uniform_legal(),
        training: TrainingConfig {
            paths_per_question: 1000,
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
    let consistency: f64 =
        outcome.label_consistency.iter().sum::<f64>() / outcome.label_consistency.len() as f64;
    println!("label consistency: {consistency:.3}");
    for row in &outcome.rows {
        println!(
            "{:<12} K={:?} b={:?}  acc {:.3} +- {:.3}  prop {:.3} +- {:.3}",
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
