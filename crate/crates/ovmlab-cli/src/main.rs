//! Command-line front end: config-driven dataset generation, training,
//! decoding, experiments, sweeps and report regeneration, plus a standalone
//! Game-of-24 solver.
//!
//! Exit codes: 0 success; 2 unsolvable puzzle (`solve`); 64 usage or
//! configuration error; 74 I/O error; 1 any other module error.

mod config;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use config::{ConfigError, FileConfig};
use ovmlab_core::env::{solve_exhaustive, ReasoningStep, TaskInstance};
use ovmlab_core::experiments::report::{charts_from_csv, config_json, content_hash, emit_report};
use ovmlab_core::experiments::{
    make_instances, run_experiment, sweep, DecodeSpec, ExperimentConfig, ExperimentOutcome,
    ScorerKind,
};
use ovmlab_core::oracle::recount_prefix_stats;
use ovmlab_core::rng::RngStream;
use ovmlab_core::search::{
    greedy_decode, rerank_best_of_k, self_consistency, value_guided_beam_search, vanilla_sample,
    BeamConfig, OracleScorer, PrefixScorer,
};
use ovmlab_core::value_models::{
    atomic_write, build_training_set, dataset, load_model, AnyModel, OutcomeValueModel, PrmVariant,
    ProcessRewardModel, TrainingSample,
};
use ovmlab_core::CoreError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "ovmlab",
    version,
    about = "Value-guided decoding laboratory for exactly solvable reasoning tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every distinct solution of a Game-of-24 puzzle.
    Solve {
        /// Four integers.
        numbers: Vec<String>,
    },
    /// Sample a labeled training dataset into the output directory.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key config overrides, e.g. --set policy.epsilon="1/2".
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Train the configured models from a dataset file and audit them.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Dataset path; defaults to <out>/dataset.jsonl.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Decode one puzzle (or the configured eval split) with one method.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Method: greedy | sc | orm-rerank | prm-rerank | prmo-rerank |
        /// oracle-rerank | ovm-beam | prm-beam | prmo-beam | oracle-beam.
        #[arg(long)]
        method: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        b: Option<usize>,
        /// Four space-separated integers, e.g. "4 9 10 13".
        #[arg(long)]
        puzzle: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Load a saved model instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the configured experiment end to end and emit reports.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the configured (K, b) sweep grid and emit reports.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Regenerate charts from an existing metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: Option<String>,
    },
}

enum CliError {
    Usage(String),
    Io(String),
    Module(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Io(_) => 74,
            CliError::Module(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Module(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_) => CliError::Io(e.to_string()),
            CoreError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Module(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Solve { numbers } => cmd_solve(&numbers),
        Command::GenData {
            config,
            overrides,
            out,
        } => cmd_gen_data(&config, &overrides, out.as_deref()),
        Command::Train {
            config,
            overrides,
            dataset,
            out,
        } => cmd_train(&config, &overrides, dataset.as_deref(), out.as_deref()),
        Command::Decode {
            config,
            overrides,
            method,
            k,
            b,
            puzzle,
            seed,
            model,
            out,
        } => cmd_decode(DecodeArgs {
            config: &config,
            overrides: &overrides,
            method: &method,
            k,
            b,
            puzzle: puzzle.as_deref(),
            seed,
            model: model.as_deref(),
            out: out.as_deref(),
        }),
        Command::Experiment {
            config,
            overrides,
            out,
        } => cmd_experiment(&config, &overrides, out.as_deref(), false),
        Command::Sweep {
            config,
            overrides,
            out,
        } => cmd_experiment(&config, &overrides, out.as_deref(), true),
        Command::Report { metrics, out } => cmd_report(&metrics, out.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(numbers: &[String]) -> Result<u8, CliError> {
    if numbers.len() != 4 {
        return Err(CliError::Usage(format!(
            "solve expects exactly 4 integers, got {}",
            numbers.len()
        )));
    }
    let mut parsed = [0i64; 4];
    for (slot, raw) in parsed.iter_mut().zip(numbers) {
        *slot = raw
            .parse::<i64>()
            .map_err(|_| CliError::Usage(format!("not an integer: {raw:?}")))?;
    }
    let instance =
        TaskInstance::game24_ints("cli", parsed).map_err(|e| CliError::Usage(e.to_string()))?;
    let solutions = solve_exhaustive(&instance);
    if solutions.is_empty() {
        println!("unsolvable");
        return Ok(2);
    }
    for path in &solutions {
        let combines: Vec<String> = path
            .steps()
            .iter()
            .filter_map(|s| match s {
                ReasoningStep::Combine { .. } => Some(s.line()),
                _ => None,
            })
            .collect();
        let expr = match path.steps().last() {
            Some(ReasoningStep::Answer { expr }) => expr.to_string(),
            _ => unreachable!("solutions end with an answer"),
        };
        println!("{} => {expr} = 24", combines.join(" ; "));
    }
    println!(
        "[{} solution{}]",
        solutions.len(),
        if solutions.len() == 1 { "" } else { "s" }
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

fn load_file_config(path: &Path, overrides: &[String]) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(config::load_config(&text, overrides)?)
}

fn write_manifest(
    dir: &Path,
    experiment: &ExperimentConfig,
    outputs: &[String],
) -> Result<(), CliError> {
    let config_value = config_json(experiment);
    let manifest = serde_json::json!({
        "tool": "ovmlab",
        "modules": { "ovmlab-cli": env!("CARGO_PKG_VERSION") },
        "created_unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        "config_hash": content_hash(&config_value),
        "seeds": experiment.seeds.clone(),
        "config": config_value,
        "outputs": outputs,
    });
    atomic_write(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(path: &Path, overrides: &[String], out: Option<&str>) -> Result<u8, CliError> {
    let file = load_file_config(path, overrides)?;
    let experiment = config::experiment_config(&file)?;
    let dir = config::output_dir(&file, out);
    std::fs::create_dir_all(&dir)?;

    let seed = *experiment.seeds.first().unwrap_or(&0);
    let base = RngStream::new(seed, "exp");
    let (train, eval) = make_instances(&experiment.env, &base.derive("instances"))?;
    let samples = build_training_set(
        &train,
        &experiment.policy,
        experiment.training.paths_per_question,
        experiment.max_steps,
        true,
        &base.derive("train"),
    )?;
    let config_value = config_json(&experiment);
    let meta = serde_json::json!({
        "seed": seed,
        "config_hash": content_hash(&config_value),
    });
    let dataset_path = dir.join("dataset.jsonl");
    dataset::write_dataset(&samples, meta, &dataset_path)?;
    let mut outputs = vec!["dataset.jsonl".to_string()];

    // For puzzle tasks, also record the train + eval puzzle list in the
    // one-per-line format the env.puzzle_file option reads back.
    let puzzles: Vec<[i64; 4]> = train
        .iter()
        .chain(eval.iter())
        .filter_map(|inst| match inst.spec() {
            ovmlab_core::env::TaskSpec::Game24 { inputs } => {
                let ints: Vec<i64> = inputs
                    .iter()
                    .filter(|v| v.denom() == &1)
                    .map(|v| *v.numer())
                    .collect();
                (ints.len() == 4).then(|| [ints[0], ints[1], ints[2], ints[3]])
            }
            _ => None,
        })
        .collect();
    if !puzzles.is_empty() {
        atomic_write(
            &dir.join("puzzles.txt"),
            ovmlab_core::env::render_puzzle_list(&puzzles).as_bytes(),
        )?;
        outputs.push("puzzles.txt".into());
    }
    write_manifest(&dir, &experiment, &outputs)?;
    println!(
        "wrote {} samples from {} questions to {}",
        samples.len(),
        train.len(),
        dataset_path.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(
    path: &Path,
    overrides: &[String],
    dataset_path: Option<&Path>,
    out: Option<&str>,
) -> Result<u8, CliError> {
    let file = load_file_config(path, overrides)?;
    let experiment = config::experiment_config(&file)?;
    let dir = config::output_dir(&file, out);
    std::fs::create_dir_all(&dir)?;
    let dataset_file = dataset_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.join("dataset.jsonl"));
    let samples = dataset::read_dataset(&dataset_file)?;
    println!(
        "loaded {} samples from {}",
        samples.len(),
        dataset_file.display()
    );

    let t = &experiment.training;
    let targets = config::supervision_targets(&file)?;
    let mut outputs = Vec::new();
    for target in &targets {
        match target.as_str() {
            "outcome" => {
                let mut model = OutcomeValueModel::new(t.backend, t.key_mode, t.fallback);
                model.train(&samples, &t.hyper)?;
                if let Some(table) = model.tabular() {
                    audit_fixed_point(&samples, &model, table.len())?;
                }
                model.save(&dir.join("ovm.model"))?;
                outputs.push("ovm.model".to_string());
                println!("trained outcome model -> ovm.model");
            }
            "prm" | "prm-o" => {
                let variant = if target == "prm" {
                    PrmVariant::Prm
                } else {
                    PrmVariant::PrmO
                };
                let mut model = ProcessRewardModel::new(variant, t.backend, t.key_mode, t.fallback);
                model.train(&samples, &t.hyper)?;
                let name = if target == "prm" {
                    "prm.model"
                } else {
                    "prmo.model"
                };
                model.save(&dir.join(name))?;
                outputs.push(name.to_string());
                println!("trained {target} model -> {name}");
            }
            _ => unreachable!("validated by supervision_targets"),
        }
    }
    write_manifest(&dir, &experiment, &outputs)?;
    Ok(0)
}

/// Tabular outcome models store exact per-prefix means; verify every stored
/// accumulator against an independent recount.
fn audit_fixed_point(
    samples: &[TrainingSample],
    model: &OutcomeValueModel,
    table_len: usize,
) -> Result<(), CliError> {
    let recount = recount_prefix_stats(samples, model.key_mode());
    if recount.len() != table_len {
        return Err(CliError::Module(format!(
            "fixed-point audit failed: {} keys stored, {} recounted",
            table_len,
            recount.len()
        )));
    }
    for (key, (sum, count)) in &recount {
        match model.exact_ratio(key) {
            Some((ms, mc)) if ms * count == sum * mc => {}
            other => {
                return Err(CliError::Module(format!(
                    "fixed-point audit failed at key {key:?}: stored {other:?}, recounted ({sum}, {count})"
                )))
            }
        }
    }
    println!(
        "fixed-point audit: {} prefix keys, all exact",
        recount.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

struct DecodeArgs<'a> {
    config: &'a Path,
    overrides: &'a [String],
    method: &'a str,
    k: Option<usize>,
    b: Option<usize>,
    puzzle: Option<&'a str>,
    seed: Option<u64>,
    model: Option<&'a Path>,
    out: Option<&'a str>,
}

fn cmd_decode(args: DecodeArgs<'_>) -> Result<u8, CliError> {
    let file = load_file_config(args.config, args.overrides)?;
    let experiment = config::experiment_config(&file)?;
    let dir = config::output_dir(&file, args.out);
    std::fs::create_dir_all(&dir)?;

    let spec = config::decode_spec(&config::DecodeSection {
        method: args.method.to_string(),
        k: args.k,
        b: args.b,
    })?;
    let seed = args
        .seed
        .unwrap_or_else(|| *experiment.seeds.first().unwrap_or(&0));
    let base = RngStream::new(seed, "exp");

    // Evaluation instances: an explicit puzzle or the configured eval split.
    let eval: Vec<Arc<TaskInstance>> = match args.puzzle {
        Some(text) => {
            let nums: Vec<i64> = text
                .split_whitespace()
                .map(|t| t.parse::<i64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("bad puzzle {text:?}")))?;
            if nums.len() != 4 {
                return Err(CliError::Usage("puzzle needs 4 integers".into()));
            }
            vec![
                TaskInstance::game24_ints("cli", [nums[0], nums[1], nums[2], nums[3]])
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            ]
        }
        None => make_instances(&experiment.env, &base.derive("instances"))?.1,
    };

    // Scorer: loaded from disk or trained on the configured split.
    let needs = match &spec {
        DecodeSpec::Rerank { scorer, .. } | DecodeSpec::Beam { scorer, .. } => Some(*scorer),
        _ => None,
    };
    let mut trained_outcome: Option<OutcomeValueModel> = None;
    let mut trained_process: Option<ProcessRewardModel> = None;
    match (needs, args.model) {
        (Some(ScorerKind::Oracle), _) | (None, _) => {}
        (Some(kind), Some(mp)) => match (kind, load_model(mp)?) {
            (ScorerKind::Ovm, AnyModel::Outcome(m)) => trained_outcome = Some(m),
            (ScorerKind::Prm, AnyModel::Process(m)) if m.variant == PrmVariant::Prm => {
                trained_process = Some(m)
            }
            (ScorerKind::PrmO, AnyModel::Process(m)) if m.variant == PrmVariant::PrmO => {
                trained_process = Some(m)
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "model file {} does not match method {}",
                    mp.display(),
                    args.method
                )))
            }
        },
        (Some(kind), None) => {
            let (train, _) = make_instances(&experiment.env, &base.derive("instances"))?;
            let samples = build_training_set(
                &train,
                &experiment.policy,
                experiment.training.paths_per_question,
                experiment.max_steps,
                true,
                &base.derive("train"),
            )?;
            let t = &experiment.training;
            match kind {
                ScorerKind::Ovm => {
                    let mut m = OutcomeValueModel::new(t.backend, t.key_mode, t.fallback);
                    m.train(&samples, &t.hyper)?;
                    trained_outcome = Some(m);
                }
                ScorerKind::Prm | ScorerKind::PrmO => {
                    let variant = if kind == ScorerKind::Prm {
                        PrmVariant::Prm
                    } else {
                        PrmVariant::PrmO
                    };
                    let mut m = ProcessRewardModel::new(variant, t.backend, t.key_mode, t.fallback);
                    m.train(&samples, &t.hyper)?;
                    trained_process = Some(m);
                }
                ScorerKind::Oracle => unreachable!(),
            }
        }
    }
    let oracle = OracleScorer::new(&experiment.policy);
    let scorer: Option<&dyn PrefixScorer> = match needs {
        Some(ScorerKind::Oracle) => Some(&oracle),
        Some(ScorerKind::Ovm) => trained_outcome.as_ref().map(|m| m as &dyn PrefixScorer),
        Some(ScorerKind::Prm) | Some(ScorerKind::PrmO) => {
            trained_process.as_ref().map(|m| m as &dyn PrefixScorer)
        }
        None => None,
    };

    let mut trace = String::new();
    let mut correct = 0usize;
    for instance in &eval {
        let stream = base.derive(&format!("decode/{}", instance.id()));
        trace.push_str(&format!("== instance {} ==\n", instance.question_line()));
        let verdict = match &spec {
            DecodeSpec::Greedy => {
                let r = greedy_decode(instance, &experiment.policy, experiment.max_steps)?;
                trace.push_str(&format!("greedy: {}\n", r.chosen.display_line()));
                r.verdict
            }
            DecodeSpec::SelfConsistency { k } => {
                let paths = vanilla_sample(
                    instance,
                    &experiment.policy,
                    *k,
                    experiment.max_steps,
                    &stream,
                )?;
                match self_consistency(&paths) {
                    Ok((sig, idx)) => {
                        trace.push_str(&format!("sc: {} paths, winner {sig}\n", paths.len()));
                        paths[idx].verdict()?
                    }
                    Err(CoreError::NoAnsweredPaths) => {
                        trace.push_str("sc: no answered paths\n");
                        ovmlab_core::env::AnswerVerdict {
                            answered: false,
                            correct: false,
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            DecodeSpec::Rerank { k, .. } => {
                let paths = vanilla_sample(
                    instance,
                    &experiment.policy,
                    *k,
                    experiment.max_steps,
                    &stream,
                )?;
                let scorer = scorer.expect("rerank methods carry a scorer");
                let idx = rerank_best_of_k(&paths, scorer)?;
                for (i, p) in paths.iter().enumerate() {
                    trace.push_str(&format!(
                        "  [{}] {:.6} {}\n",
                        if i == idx { '*' } else { ' ' },
                        scorer.score_complete(p).unwrap_or(f64::NAN),
                        p.display_line()
                    ));
                }
                paths[idx].verdict()?
            }
            DecodeSpec::Beam { k, b, .. } => {
                let beam_config = BeamConfig {
                    k: *k,
                    b: *b,
                    max_steps: experiment.max_steps,
                    dedup_priority: experiment.dedup_priority,
                };
                let r = value_guided_beam_search(
                    instance,
                    &experiment.policy,
                    scorer.expect("beam methods carry a scorer"),
                    &beam_config,
                    &stream,
                )?;
                for snap in &r.stages {
                    trace.push_str(&format!(
                        "stage {}: {} candidates\n",
                        snap.stage,
                        snap.candidates.len()
                    ));
                    for c in &snap.candidates {
                        trace.push_str(&format!(
                            "  [{}] {:.6} {}\n",
                            if c.selected { '*' } else { ' ' },
                            c.value,
                            c.summary
                        ));
                    }
                }
                trace.push_str(&format!(
                    "chosen ({} sampled steps): {}\n",
                    r.sampled_steps,
                    r.chosen.display_line()
                ));
                r.verdict
            }
        };
        correct += verdict.correct as usize;
        trace.push_str(&format!(
            "verdict: answered={} correct={}\n\n",
            verdict.answered, verdict.correct
        ));
    }

    let trace_path = dir.join("decode-trace.txt");
    atomic_write(&trace_path, trace.as_bytes())?;
    write_manifest(&dir, &experiment, &["decode-trace.txt".into()])?;
    println!(
        "method {}: {}/{} correct (seed {seed}); trace at {}",
        args.method,
        correct,
        eval.len(),
        trace_path.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// experiment / sweep / report
// ---------------------------------------------------------------------------

fn cmd_experiment(
    path: &Path,
    overrides: &[String],
    out: Option<&str>,
    as_sweep: bool,
) -> Result<u8, CliError> {
    let file = load_file_config(path, overrides)?;
    let experiment = config::experiment_config(&file)?;
    let dir = config::output_dir(&file, out);

    let outcome: ExperimentOutcome = if as_sweep {
        let grid = config::sweep_grid(&file)?;
        sweep(&experiment, &grid)?
    } else {
        run_experiment(&experiment)?
    };
    let files = emit_report(&outcome, &dir)?;
    print_summary(&outcome);
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn print_summary(outcome: &ExperimentOutcome) {
    println!(
        "{:<14} {:>5} {:>4}  {:>17} {:>17}  note",
        "method", "K", "b", "accuracy", "proportion"
    );
    let fmt_opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
    for row in &outcome.rows {
        println!(
            "{:<14} {:>5} {:>4}  {:>8.3} +- {:<5.3} {:>8.3} +- {:<5.3}  {}",
            row.method,
            fmt_opt(row.k),
            fmt_opt(row.b),
            row.mean_accuracy,
            row.std_accuracy,
            row.mean_proportion,
            row.std_proportion,
            if row.vanilla_equivalent {
                "vanilla-equivalent"
            } else {
                ""
            }
        );
    }
    if !outcome.label_consistency.is_empty() {
        let mean: f64 =
            outcome.label_consistency.iter().sum::<f64>() / outcome.label_consistency.len() as f64;
        println!("label consistency (prm vs prm-o): {mean:.3}");
    }
    if let Some(cost) = outcome.costs.first() {
        println!(
            "annotation cost: outcome {} labels / process {} labels (mean path length {:.2})",
            cost.outcome_labels, cost.process_labels, cost.mean_path_len
        );
    }
}

fn cmd_report(metrics: &Path, out: Option<&str>) -> Result<u8, CliError> {
    let csv = std::fs::read_to_string(metrics)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", metrics.display())))?;
    let dir: PathBuf = out.map(Into::into).unwrap_or_else(|| {
        metrics
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ".".into())
    });
    let files = charts_from_csv(&csv, &dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}
