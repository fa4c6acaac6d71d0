//! Command line front end: corpus generation, collection, training,
//! iterative runs, regret evaluation, fixtures, and savings reports.
//!
//! Everything non-trivial lives in a JSON config file; flags only pick the
//! subcommand, the config, the output directory, a master-seed override and
//! the worker count. Every run writes a resolved-config snapshot and a
//! deterministic log into the output directory, and prints exactly one
//! summary line to stdout. Exit codes: 0 success, 1 usage, 2 bad
//! config/data, 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use bcmax::dataset;
use bcmax::error::{Error, Result};
use bcmax::eval::{regret, run_fixtures, savings_report};
use bcmax::mdp::{rollout, Policy};
use bcmax::pipeline::{self, RunConfig};
use bcmax::policy::PolicyParams;
use bcmax::sim::{save_corpus, InlineSim};
use bcmax::trainer::{build_examples, train};
use bcmax::weighting::{
    bucket_weights, hedge_init, uniform_weights, weights_from_state, WeightingMode,
};

#[derive(Parser)]
#[command(
    name = "bcmax",
    about = "Imitation learning from the best of several baseline policies",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; see configs/demo.json for the shape.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; all artifact paths are relative to it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the corpus master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for collection and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the module corpus and write it as JSON lines.
    GenCorpus,
    /// Roll every roster policy over the corpus and store the dataset.
    Collect,
    /// Collect, weight, and train a single policy (one-shot cloning).
    Train,
    /// Run the full iterative loop: collect with exploration, train, grow
    /// the roster, repeat.
    Iterate,
    /// Evaluate a checkpoint's regret against the configured roster.
    Eval,
    /// Run the paired-environment indistinguishability fixtures.
    Fixtures,
    /// Emit the per-iteration savings table for a finished run.
    Report,
}

/// Top-level config file: the run description plus optional per-subcommand
/// sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    run: RunConfig,
    #[serde(default)]
    eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    /// Checkpoint to evaluate, relative to the output directory.
    checkpoint: String,
}

fn default_eval() -> EvalSection {
    EvalSection {
        checkpoint: "policy.json".into(),
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::usage("this subcommand requires --config <file>"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: CliConfig = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        config.run.corpus.master_seed = seed;
    }
    config.run.validate()?;
    Ok(config)
}

struct RunDir {
    out: PathBuf,
    log: std::fs::File,
}

impl RunDir {
    fn prepare(out: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(out)?;
        let log = std::fs::File::create(out.join("bcmax.log"))?;
        Ok(RunDir {
            out: out.to_path_buf(),
            log,
        })
    }

    fn snapshot(&mut self, config: &CliConfig) -> Result<()> {
        pipeline::write_json(&self.out.join("resolved_config.json"), config)?;
        self.log(&format!(
            "config: contexts={} seed={} roster={:?} iterations={}",
            config.run.corpus.n_contexts,
            config.run.corpus.master_seed,
            config.run.roster.iter().map(|b| b.name()).collect::<Vec<_>>(),
            config.run.iterations
        ))
    }

    fn log(&mut self, line: &str) -> Result<()> {
        writeln!(self.log, "{line}")?;
        Ok(())
    }
}

fn named_roster(config: &RunConfig) -> (Vec<String>, Vec<Box<dyn Policy + Send + Sync>>) {
    let names = config.roster.iter().map(|b| b.name()).collect();
    let policies = config.roster.iter().map(|b| b.build()).collect();
    (names, policies)
}

fn cmd_gen_corpus(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let mut dir = RunDir::prepare(&cli.out)?;
    dir.snapshot(&config)?;

    let env = InlineSim::new(config.run.corpus.env.clone())?;
    let contexts = config.run.corpus.contexts();
    let graphs: Vec<_> = contexts.iter().map(|c| env.generate(c)).collect();
    let path = dir.out.join("corpus.jsonl");
    save_corpus(&path, &graphs)?;

    let callsites: usize = graphs.iter().map(|g| g.callsites.len()).sum();
    dir.log(&format!(
        "gen-corpus: modules={} callsites={callsites}",
        graphs.len()
    ))?;
    Ok(format!(
        "wrote {} modules ({callsites} callsites) to {}",
        graphs.len(),
        path.display()
    ))
}

fn cmd_collect(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let mut dir = RunDir::prepare(&cli.out)?;
    dir.snapshot(&config)?;

    let env = InlineSim::new(config.run.corpus.env.clone())?;
    let contexts = config.run.corpus.contexts();
    let (names, policies) = named_roster(&config.run);
    let refs: Vec<&(dyn Policy + Sync)> =
        policies.iter().map(|p| p.as_ref() as &(dyn Policy + Sync)).collect();
    let ds = dataset::collect(&env, &refs, &contexts)?;
    let path = dir.out.join("dataset.jsonl");
    dataset::save(&ds, &path)?;

    let best_sum: f64 = ds.best_sizes().iter().sum();
    dir.log(&format!(
        "collect: contexts={} roster={names:?} best_sum={best_sum}",
        contexts.len()
    ))?;
    Ok(format!(
        "collected {} policies x {} contexts; best-of-roster size sum {best_sum}",
        names.len(),
        contexts.len()
    ))
}

fn cmd_train(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let mut dir = RunDir::prepare(&cli.out)?;
    dir.snapshot(&config)?;

    let env = InlineSim::new(config.run.corpus.env.clone())?;
    let contexts = config.run.corpus.contexts();
    let (_, policies) = named_roster(&config.run);
    let refs: Vec<&(dyn Policy + Sync)> =
        policies.iter().map(|p| p.as_ref() as &(dyn Policy + Sync)).collect();
    let ds = dataset::collect(&env, &refs, &contexts)?;
    dataset::save(&ds, &dir.out.join("dataset.jsonl"))?;

    let best_sizes = ds.best_sizes();
    let weighting = &config.run.weighting;
    let weights = match weighting.mode {
        WeightingMode::Uniform => uniform_weights(best_sizes.len()),
        WeightingMode::Bucket => bucket_weights(&best_sizes)?,
        WeightingMode::Hedge => {
            let state = hedge_init(&best_sizes, weighting.eta)?;
            weights_from_state(&state, &best_sizes, weighting.weight_cap)?
        }
    };
    let examples = build_examples(&ds, &weights)?;
    let (params, report) = train(&examples, &config.run.train)?;
    params.save(&dir.out.join("policy.json"))?;
    pipeline::write_json(&dir.out.join("train_report.json"), &report)?;

    dir.log(&format!(
        "train: examples={} final_loss={} mean_ce={} mismatch={}",
        report.n_examples, report.final_loss, report.final_mean_ce, report.mismatch_rate
    ))?;
    Ok(format!(
        "trained on {} examples; final loss {:.4}, mismatch rate {:.4}",
        report.n_examples, report.final_loss, report.mismatch_rate
    ))
}

fn cmd_iterate(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let mut dir = RunDir::prepare(&cli.out)?;
    dir.snapshot(&config)?;

    let manifests = pipeline::run(&config.run, &dir.out)?;
    for m in &manifests {
        dir.log(&format!(
            "iterate: iteration={} best_sum={} policy_sum={} oracle_sum={} roster_oracle_sum={} improved={}",
            m.iteration,
            m.best_sum,
            m.policy_sum,
            m.oracle_sum,
            m.roster_oracle_sum,
            m.explored_improvements
        ))?;
    }
    let last = manifests.last().expect("at least one iteration");
    Ok(format!(
        "ran {} iterations; final policy size sum {}, oracle sum {}",
        manifests.len(),
        last.policy_sum,
        last.oracle_sum
    ))
}

fn cmd_eval(cli: &Cli) -> Result<String> {
    let config = load_config(cli)?;
    let mut dir = RunDir::prepare(&cli.out)?;
    dir.snapshot(&config)?;

    let section = config.eval.clone().unwrap_or_else(default_eval);
    let checkpoint = dir.out.join(&section.checkpoint);
    let params = PolicyParams::load(&checkpoint)
        .map_err(|e| Error::config(format!("cannot load {}: {e}", checkpoint.display())))?;

    let env = InlineSim::new(config.run.corpus.env.clone())?;
    let contexts = config.run.corpus.contexts();
    let (names, policies) = named_roster(&config.run);
    let named: Vec<(&str, &(dyn Policy + Sync))> = names
        .iter()
        .map(|n| n.as_str())
        .zip(policies.iter().map(|p| p.as_ref() as &(dyn Policy + Sync)))
        .collect();
    let report = regret(&env, &params, &named, &contexts)?;
    pipeline::write_json(&dir.out.join("regret.json"), &report)?;

    let policy_sum: f64 = contexts
        .iter()
        .map(|c| rollout(&env, &params, c).size)
        .sum();
    dir.log(&format!(
        "eval: checkpoint={} mean_regret={} mean_savings={} policy_sum={policy_sum}",
        section.checkpoint, report.mean_regret, report.mean_savings_vs_reference
    ))?;
    Ok(format!(
        "mean regret {:.4} over {} contexts; mean savings vs {} = {:.4}",
        report.mean_regret,
        contexts.len(),
        report.reference,
        report.mean_savings_vs_reference
    ))
}

fn cmd_fixtures(cli: &Cli) -> Result<String> {
    let mut dir = RunDir::prepare(&cli.out)?;
    // Fixtures are fully self-describing; a config is accepted but unused.
    let verdict = run_fixtures(&dir.out)?;
    pipeline::write_json(&dir.out.join("fixtures.json"), &verdict)?;
    dir.log(&format!(
        "fixtures: bandit_identical={} checkpoints_identical={} coverage_identical={}",
        verdict.bandit_datasets_identical,
        verdict.bandit_checkpoints_identical,
        verdict.coverage_datasets_identical
    ))?;
    let indistinguishable = verdict.bandit_datasets_identical
        && verdict.bandit_checkpoints_identical
        && verdict.coverage_datasets_identical;
    Ok(format!(
        "paired datasets {}; bandit regrets per table {:?} and {:?}; coverage best covered {:?} vs benchmark {:?}",
        if indistinguishable {
            "indistinguishable (byte-identical, identical checkpoints)"
        } else {
            "DIFFER (unexpected)"
        },
        verdict.bandit_regrets[0],
        verdict.bandit_regrets[1],
        verdict.coverage_best_covered,
        verdict.coverage_benchmark
    ))
}

fn cmd_report(cli: &Cli) -> Result<String> {
    let mut dir = RunDir::prepare(&cli.out)?;
    let csv = savings_report(&dir.out)?;
    let path = dir.out.join("report.csv");
    std::fs::write(&path, &csv)?;
    let rows = csv.trim_end().lines().count() - 1;
    dir.log(&format!("report: rows={rows}"))?;
    Ok(format!("wrote {rows} rows to {}", path.display()))
}

fn run(cli: &Cli) -> Result<String> {
    if cli.jobs == Some(0) {
        return Err(Error::usage("--jobs must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::config(format!("cannot size worker pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if let Some(jobs) = cli.jobs {
        if jobs > 1 {
            return Err(Error::usage(
                "--jobs > 1 requires a build with the parallel feature",
            ));
        }
    }

    match cli.command {
        Command::GenCorpus => cmd_gen_corpus(cli),
        Command::Collect => cmd_collect(cli),
        Command::Train => cmd_train(cli),
        Command::Iterate => cmd_iterate(cli),
        Command::Eval => cmd_eval(cli),
        Command::Fixtures => cmd_fixtures(cli),
        Command::Report => cmd_report(cli),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit codes don't match ours; usage problems are 1.
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
