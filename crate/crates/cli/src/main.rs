mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use persumm_core::rewards::PremiseSet;
use persumm_core::Weights;

use config::{parse_gammas, set, PolicyName, RunConfig};

#[derive(Parser)]
#[command(name = "persumm", version, about = "Perspective summaries for community question answering threads")]
struct Cli {
    /// Flat JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for every random stream (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep threads that pass a length/answer-count policy.
    Filter(FilterArgs),
    /// Build silver examples: relevance gating, clustering, medoid bullets.
    Augment(AugmentArgs),
    /// Corpus statistics for (input, summary) pairs.
    Stats(StatsArgs),
    /// NLI and semantic-area rewards for summaries against their inputs.
    RewardEval(RewardEvalArgs),
    /// Train the toy extractive policy with the mixed self-critical objective.
    RlDemo(RlDemoArgs),
    /// Precompute a score fixture from a scoring backend.
    FixtureGen(FixtureGenArgs),
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, value_enum)]
    policy: Option<PolicyName>,
    /// Threads as JSONL or a StackExchange Posts.xml.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// File listing allowed forums, one per line.
    #[arg(long, value_name = "PATH")]
    forums: Option<PathBuf>,
}

#[derive(Args)]
struct Backends {
    /// Relevance and entailment source: fixture path, http(s) URL or `lexical[:DIM]`.
    #[arg(long)]
    scores: Option<String>,
    /// Embedding source: fixture path, http(s) URL or `lexical[:DIM]`.
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    #[command(flatten)]
    backends: Backends,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// JSONL of {"input": ..., "summary": ...}.
    #[arg(long, value_name = "PATH")]
    pairs: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PremiseArg {
    All,
    Relevant,
}

#[derive(Args)]
struct RewardEvalArgs {
    /// JSONL with a `summary` (or `bullets`) field: a text or a sentence list.
    #[arg(long, value_name = "PATH")]
    summaries: Option<PathBuf>,
    /// JSONL with an `input` field and, for relevant premises, a `question`.
    #[arg(long, value_name = "PATH")]
    inputs: Option<PathBuf>,
    #[command(flatten)]
    backends: Backends,
    #[arg(long, value_enum)]
    premises: Option<PremiseArg>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RlDemoArgs {
    #[arg(long, value_name = "PATH")]
    silver: Option<PathBuf>,
    #[command(flatten)]
    backends: Backends,
    #[arg(long)]
    steps: Option<usize>,
    /// Teacher-forced steps before the mixed objective starts.
    #[arg(long)]
    warmup: Option<usize>,
    /// gamma_rl,gamma_ml
    #[arg(long, value_parser = parse_gammas)]
    gammas: Option<Weights>,
    #[arg(long)]
    lr: Option<f64>,
    /// Tasks per minibatch (default: all).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureGenArgs {
    /// Texts to embed, one per line.
    #[arg(long, value_name = "PATH")]
    texts: Option<PathBuf>,
    /// JSONL of ["premise", "claim"] pairs to score for entailment.
    #[arg(long, value_name = "PATH")]
    pairs: Option<PathBuf>,
    /// JSONL of {"question": ..., "sentences": [...]}.
    #[arg(long, value_name = "PATH")]
    relevance: Option<PathBuf>,
    /// Thread corpus; adds its sentences, within-thread pairs and question relevance.
    #[arg(long, value_name = "PATH")]
    threads: Option<PathBuf>,
    /// Scoring service URL or `lexical[:DIM]`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

fn apply_backends(cfg: &mut RunConfig, b: Backends) {
    set(&mut cfg.scores, b.scores);
    set(&mut cfg.embeddings, b.embeddings);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::load(cli.config.as_deref())?;
    set(&mut cfg.seed, cli.seed);
    cfg.seed.get_or_insert(0);
    let handler: fn(&mut RunConfig) -> anyhow::Result<()> = match cli.command {
        Command::Filter(a) => {
            set(&mut cfg.policy, a.policy);
            if a.policy.is_some() {
                // A named policy on the command line beats constants from the file.
                cfg.filter = None;
            }
            set(&mut cfg.input, a.input);
            set(&mut cfg.output, a.output);
            set(&mut cfg.report, a.report);
            set(&mut cfg.forums, a.forums);
            commands::filter::run
        }
        Command::Augment(a) => {
            set(&mut cfg.input, a.input);
            apply_backends(&mut cfg, a.backends);
            set(&mut cfg.cutoff, a.cutoff);
            set(&mut cfg.threshold, a.threshold);
            set(&mut cfg.output, a.output);
            set(&mut cfg.report, a.report);
            set(&mut cfg.jobs, a.jobs);
            commands::augment::run
        }
        Command::Stats(a) => {
            set(&mut cfg.pairs, a.pairs);
            set(&mut cfg.report, a.report);
            commands::stats::run
        }
        Command::RewardEval(a) => {
            set(&mut cfg.summaries, a.summaries);
            set(&mut cfg.inputs, a.inputs);
            apply_backends(&mut cfg, a.backends);
            set(
                &mut cfg.premises,
                a.premises.map(|p| match p {
                    PremiseArg::All => PremiseSet::All,
                    PremiseArg::Relevant => PremiseSet::RelevantOnly,
                }),
            );
            set(&mut cfg.threshold, a.threshold);
            set(&mut cfg.report, a.report);
            commands::reward_eval::run
        }
        Command::RlDemo(a) => {
            set(&mut cfg.silver, a.silver);
            apply_backends(&mut cfg, a.backends);
            set(&mut cfg.steps, a.steps);
            set(&mut cfg.warmup, a.warmup);
            set(&mut cfg.gammas, a.gammas);
            set(&mut cfg.lr, a.lr);
            set(&mut cfg.batch, a.batch);
            set(&mut cfg.report, a.report);
            commands::rl_demo::run
        }
        Command::FixtureGen(a) => {
            set(&mut cfg.texts, a.texts);
            set(&mut cfg.pairs, a.pairs);
            set(&mut cfg.relevance, a.relevance);
            set(&mut cfg.threads, a.threads);
            set(&mut cfg.endpoint, a.endpoint);
            set(&mut cfg.output, a.output);
            set(&mut cfg.report, a.report);
            commands::fixture_gen::run
        }
    };
    cfg.check_distinct_paths()?;
    handler(&mut cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version exit 0, usage errors exit 2.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
