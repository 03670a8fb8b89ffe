mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attrsearch_core::dataset::Split;
use attrsearch_core::embedding::Variant;
use attrsearch_core::session::Strategy;

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "attrsearch",
    version,
    about = "Attribute-guided interactive image search"
)]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, short = 'c', global = true, env = "ATTRSEARCH_CONFIG")]
    config: Option<PathBuf>,

    /// Log filter (e.g. `info`, `attrsearch_core=debug`).
    #[arg(long, global = true, env = "ATTRSEARCH_LOG", default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled dataset.
    GenData(GenData),
    /// Train an embedding and fit its Platt calibration.
    TrainEmb(TrainEmb),
    /// Held-out triplet satisfaction per attribute for one or more models.
    EvalEmb(EvalEmb),
    /// Train the Q-network re-ranker.
    TrainDqn(TrainDqn),
    /// Run one simulated session and write its log.
    Simulate(Simulate),
    /// Compare strategies over sampled query/target pairs.
    Bench(Bench),
    /// Run the HTTP service.
    Serve(Serve),
    /// Print the resolved configuration as TOML.
    Config,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Dataset file.
    #[arg(long, env = "ATTRSEARCH_DATA")]
    data: PathBuf,
    /// Embedding checkpoint; its Platt sidecar is picked up when present.
    #[arg(long, env = "ATTRSEARCH_MODEL")]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Feature noise σ.
    #[arg(long)]
    noise: Option<f64>,
    /// Probability that attributes after the first are labelled.
    #[arg(long)]
    label_density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainEmb {
    #[arg(long, env = "ATTRSEARCH_DATA")]
    data: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// csn, constrained or global.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Training triplets per attribute.
    #[arg(long)]
    triplets: Option<usize>,
    #[arg(long)]
    platt_pairs: Option<usize>,
    /// Seeds initialisation and every sampled set.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalEmb {
    #[arg(long, env = "ATTRSEARCH_DATA")]
    data: PathBuf,
    /// Repeat to compare models in one table.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Evaluation triplets per attribute.
    #[arg(long)]
    triplets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the rates as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainDqn {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    /// Training query/target pairs per attribute.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Simulate {
    #[command(flatten)]
    inputs: Inputs,
    /// Q-network checkpoint, needed for the dqn strategy.
    #[arg(long, env = "ATTRSEARCH_DQN")]
    dqn: Option<PathBuf>,
    #[arg(long, default_value = "fcs")]
    strategy: Strategy,
    /// Query item id; with --target. Otherwise one pair is sampled.
    #[arg(long, requires = "target")]
    query: Option<String>,
    #[arg(long, requires = "query")]
    target: Option<String>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Session log (JSON lines); stdout when omitted.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Bench {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, env = "ATTRSEARCH_DQN")]
    dqn: Option<PathBuf>,
    /// Comma-separated, e.g. `nn,fcs,eer,dqn`.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    /// Add a row for a freshly initialised Q-network.
    #[arg(long)]
    untrained_dqn: bool,
    /// Test pairs per attribute.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    seed: Option<u64>,
    /// Receives report.json, curves.csv and logs/.
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct Serve {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, env = "ATTRSEARCH_DQN")]
    dqn: Option<PathBuf>,
    #[arg(long, env = "ATTRSEARCH_ADDR")]
    addr: Option<SocketAddr>,
    /// Default strategy for new sessions.
    #[arg(long, env = "ATTRSEARCH_STRATEGY")]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Restrict sessions to one split.
    #[arg(long)]
    split: Option<Split>,
    /// Session logs are written here and replayed on start.
    #[arg(long, env = "ATTRSEARCH_LOG_DIR")]
    log_dir: Option<PathBuf>,
    /// Static UI served outside /api.
    #[arg(long, env = "ATTRSEARCH_UI_DIR")]
    ui_dir: Option<PathBuf>,
    /// Per-item image URL with `{id}` placeholder.
    #[arg(long, env = "ATTRSEARCH_ASSET_URL")]
    asset_url: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => {
            let d = &mut cfg.data;
            set(&mut d.n_items, a.items);
            set(&mut d.dim, a.dim);
            set(&mut d.noise_sigma, a.noise);
            set(&mut d.label_density, a.label_density);
            set(&mut d.seed, a.seed);
            commands::gen_data(&cfg.resolve()?, &a.out)
        }
        Command::TrainEmb(a) => {
            cfg.variant = a.variant.or(cfg.variant);
            set(&mut cfg.embedding.epochs, a.epochs);
            set(&mut cfg.embedding.embedding_dim, a.embedding_dim);
            set(&mut cfg.sampling.triplets_per_attribute, a.triplets);
            set(&mut cfg.sampling.platt_pairs_per_attribute, a.platt_pairs);
            if let Some(s) = a.seed {
                cfg.embedding.seed = s;
                cfg.sampling.seed = s;
            }
            commands::train_emb(&cfg.resolve()?, &a.data, &a.out)
        }
        Command::EvalEmb(a) => {
            set(&mut cfg.sampling.test_triplets_per_attribute, a.triplets);
            set(&mut cfg.sampling.seed, a.seed);
            commands::eval_emb(
                &cfg.resolve()?,
                &a.data,
                &a.models,
                a.split,
                a.json.as_deref(),
            )
        }
        Command::TrainDqn(a) => {
            set(&mut cfg.dqn.episodes, a.episodes);
            set(&mut cfg.sampling.train_pairs_per_attribute, a.pairs);
            if let Some(s) = a.seed {
                cfg.dqn.seed = s;
                cfg.sampling.seed = s;
            }
            commands::train_dqn(&cfg.resolve()?, &a.inputs.data, &a.inputs.model, &a.out)
        }
        Command::Simulate(a) => {
            set(&mut cfg.bench.max_steps, a.max_steps);
            set(&mut cfg.sampling.seed, a.seed);
            let pair = a.query.zip(a.target);
            let sim = commands::SimulateArgs {
                data: &a.inputs.data,
                model: &a.inputs.model,
                dqn: a.dqn.as_deref(),
                strategy: a.strategy,
                pair,
                split: a.split,
                log: a.log.as_deref(),
            };
            commands::simulate(&cfg.resolve()?, &sim)
        }
        Command::Bench(a) => {
            let b = &mut cfg.bench;
            set(&mut b.strategies, a.strategies);
            b.untrained_dqn |= a.untrained_dqn;
            set(&mut b.max_steps, a.max_steps);
            set(&mut b.split, a.split);
            set(&mut cfg.sampling.test_pairs_per_attribute, a.pairs);
            set(&mut cfg.sampling.seed, a.seed);
            commands::bench(
                &cfg.resolve()?,
                &a.inputs.data,
                &a.inputs.model,
                a.dqn.as_deref(),
                &a.out_dir,
            )
        }
        Command::Serve(a) => {
            let s = &mut cfg.serve;
            set(&mut s.addr, a.addr.map(|a| a.to_string()));
            set(&mut s.strategy, a.strategy);
            set(&mut s.max_steps, a.max_steps);
            s.split = a.split.or(s.split);
            s.log_dir = a.log_dir.or(s.log_dir.take());
            s.ui_dir = a.ui_dir.or(s.ui_dir.take());
            s.asset_url = a.asset_url.or(s.asset_url.take());
            commands::serve(
                &cfg.resolve()?,
                &a.inputs.data,
                &a.inputs.model,
                a.dqn.as_deref(),
            )
        }
        Command::Config => {
            let text =
                toml::to_string(&cfg.resolve()?).map_err(|e| CliError::Failed(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
