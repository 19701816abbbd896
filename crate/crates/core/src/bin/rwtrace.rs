use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rwtrace::config::RunConfig;
use rwtrace::pipeline::{Stage, StageReport, Workspace};
use rwtrace::synth::{generate, ScenarioConfig};
use rwtrace::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "rwtrace", version, about = "Trace ransomware payments through a UTXO transaction graph")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Opts {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exposure horizon for analytics and validation.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    hops: Option<u8>,
    /// Criterion 2 of the origin classifier: cumulative receipts in BTC.
    #[arg(long, global = true)]
    min_btc: Option<f64>,
    /// Criterion 3 of the origin classifier: maximum incoming transactions.
    #[arg(long, global = true)]
    max_incoming: Option<usize>,
    /// Criterion 3 of the expanded classifier: low-risk origin share that must be exceeded.
    #[arg(long, global = true)]
    lowrisk_share: Option<f64>,
    /// Share of inflow or exposure that counts as nontrivial.
    #[arg(long, global = true)]
    nontrivial_share: Option<f64>,
    /// Also merge fresh change outputs into their spender's cluster.
    #[arg(long, global = true)]
    change_clustering: bool,
    /// Compare exposure by destination cluster in the overlap matrix.
    #[arg(long, global = true)]
    cluster_exposure: bool,
    /// Compare absolute amounts instead of fractions in the overlap matrix.
    #[arg(long, global = true)]
    absolute_overlap: bool,
    /// Emit the overlap matrix normalized per row.
    #[arg(long, global = true)]
    row_normalized: bool,
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    #[arg(long, global = true)]
    prices: Option<PathBuf>,
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    independent_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    seeds: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and check the chain; export canonical transactions and address totals.
    Ingest,
    /// Multi-input clustering.
    Cluster,
    /// Rank source clusters of the seed payments.
    RankSources,
    /// Find payments funded by the negotiator clusters.
    DetectOrigin,
    /// Find payments linked to known payments through shared pools.
    DetectExpanded,
    /// Detect operator/affiliate splits.
    Splits,
    /// Family labeling, time series, overlap and split curves.
    Analyze,
    /// Check detected payments against independent labels.
    Validate,
    /// Run every stage in order.
    Pipeline {
        /// Skip stages whose outputs already exist.
        #[arg(long)]
        resume: bool,
    },
    /// Write a synthetic scenario with a ground-truth manifest.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::PaperShape)]
        preset: Preset,
        /// Seed payments for the small preset.
        #[arg(long, default_value_t = 40)]
        payments: usize,
        /// JSON scenario file; overrides the preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    PaperShape,
    Small,
    Empty,
}

fn run_config(opts: &Opts) -> Result<RunConfig> {
    let mut c = match &opts.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    let cwd = Path::new("");
    let overrides: [(&str, Option<String>); 13] = [
        ("chain", opts.chain.as_ref().map(|p| p.display().to_string())),
        ("prices", opts.prices.as_ref().map(|p| p.display().to_string())),
        ("labels", opts.labels.as_ref().map(|p| p.display().to_string())),
        ("independent_labels", opts.independent_labels.as_ref().map(|p| p.display().to_string())),
        ("seeds", opts.seeds.as_ref().map(|p| p.display().to_string())),
        ("out", opts.out.as_ref().map(|p| p.display().to_string())),
        ("hops", opts.hops.map(|h| h.to_string())),
        ("min_btc", opts.min_btc.map(|v| v.to_string())),
        ("max_incoming", opts.max_incoming.map(|v| v.to_string())),
        ("lowrisk_share", opts.lowrisk_share.map(|v| v.to_string())),
        ("nontrivial_share", opts.nontrivial_share.map(|v| v.to_string())),
        ("threads", opts.threads.map(|v| v.to_string())),
        ("change_clustering", opts.change_clustering.then(|| "true".to_owned())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            c.set(key, &v, cwd).map_err(|m| Error::Config(format!("--{}: {m}", key.replace('_', "-"))))?;
        }
    }
    c.overlap.by_cluster |= opts.cluster_exposure;
    c.overlap.absolute |= opts.absolute_overlap;
    c.row_normalized |= opts.row_normalized;
    c.validate()?;
    Ok(c)
}

fn print_report(stage: Stage, report: &StageReport) {
    if report.cached {
        println!("== {stage} (cached)");
    } else {
        println!("== {stage}");
    }
    let width = report.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &report.summary {
        println!("  {k:<width$}  {v}");
    }
    for f in &report.files {
        println!("  -> {}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = run_config(&cli.opts)?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let stage = match cli.command {
        Command::Synth {
            seed,
            preset,
            payments,
            scenario,
        } => {
            let scenario = match scenario {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
                    serde_json::from_str(&text)?
                }
                None => match preset {
                    Preset::PaperShape => ScenarioConfig::paper_shape(seed),
                    Preset::Small => ScenarioConfig::small(seed, payments),
                    Preset::Empty => ScenarioConfig::empty(seed),
                },
            };
            let out = generate(&scenario)?;
            out.write_to_dir(&config.out)?;
            println!("== synth");
            println!("  transactions  {}", out.manifest.transactions);
            println!("  addresses     {}", out.manifest.addresses);
            println!("  payments      {}", out.manifest.payments.len());
            println!("  -> {}", config.out.display());
            return Ok(());
        }
        Command::Pipeline { resume } => {
            config.resume |= resume;
            let ws = Workspace::new(config);
            for (stage, report) in ws.run_all()? {
                print_report(stage, &report);
            }
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::Cluster => Stage::Cluster,
        Command::RankSources => Stage::RankSources,
        Command::DetectOrigin => Stage::DetectOrigin,
        Command::DetectExpanded => Stage::DetectExpanded,
        Command::Splits => Stage::Splits,
        Command::Analyze => Stage::Analyze,
        Command::Validate => Stage::Validate,
    };
    let ws = Workspace::new(config);
    let report = ws.run(stage)?;
    print_report(stage, &report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
