//! `fedstream` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fedstream::ingest::{self, TARGET, TRAINING_MONTHS};
use fedstream::markov::{self, FiniteKernel};
use fedstream::theory::{self, ProblemConstants};

use fedstream_cli::config::{self, ExperimentConfig, ExperimentKind};
use fedstream_cli::{report, run};

#[derive(Parser)]
#[command(name = "fedstream", version, about = "Federated optimization over Markovian data streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic sweep.
    SynthRun(RunArgs),
    /// Run a sweep on the air-quality stations.
    AirRun {
        #[command(flatten)]
        run: RunArgs,
        /// Directory of station CSV files; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Mixing diagnostics of a chain and of M independent copies.
    AnalyzeChain(ChainArgs),
    /// Bounds, step-size caps and required K, T.
    Theory(TheoryArgs),
    /// Preprocess station files into normalized CSV plus a JSON sidecar.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize trajectory files or run directories.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as `0,1,2` or `0..10`; overrides the config.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "chain")]
struct ChainSource {
    /// Two-state chain flipping with probability P.
    #[arg(long, value_name = "P")]
    two_state: Option<f64>,
    /// Kernel CSV, one row per line.
    #[arg(long, value_name = "CSV")]
    kernel: Option<PathBuf>,
}

#[derive(Args)]
struct ChainArgs {
    #[command(flatten)]
    source: ChainSource,
    /// Number of independent copies for the product chain.
    #[arg(long, default_value_t = 1)]
    clients: usize,
    /// Depth of the pseudo-spectral-gap maximization.
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long = "L")]
    l: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    c_inf: f64,
    #[arg(long)]
    nu_ps: f64,
    #[arg(long)]
    delta0: f64,
    #[arg(long)]
    g0: f64,
    #[arg(long = "M")]
    m: usize,
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::SynthRun(args) => run_sweep(&args, ExperimentKind::Synth, None),
        Command::AirRun { run, data } => run_sweep(&run, ExperimentKind::Air, data),
        Command::AnalyzeChain(args) => analyze_chain(&args).map(|()| ExitCode::SUCCESS),
        Command::Theory(args) => theory_table(&args).map(|()| ExitCode::SUCCESS),
        Command::Ingest { data, out } => ingest_dir(&data, &out).map(|()| ExitCode::SUCCESS),
        Command::Report { inputs, out } => report_inputs(&inputs, out.as_deref()).map(|()| ExitCode::SUCCESS),
    }
}

fn run_sweep(args: &RunArgs, kind: ExperimentKind, data: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    ensure!(cfg.experiment == kind, "{} holds a {:?} experiment", args.config.display(), cfg.experiment);
    if let Some(s) = &args.seeds {
        cfg.seeds = config::parse_seeds(s)?;
    }
    if data.is_some() {
        cfg.data = data;
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).context("no output directory (--out or \"out\" in the config)")?;
    let outcome = run::execute(&cfg, &out)?;
    print!("{}", report::text_table(&outcome.summaries));
    print!("{}", report::step_size_tables(&outcome.summaries));
    println!("{} runs written to {}", outcome.runs, out.display());
    if outcome.failures > 0 {
        eprintln!("{} runs failed; see {}", outcome.failures, out.join(report::FAILURES).display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze_chain(args: &ChainArgs) -> Result<()> {
    ensure!(args.clients >= 1, "--clients must be at least 1");
    let kernel = match (&args.source.two_state, &args.source.kernel) {
        (Some(p), _) => markov::two_state(*p)?,
        (_, Some(path)) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            FiniteKernel::from_csv(file).with_context(|| format!("reading kernel {}", path.display()))?
        }
        _ => bail!("give --two-state or --kernel"),
    };
    let diag = markov::diagnose(&kernel, args.k_max)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    println!("states              {}", kernel.n());
    println!("stationary          {}", fmt(diag.stationary.probs()));
    println!("mixing_time         {}", diag.mixing_time);
    println!("pseudo_spectral_gap {:.6}", diag.pseudo_spectral_gap);
    println!("c_infinity          {:.6}", diag.c_infinity);
    if args.clients > 1 {
        let copies = vec![kernel; args.clients];
        let product = markov::product_chain_constants(&copies, args.k_max)?;
        println!("clients             {}", args.clients);
        println!("product_mixing      {}", product.mixing_bound);
        println!("product_gap         {:.6}", product.pseudo_spectral_gap);
        println!("product_c_infinity  {:.6}", product.c_infinity);
    }
    Ok(())
}

fn theory_table(a: &TheoryArgs) -> Result<()> {
    let c = ProblemConstants {
        l: a.l,
        sigma: a.sigma,
        theta: a.theta,
        delta: a.delta,
        c_inf: a.c_inf,
        nu_ps: a.nu_ps,
        delta0: a.delta0,
        g0: a.g0,
        m: a.m,
        k: a.k,
        t: a.t,
        beta: a.beta,
        eps: a.eps,
    };
    let rows = theory::theory_table(&c)?;
    match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Text => {
            let cell = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.4e}"));
            let mut table = vec![["algorithm", "bound", "gamma", "eta", "K_required", "T_required", "eta_cap"]
                .map(String::from)
                .to_vec()];
            table.extend(rows.iter().map(|r| {
                vec![
                    r.algorithm.clone(),
                    cell(r.bound),
                    cell(r.gamma),
                    cell(r.eta),
                    r.k_required.to_string(),
                    r.t_required.to_string(),
                    cell(r.eta_cap),
                ]
            }));
            print!("{}", report::aligned(&table));
        }
    }
    Ok(())
}

fn ingest_dir(data: &Path, out: &Path) -> Result<()> {
    let series = ingest::load_dir(data).with_context(|| format!("loading stations from {}", data.display()))?;
    let prepared: Vec<_> = series
        .iter()
        .map(|s| ingest::prepare_station(s, TRAINING_MONTHS).with_context(|| format!("preparing station {}", s.station)))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out)?;
    let mut table = vec![["station", "rows", "filled", "acf_1", "acf_24"].map(String::from).to_vec()];
    for (dataset, sidecar) in &prepared {
        let csv_path = out.join(format!("{}.csv", dataset.station));
        dataset.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv_path)?))?;
        std::fs::write(out.join(format!("{}.json", dataset.station)), serde_json::to_string_pretty(sidecar)? + "\n")?;
        let acf = ingest::autocorrelation(&dataset.targets, 24)
            .with_context(|| format!("{} autocorrelation of {TARGET}", dataset.station))?;
        table.push(vec![
            dataset.station.clone(),
            dataset.len().to_string(),
            sidecar.filled_cells.to_string(),
            format!("{:.3}", acf[1]),
            format!("{:.3}", acf[24]),
        ]);
    }
    print!("{}", report::aligned(&table));
    Ok(())
}

fn report_inputs(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let groups = report::summarize_inputs(&report::collect_inputs(inputs)?)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        report::write_summary(std::fs::File::create(dir.join(report::SUMMARY))?, &groups)?;
    }
    print!("{}", report::text_table(&groups));
    print!("{}", report::step_size_tables(&groups));
    Ok(())
}
