use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use femda::bench::{
    emit_report, load_results, markdown_report, run, write_outputs, ExperimentConfig, ReportFormat,
};
use femda::kv::KeyValues;

/// Robust discriminant analysis benchmarks.
#[derive(Parser)]
#[command(name = "femda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic scenarios.
    Simulate(SimulateArgs),
    /// A real dataset with repeated stratified splits.
    Real(RealArgs),
    /// Rebuild a report from a results directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Flat key-value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated methods (QDA, t-QDA, GQDA, RGQDA, FEMDA) or `all`.
    #[arg(long)]
    methods: Option<String>,
    /// Contaminate a fraction of training points: `<fraction>:<lambda>`.
    #[arg(long)]
    contamination: Option<String>,
    /// Contamination sweep `<from>:<to>:<step>` at factor `--lambda`.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Contaminate the test split as well.
    #[arg(long)]
    contaminate_test: bool,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reps.csv, summary.csv and summary.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `<color>:<pGG>GG-<pT>T`, comma-separated, or `all` for the six benchmark scenarios.
    #[arg(long)]
    scenario: Option<String>,
    /// m = 10, K = 5, 5000 training and 20000 test points.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// `lo,hi` spectrum of the random dispersions.
    #[arg(long)]
    eig_range: Option<String>,
    /// Keep the cluster parameters of the first repetition for all repetitions.
    #[arg(long)]
    fixed_params: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RealArgs {
    /// CSV file; defaults to the file named by the schema.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Repetitions sharing one train/test split.
    #[arg(long)]
    resplit_every: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding reps.csv.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Where to write the report (defaults to the input directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn base_kv(config: &Option<PathBuf>) -> Result<KeyValues, Failure> {
    match config {
        Some(p) => KeyValues::from_file(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display()))),
        None => Ok(KeyValues::new()),
    }
}

fn apply_common(kv: &mut KeyValues, c: &Common) {
    if let Some(v) = &c.methods {
        kv.set("methods", v);
    }
    if let Some(v) = &c.contamination {
        kv.set("contamination", v);
    }
    if let Some(v) = &c.sweep {
        kv.set("sweep", v);
    }
    if let Some(v) = c.lambda {
        kv.set("lambda", v);
    }
    if c.contaminate_test {
        kv.set("contaminate_test", true);
    }
    if let Some(v) = c.reps {
        kv.set("reps", v);
    }
    if let Some(v) = c.seed {
        kv.set("seed", v);
    }
    if let Some(v) = &c.out {
        kv.set("out", v.display());
    }
}

fn simulate_kv(a: &SimulateArgs) -> Result<KeyValues, Failure> {
    let mut kv = base_kv(&a.common.config)?;
    kv.set("mode", "synthetic");
    if let Some(v) = &a.scenario {
        kv.set("scenario", v);
    }
    if a.full_scale {
        kv.set("full_scale", true);
    }
    for (key, v) in [("m", a.m), ("k", a.k), ("n_train", a.n_train), ("n_test", a.n_test)] {
        if let Some(v) = v {
            kv.set(key, v);
        }
    }
    if let Some(v) = &a.eig_range {
        kv.set("eig_range", v);
    }
    if a.fixed_params {
        kv.set("fixed_params", true);
    }
    apply_common(&mut kv, &a.common);
    Ok(kv)
}

fn real_kv(a: &RealArgs) -> Result<KeyValues, Failure> {
    let mut kv = base_kv(&a.common.config)?;
    kv.set("mode", "real");
    if let Some(v) = &a.data {
        kv.set("data", v.display());
    }
    if let Some(v) = &a.schema {
        kv.set("schema", v.display());
    }
    if let Some(v) = a.resplit_every {
        kv.set("resplit_every", v);
    }
    if let Some(v) = a.train_fraction {
        kv.set("train_fraction", v);
    }
    apply_common(&mut kv, &a.common);
    Ok(kv)
}

fn experiment(kv: KeyValues) -> Result<(), Failure> {
    let config = ExperimentConfig::from_kv(&kv).map_err(|e| Failure::Config(e.to_string()))?;
    let table = run(&config).map_err(|e| Failure::Runtime(e.to_string()))?;
    for r in table.records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {} {} (data seed {}): {}",
            r.scenario,
            r.method,
            r.data_seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    for r in table.rows.iter().filter(|r| r.convergence_failures > 0) {
        eprintln!(
            "note: {} {} hit the iteration cap in {} class fits",
            r.scenario, r.method, r.convergence_failures
        );
    }
    print!("{}", markdown_report(&table.rows));
    if let Some(dir) = &config.output_dir {
        write_outputs(&table, &config, dir).map_err(|e| Failure::Runtime(e.to_string()))?;
        eprintln!("results written to {}", dir.display());
    }
    if table.rows.iter().all(|r| r.repetitions == 0) {
        return Err(Failure::Runtime("every repetition failed".into()));
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), Failure> {
    let format: ReportFormat = a.format.parse().map_err(|e: femda::FemdaError| Failure::Config(e.to_string()))?;
    let table = load_results(&a.input).map_err(|e| Failure::Runtime(e.to_string()))?;
    let dir = a.out.as_ref().unwrap_or(&a.input);
    let path = emit_report(&table, format, dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    if format == ReportFormat::Markdown {
        print!("{}", markdown_report(&table.rows));
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate_kv(a).and_then(experiment),
        Command::Real(a) => real_kv(a).and_then(experiment),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
