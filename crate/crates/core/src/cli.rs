//! Command-line entry point: `run` for single experiments, `table` for one
//! scenario's four-regime comparison, `sweep` for the cluster-count curve,
//! and `partition-audit` for the partition manifest.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 1 on runtime errors.
//! All file output stays inside the `--out` directory. A flat `key=value`
//! config file can seed `run`; explicit flags win over file values.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::experiment::{
    build_clients, cluster_sweep, run_experiment, ExperimentConfig, ExperimentOutput, Regime,
};
use crate::heterogeneity::{partition_manifest, ScenarioKind};
use crate::report::{
    render_assignment_csv, render_results_csv, render_results_markdown, render_rounds_csv,
    render_sweep_csv, render_trace_csv, write_report, write_sweep,
    ReportFormat,
};

#[derive(Parser)]
#[command(
    name = "fedclave",
    version,
    about = "Clustered federated learning simulator with seeded, reproducible experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (regime x dataset x scenario).
    Run(RunArgs),
    /// Run all four regimes for one scenario, reproducing a result table.
    Table(TableArgs),
    /// Sweep the cluster count k for the server-side regime.
    Sweep(SweepArgs),
    /// Print and save the client partition manifest.
    PartitionAudit(AuditArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Number of simulated clients.
    #[arg(long)]
    clients: Option<usize>,
    /// Cluster count; defaults to the scenario's class count.
    #[arg(long)]
    k: Option<usize>,
    /// Federated round budget.
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size.
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Global FedAvg rounds before one-shot clustering (server regime).
    #[arg(long = "warmup-rounds")]
    warmup_rounds: Option<usize>,
    /// Run seed; echoed into every output row.
    #[arg(long)]
    seed: Option<u64>,
    /// Independent repeats with derived seeds.
    #[arg(long)]
    repeats: Option<usize>,
    /// Uniform shrink factor for clients/samples/rounds, in (0, 1].
    #[arg(long)]
    scale: Option<f64>,
    /// Directory holding <dataset>/ IDX files.
    #[arg(long = "data-root", env = "FEDCLAVE_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Output directory; all files are written beneath it.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Report format: csv | markdown-table | svg-plot.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads for parallel client training.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// First-round assignment for the client regime: random | warm-start.
    #[arg(long = "init-mode")]
    init_mode: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Training regime: fl | oracle | client | server.
    #[arg(long)]
    regime: Option<String>,
    /// Dataset: mnist | fashion-mnist | kmnist | synthetic.
    #[arg(long)]
    dataset: Option<String>,
    /// Heterogeneity scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TableArgs {
    /// Scenario to reproduce.
    scenario: String,
    /// Dataset(s); repeat the flag for several.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset to sweep on.
    #[arg(long)]
    dataset: Option<String>,
    /// Scenario to sweep on.
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated cluster counts.
    #[arg(long = "k-values", default_value = "1,2,4,6,8,10,12")]
    k_values: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AuditArgs {
    /// Dataset to partition.
    #[arg(long)]
    dataset: Option<String>,
    /// Heterogeneity scenario.
    #[arg(long)]
    scenario: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

fn apply_config_line(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    let bad = |reason: String| Error::InvalidConfig {
        field: key.to_string(),
        reason,
    };
    match key {
        "dataset" => cfg.dataset = value.parse()?,
        "scenario" => cfg.scenario = value.parse()?,
        "regime" => cfg.regime = value.parse()?,
        "n_clients" => cfg.n_clients = value.parse().map_err(|e| bad(format!("{e}")))?,
        "per_label" => cfg.per_label = value.parse().map_err(|e| bad(format!("{e}")))?,
        "test_per_label" => cfg.test_per_label = value.parse().map_err(|e| bad(format!("{e}")))?,
        "k" => cfg.k = Some(value.parse().map_err(|e| bad(format!("{e}")))?),
        "rounds" => cfg.rounds = value.parse().map_err(|e| bad(format!("{e}")))?,
        "epochs" => cfg.epochs = value.parse().map_err(|e| bad(format!("{e}")))?,
        "oracle_epochs" => cfg.oracle_epochs = value.parse().map_err(|e| bad(format!("{e}")))?,
        "lr" => cfg.lr = value.parse().map_err(|e| bad(format!("{e}")))?,
        "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(format!("{e}")))?,
        "warmup_rounds" => cfg.warmup_rounds = value.parse().map_err(|e| bad(format!("{e}")))?,
        "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
        "repeats" => cfg.repeats = value.parse().map_err(|e| bad(format!("{e}")))?,
        "scale" => cfg.scale = value.parse().map_err(|e| bad(format!("{e}")))?,
        "init_mode" => cfg.init_mode = value.parse()?,
        "skew_retain" => cfg.skew_retain = value.parse().map_err(|e| bad(format!("{e}")))?,
        "data_root" => cfg.data_root = Some(PathBuf::from(value)),
        other => {
            return Err(Error::InvalidConfig {
                field: other.to_string(),
                reason: "unknown config key".to_string(),
            })
        }
    }
    Ok(())
}

fn load_config_file(cfg: &mut ExperimentConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig {
                field: "config".to_string(),
                reason: format!("expected key=value, got `{line}`"),
            });
        };
        apply_config_line(cfg, key.trim(), value.trim())?;
    }
    Ok(())
}

fn apply_common(cfg: &mut ExperimentConfig, common: &CommonArgs) -> Result<()> {
    if let Some(v) = common.clients {
        cfg.n_clients = v;
    }
    if let Some(v) = common.k {
        cfg.k = Some(v);
    }
    if let Some(v) = common.rounds {
        cfg.rounds = v;
    }
    if let Some(v) = common.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = common.lr {
        cfg.lr = v;
    }
    if let Some(v) = common.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = common.warmup_rounds {
        cfg.warmup_rounds = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = common.scale {
        cfg.scale = v;
    }
    if let Some(v) = &common.data_root {
        cfg.data_root = Some(v.clone());
    }
    if let Some(v) = &common.init_mode {
        cfg.init_mode = v.parse()?;
    }
    Ok(())
}

fn parse_k_values(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|e| Error::InvalidConfig {
                field: "k-values".to_string(),
                reason: format!("{e}"),
            })
        })
        .collect()
}

fn with_worker_pool<T>(jobs: usize, body: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    if jobs == 0 {
        return Err(Error::config("jobs", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", format!("{e}")))?;
    pool.install(body)
}

fn write_artifacts(output: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    let multi = output.artifacts.len() > 1;
    for art in &output.artifacts {
        let suffix = if multi {
            format!("_{}", art.seed)
        } else {
            String::new()
        };
        if !art.rounds.is_empty() {
            std::fs::write(
                out_dir.join(format!("rounds{suffix}.csv")),
                render_rounds_csv(&art.rounds),
            )?;
        }
        if let Some(assignment) = &art.assignment {
            std::fs::write(
                out_dir.join(format!("assignment{suffix}.csv")),
                render_assignment_csv(assignment),
            )?;
        }
        if let Some(trace) = &art.trace {
            std::fs::write(
                out_dir.join(format!("ifca_trace{suffix}.csv")),
                render_trace_csv(trace),
            )?;
        }
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        load_config_file(&mut cfg, path)?;
    }
    if let Some(v) = &args.regime {
        cfg.regime = v.parse()?;
    }
    if let Some(v) = &args.dataset {
        cfg.dataset = v.parse()?;
    }
    if let Some(v) = &args.scenario {
        cfg.scenario = v.parse()?;
    }
    apply_common(&mut cfg, &args.common)?;
    let format: ReportFormat = args.common.format.parse()?;
    cfg.validate()?;

    let output = with_worker_pool(args.common.jobs, || run_experiment(&cfg))?;
    std::fs::create_dir_all(&args.common.out)?;
    let results_path = args
        .common
        .out
        .join(format!("results.{}", format.extension()));
    write_report(&output.rows, &results_path, format)?;
    write_artifacts(&output, &args.common.out)?;
    print!("{}", render_results_csv(&output.rows)?);
    println!("wrote {}", results_path.display());
    Ok(())
}

fn cmd_table(args: &TableArgs) -> Result<()> {
    let scenario: ScenarioKind = args.scenario.parse()?;
    let datasets: Vec<DatasetName> = if args.datasets.is_empty() {
        vec![DatasetName::Synthetic]
    } else {
        args.datasets
            .iter()
            .map(|d| d.parse())
            .collect::<Result<_>>()?
    };
    let mut base = ExperimentConfig {
        scenario,
        ..ExperimentConfig::default()
    };
    apply_common(&mut base, &args.common)?;
    let format: ReportFormat = args.common.format.parse()?;
    base.validate()?;

    let rows = with_worker_pool(args.common.jobs, || {
        let mut rows = Vec::new();
        for &dataset in &datasets {
            for regime in Regime::ALL {
                let cfg = ExperimentConfig {
                    dataset,
                    regime,
                    ..base.clone()
                };
                rows.extend(run_experiment(&cfg)?.rows);
            }
        }
        Ok(rows)
    })?;
    std::fs::create_dir_all(&args.common.out)?;
    let path = args
        .common
        .out
        .join(format!("table_{scenario}.{}", format.extension()));
    write_report(&rows, &path, format)?;
    print!("{}", render_results_markdown(&rows)?);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let k_values = parse_k_values(&args.k_values)?;
    let mut cfg = ExperimentConfig {
        regime: Regime::Server,
        dataset: DatasetName::Mnist,
        scenario: ScenarioKind::ConceptShiftLabels,
        ..ExperimentConfig::default()
    };
    if let Some(v) = &args.dataset {
        cfg.dataset = v.parse()?;
    }
    if let Some(v) = &args.scenario {
        cfg.scenario = v.parse()?;
    }
    apply_common(&mut cfg, &args.common)?;
    let format: ReportFormat = args.common.format.parse()?;
    cfg.validate()?;

    let curve = with_worker_pool(args.common.jobs, || cluster_sweep(&cfg, &k_values))?;
    std::fs::create_dir_all(&args.common.out)?;
    let path = args
        .common
        .out
        .join(format!("sweep.{}", format.extension()));
    write_sweep(&curve, &path, format)?;
    print!("{}", render_sweep_csv(&curve)?);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = &args.dataset {
        cfg.dataset = v.parse()?;
    }
    if let Some(v) = &args.scenario {
        cfg.scenario = v.parse()?;
    }
    apply_common(&mut cfg, &args.common)?;
    cfg.validate()?;
    let clients = build_clients(&cfg, cfg.seed)?;
    let manifest = partition_manifest(&clients);
    std::fs::create_dir_all(&args.common.out)?;
    let path = args.common.out.join("partition.txt");
    std::fs::write(&path, &manifest)?;
    print!("{manifest}");
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Table(args) => cmd_table(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::PartitionAudit(args) => cmd_audit(args),
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig { .. } | Error::NotDivisible { .. } => 2,
        _ => 1,
    }
}

fn render_error(err: &Error) -> String {
    match err {
        Error::InvalidConfig { field, reason } => {
            let flag = field.replace('_', "-");
            format!("invalid value for `--{flag}`: {reason}")
        }
        other => format!("{other}"),
    }
}

/// Parses `argv` and runs a subcommand. Returns the process exit code:
/// 0 success, 2 configuration error, 1 runtime error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", render_error(&err));
            exit_code_for(&err)
        }
    }
}
