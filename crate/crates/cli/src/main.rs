use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ratio_reject::harness::{
    compare_rejectors, default_tau_grid, generate_task, rejector_mask, risk_coverage,
    run_verification_suite, sweep, RejectorKind, SuiteOptions, TaskGenSpec,
};
use ratio_reject::rejectors::{RejectorOutput, Threshold};
use ratio_reject::{chow_equivalence_scan, FiniteTask, LossKind, RejectionCost, Temperature};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "ratio-reject",
    version,
    about = "Density-ratio rejectors on finite classification tasks"
)]
struct Cli {
    /// TOML file with default values for any flag; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random task file.
    Gen(GenArgs),
    /// Sweep a rejector over a threshold grid and write CSV.
    Sweep(RunArgs),
    /// Risk–coverage curve of a sweep as CSV.
    Curve(RunArgs),
    /// Compare joint and marginal rejectors at matched thresholds.
    Compare(RunArgs),
    /// Emit one rejector decision as JSON.
    Reject(RejectArgs),
    /// Run the property suite; exit 1 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rejector: Option<String>,
    #[arg(long)]
    cost: Option<f64>,
    /// `auto` or a path to a file of thresholds.
    #[arg(long)]
    tau_grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n_inputs: Option<usize>,
    #[arg(long)]
    n_labels: Option<usize>,
    #[arg(long)]
    marginal_concentration: Option<f64>,
    #[arg(long)]
    posterior_concentration: Option<f64>,
    #[arg(long)]
    model_noise: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Task file written by `gen`.
    task: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RejectArgs {
    task: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Ratio threshold.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Trials per check instead of the built-in counts.
    #[arg(long)]
    trials: Option<usize>,
}

/// Contents of `--config`. Keys mirror the flags with underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    loss: Option<String>,
    lambda: Option<f64>,
    rejector: Option<String>,
    cost: Option<f64>,
    tau_grid: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    tau: Option<f64>,
    trials: Option<usize>,
    n_inputs: Option<usize>,
    n_labels: Option<usize>,
    marginal_concentration: Option<f64>,
    posterior_concentration: Option<f64>,
    model_noise: Option<f64>,
}

struct Settings {
    loss: LossKind,
    lambda: Temperature,
    rejector: RejectorKind,
    cost: Option<RejectionCost>,
    tau_grid: Option<String>,
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn settings(common: Common, cfg: &Config) -> Result<Settings> {
    let loss = common
        .loss
        .or_else(|| cfg.loss.clone())
        .unwrap_or_else(|| "log".into());
    let rejector = common
        .rejector
        .or_else(|| cfg.rejector.clone())
        .unwrap_or_else(|| "marginal".into());
    let cost = common
        .cost
        .or(cfg.cost)
        .map(RejectionCost::new)
        .transpose()?;
    Ok(Settings {
        loss: loss.parse()?,
        lambda: Temperature::new(common.lambda.or(cfg.lambda).unwrap_or(1.0))?,
        rejector: rejector.parse()?,
        cost,
        tau_grid: common.tau_grid.or_else(|| cfg.tau_grid.clone()),
        out: common.out.or_else(|| cfg.out.clone()),
    })
}

fn read_task(path: &Path) -> Result<FiniteTask> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    FiniteTask::from_json(&text).with_context(|| format!("parsing task {}", path.display()))
}

fn read_grid(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let grid = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("bad threshold '{s}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    if grid.is_empty() {
        bail!("{} holds no thresholds", path.display());
    }
    Ok(grid)
}

/// The grid requested by `--tau-grid` and `--cost`.
fn tau_grid(task: &FiniteTask, s: &Settings, rejector: RejectorKind) -> Result<Vec<f64>> {
    if let Some(c) = s.cost {
        if s.tau_grid.is_some() {
            bail!("--cost and --tau-grid are mutually exclusive");
        }
        let kind = match rejector {
            RejectorKind::Chow | RejectorKind::Marginal => s.loss,
            RejectorKind::Kl => LossKind::ModifiedLog,
            other => {
                bail!("--cost needs a marginal-ratio rejector (chow, marginal or kl), got {other}")
            }
        };
        let tau = chow_equivalence_scan(kind, task, s.lambda, c)?
            .ok_or_else(|| anyhow!("no threshold reproduces Chow's rule at cost {}", c.value()))?;
        return Ok(vec![tau]);
    }
    match s.tau_grid.as_deref() {
        None | Some("auto") => Ok(default_tau_grid(task, s.loss, s.lambda, rejector)?),
        Some(path) => read_grid(Path::new(path)),
    }
}

fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

fn write_csv<T: Serialize>(rows: &[T], out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(io::stdout()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_meta<T: Serialize>(meta: &T, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        fs::write(sidecar(path), serde_json::to_string_pretty(meta)? + "\n")?;
    }
    Ok(())
}

fn run_gen(args: GenArgs, cfg: &Config) -> Result<ExitCode> {
    let defaults = TaskGenSpec::default();
    let spec = TaskGenSpec {
        n_inputs: args.n_inputs.or(cfg.n_inputs).unwrap_or(defaults.n_inputs),
        n_labels: args.n_labels.or(cfg.n_labels).unwrap_or(defaults.n_labels),
        marginal_concentration: args
            .marginal_concentration
            .or(cfg.marginal_concentration)
            .unwrap_or(defaults.marginal_concentration),
        posterior_concentration: args
            .posterior_concentration
            .or(cfg.posterior_concentration)
            .unwrap_or(defaults.posterior_concentration),
        model_noise: args
            .model_noise
            .or(cfg.model_noise)
            .unwrap_or(defaults.model_noise),
        seed: args.common.seed.or(cfg.seed).unwrap_or(defaults.seed),
    };
    let out = args.common.out.or_else(|| cfg.out.clone());
    write_text(&generate_task(&spec)?.to_json()?, out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(args: RunArgs, cfg: &Config, curve: bool) -> Result<ExitCode> {
    let task = read_task(&args.task)?;
    let s = settings(args.common, cfg)?;
    let grid = tau_grid(&task, &s, s.rejector)?;
    let result = sweep(&task, s.loss, s.lambda, s.rejector, &grid)?;
    if curve {
        write_csv(&risk_coverage(&result), s.out.as_deref())?;
    } else {
        write_csv(&result.rows, s.out.as_deref())?;
    }
    write_meta(&result.metadata, s.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn run_compare(args: RunArgs, cfg: &Config) -> Result<ExitCode> {
    let task = read_task(&args.task)?;
    let s = settings(args.common, cfg)?;
    let grid = tau_grid(&task, &s, RejectorKind::Joint)?;
    let report = compare_rejectors(s.loss, &task, s.lambda, &grid)?;
    write_csv(&report.rows, s.out.as_deref())?;
    #[derive(Serialize)]
    struct Meta<'a> {
        loss: LossKind,
        lambda: f64,
        normalizer: f64,
        joint_normalizer: f64,
        joint_violations: usize,
        bhattacharyya_violations: &'a Option<usize>,
    }
    write_meta(
        &Meta {
            loss: report.loss,
            lambda: report.lambda,
            normalizer: report.normalizer,
            joint_normalizer: report.joint_normalizer,
            joint_violations: report.joint_violations,
            bhattacharyya_violations: &report.bhattacharyya_violations,
        },
        s.out.as_deref(),
    )?;
    if report.total_violations() > 0 {
        eprintln!("containment violated {} times", report.total_violations());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_reject(args: RejectArgs, cfg: &Config) -> Result<ExitCode> {
    let task = read_task(&args.task)?;
    let s = settings(args.common, cfg)?;
    let tau = match (args.tau.or(cfg.tau), s.cost) {
        (Some(tau), None) => tau,
        (None, Some(_)) => tau_grid(&task, &s, s.rejector)?[0],
        (Some(_), Some(_)) => bail!("--tau and --cost are mutually exclusive"),
        (None, None) => bail!("reject needs --tau or --cost"),
    };
    let (rej, kappa, mask) = rejector_mask(&task, s.loss, s.lambda, s.rejector, tau)?;
    let threshold = match s.rejector {
        RejectorKind::Marginal | RejectorKind::Joint => Threshold::ratio(tau)?,
        _ => Threshold::divergence(kappa)?,
    };
    let output = RejectorOutput::new(s.rejector.as_str(), &rej, threshold, &mask);
    write_text(&serde_json::to_string_pretty(&output)?, s.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: VerifyArgs, cfg: &Config) -> Result<ExitCode> {
    let seed = args.common.seed.or(cfg.seed).unwrap_or(0);
    let out = args.common.out.or_else(|| cfg.out.clone());
    let opts = SuiteOptions {
        seed,
        trials: args.trials.or(cfg.trials),
        ..SuiteOptions::default()
    };
    let start = Instant::now();
    let report = run_verification_suite(&opts)?;
    for check in &report.checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        eprintln!(
            "[{status}] {:>2} {} ({} trials): {}",
            check.id, check.name, check.trials, check.detail
        );
    }
    if let Some(note) = &report.note {
        eprintln!("{note}");
    }
    eprintln!("finished in {:.1} s", start.elapsed().as_secs_f64());
    write_text(&report.to_json()?, out.as_deref())?;
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(args) => run_gen(args, &cfg),
        Command::Sweep(args) => run_sweep(args, &cfg, false),
        Command::Curve(args) => run_sweep(args, &cfg, true),
        Command::Compare(args) => run_compare(args, &cfg),
        Command::Reject(args) => run_reject(args, &cfg),
        Command::Verify(args) => run_verify(args, &cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
