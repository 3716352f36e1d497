//! `htype`: group validation, gauge constants, Landis checks, barrier
//! verification and Harnack experiments from one config file.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::report::Status;

#[derive(Parser, Debug)]
#[command(name = "htype", version, about = "Numerical experiments on H-type groups")]
struct Cli {
    /// TOML config file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Group preset (`heisenberg:k`, `quaternion:n`, `r5_example`, ...).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Group file with `m`, `n`, `B` and optional `rescale`.
    #[arg(long, global = true)]
    group_file: Option<PathBuf>,
    /// Constant diagonal coefficient field, e.g. `1,1.5`.
    #[arg(long, global = true, value_name = "D1,D2,...")]
    field_diag: Option<String>,
    /// Declared ellipticity bounds of the field.
    #[arg(long, global = true, value_name = "LAMBDA_MIN,LAMBDA_MAX")]
    bounds: Option<String>,
    /// Override any config key, e.g. `--set barrier.eps=0.04`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the machine document (CSV for `harnack run`) to this path.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Print the machine document instead of the text report.
    #[arg(long, global = true)]
    json: bool,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Group structure checks.
    Group {
        #[command(subcommand)]
        action: GroupAction,
    },
    /// Gauge quantities at a point.
    Gauge {
        #[command(subcommand)]
        action: GaugeAction,
    },
    /// Monte Carlo estimates of beta, K and |B_1|.
    Constants(ConstantsArgs),
    Landis {
        #[command(subcommand)]
        action: LandisAction,
    },
    Barrier {
        #[command(subcommand)]
        action: BarrierAction,
    },
    Harnack {
        #[command(subcommand)]
        action: HarnackAction,
    },
}

#[derive(Subcommand, Debug)]
enum GroupAction {
    /// Validate the structure matrices.
    Check,
}

#[derive(Subcommand, Debug)]
enum GaugeAction {
    /// Evaluate the gauge and its derivatives at comma-separated coordinates.
    Eval {
        #[arg(allow_hyphen_values = true)]
        point: String,
    },
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    #[arg(long)]
    quadrature: Option<usize>,
    #[arg(long)]
    k_samples: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum LandisAction {
    /// Cordes-Landis margin of the configured field.
    Check {
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum BarrierAction {
    /// Check `L_A h_eps >= C lambda` on the test region.
    Verify {
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
enum HarnackAction {
    /// Dirichlet solves and Harnack / critical-density measurements.
    Run {
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long = "radius")]
        radius: Option<f64>,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn from_core(e: htype_core::Error) -> Self {
        use htype_core::Error as E;
        let code = match &e {
            E::Precondition(_) => 3,
            E::Dimension(_) | E::Structural(_) | E::Domain(_) | E::Singularity(_) => 2,
            E::Consistency(_) | E::NoConvergence { .. } => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::config(format!("bad number `{s}` in {what}"))))
        .collect()
}

fn toml_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

/// Flags are turned into `key=value` overrides applied after the file.
fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut push = |k: &str, v: String| out.push((k.to_string(), v));
    if let Some(s) = cli.seed {
        push("seed", s.to_string());
    }
    if let Some(p) = &cli.preset {
        push("group", format!("{p:?}"));
    }
    if let Some(p) = &cli.group_file {
        push("group_file", format!("{:?}", p.display().to_string()));
    }
    if let Some(p) = &cli.output {
        push("output", format!("{:?}", p.display().to_string()));
    }
    if let Some(d) = &cli.field_diag {
        let diag = parse_list(d, "--field-diag")?;
        let rows: Vec<String> = (0..diag.len())
            .map(|i| toml_list(&(0..diag.len()).map(|j| if i == j { diag[i] } else { 0.0 }).collect::<Vec<_>>()))
            .collect();
        let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        push(
            "field",
            format!("{{ kind = \"constant\", matrix = [{}], lambda = {lo:?}, Lambda = {hi:?} }}", rows.join(", ")),
        );
    }
    if let Some(b) = &cli.bounds {
        let b = parse_list(b, "--bounds")?;
        if b.len() != 2 {
            return Err(CliError::config("--bounds takes two numbers"));
        }
        push("field.lambda", format!("{:?}", b[0]));
        push("field.Lambda", format!("{:?}", b[1]));
    }
    match &cli.command {
        Command::Constants(a) => {
            if let Some(q) = a.quadrature {
                push("constants.quadrature", q.to_string());
            }
            if let Some(k) = a.k_samples {
                push("constants.k_samples", k.to_string());
            }
        }
        Command::Landis {
            action: LandisAction::Check { points: Some(p) },
        } => push("landis.points", p.to_string()),
        Command::Barrier {
            action: BarrierAction::Verify { delta, eps, budget },
        } => {
            if let Some(d) = delta {
                push("barrier.delta", format!("{d:?}"));
            }
            if let Some(e) = eps {
                push("barrier.eps", format!("{e:?}"));
            }
            if let Some(b) = budget {
                push("barrier.budget", b.to_string());
            }
        }
        Command::Harnack {
            action: HarnackAction::Run {
                sweep,
                resolution,
                radius,
            },
        } => {
            if let Some(s) = sweep {
                push("harnack.sweep", s.to_string());
            }
            if let Some(r) = resolution {
                push("harnack.resolution", r.to_string());
            }
            if let Some(r) = radius {
                push("harnack.R", format!("{r:?}"));
            }
        }
        _ => {}
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(raw) = std::env::var("HTYPE_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("HTYPE_THREADS must be a positive integer, got `{raw}`")))?;
        if n == 0 {
            return Err(CliError::config("HTYPE_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Status, CliError> {
    init_threads()?;
    let mut cfg = config::load(cli.config.as_deref(), &overrides(&cli)?)?;
    if cli.preset.is_some() {
        cfg.group_file = None;
    }
    if cli.show_config {
        print!("{}", config::show(&cfg));
        return Ok(Status::Pass);
    }
    let group = config::resolve_group(&cfg)?;
    let ctx = commands::Context { cfg: &cfg, group };
    let result = match &cli.command {
        Command::Group {
            action: GroupAction::Check,
        } => commands::group_check(&ctx),
        Command::Gauge {
            action: GaugeAction::Eval { point },
        } => commands::gauge_eval(&ctx, point),
        Command::Constants(_) => commands::constants(&ctx),
        Command::Landis { .. } => commands::landis_check(&ctx),
        Command::Barrier { .. } => commands::barrier_verify(&ctx),
        Command::Harnack { .. } => commands::harnack_run(&ctx),
    };
    report::emit(&ctx, result, cli.json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
