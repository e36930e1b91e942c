//! Command line front-end: solve, bench, verify and gen subcommands over the
//! solver library. Every flag can also be set through an `SGSADMM_*`
//! environment variable.

use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sgsadmm::cli_io::{
    self, BenchSpec, FileFormat, InstanceSpec, RunConfig, ScheduleSpec, SolverKind,
};

#[derive(Parser)]
#[command(
    name = "sgsadmm",
    about = "Multi-block proximal ADMM / proximal ALM solvers with runtime convergence certificates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Ipalm,
    SgsIpadmm,
    ClassicAdmm,
    DirectlyExtended,
}

impl From<SolverArg> for SolverKind {
    fn from(v: SolverArg) -> Self {
        match v {
            SolverArg::Ipalm => SolverKind::Ipalm,
            SolverArg::SgsIpadmm => SolverKind::SgsIpadmm,
            SolverArg::ClassicAdmm => SolverKind::ClassicAdmm,
            SolverArg::DirectlyExtended => SolverKind::DirectlyExtended,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Sdpa,
    Native,
}

impl From<FormatArg> for FileFormat {
    fn from(v: FormatArg) -> Self {
        match v {
            FormatArg::Sdpa => FileFormat::Sdpa,
            FormatArg::Native => FileFormat::Native,
        }
    }
}

#[derive(Args)]
struct InstanceArgs {
    /// instance file to solve
    #[arg(long, env = "SGSADMM_FILE")]
    file: Option<String>,
    /// file format
    #[arg(long, value_enum, default_value = "sdpa", env = "SGSADMM_FORMAT")]
    format: FormatArg,
    /// built-in generator, e.g. toy-sdp | sdp:n=10,m=20 | biq-qsdp:n=5 |
    /// lasso:n=6,rows=12 | basis-pursuit:n=6,m=3 | multi-block
    #[arg(long, env = "SGSADMM_GEN")]
    generate: Option<String>,
}

impl InstanceArgs {
    fn resolve(&self) -> Result<InstanceSpec, String> {
        match (&self.file, &self.generate) {
            (Some(path), None) => Ok(InstanceSpec::File {
                path: path.clone(),
                format: self.format.into(),
            }),
            (None, Some(spec)) => parse_gen_spec(spec),
            (None, None) => Ok(InstanceSpec::ToySdp),
            (Some(_), Some(_)) => Err("pass either --file or --generate, not both".into()),
        }
    }
}

fn parse_gen_spec(spec: &str) -> Result<InstanceSpec, String> {
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k, r),
        None => (spec, ""),
    };
    let mut kv = std::collections::BTreeMap::new();
    for part in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value in `{part}`"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str, default: usize| -> Result<usize, String> {
        match kv.get(k) {
            Some(v) => v.parse().map_err(|_| format!("invalid {k}={v}")),
            None => Ok(default),
        }
    };
    Ok(match kind {
        "toy-sdp" => InstanceSpec::ToySdp,
        "sdp" => InstanceSpec::Sdp {
            n: get("n", 10)?,
            m: get("m", 20)?,
        },
        "biq-qsdp" => InstanceSpec::BiqQsdp {
            n: get("n", 5)?,
            rank_a: get("rank-a", 2)?,
            rank_b: get("rank-b", 2)?,
        },
        "lasso" => InstanceSpec::Lasso {
            n: get("n", 6)?,
            rows: get("rows", 12)?,
        },
        "basis-pursuit" => InstanceSpec::BasisPursuit {
            n: get("n", 6)?,
            m: get("m", 3)?,
        },
        "multi-block" => InstanceSpec::MultiBlock { nonneg: true },
        other => return Err(format!("unknown generator `{other}`")),
    })
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "sgs-ipadmm", env = "SGSADMM_SOLVER")]
    solver: SolverArg,
    /// dual step-length in (0, 2)
    #[arg(long, default_value_t = 1.9, env = "SGSADMM_TAU")]
    tau: f64,
    #[arg(long, default_value_t = 1.0, env = "SGSADMM_SIGMA")]
    sigma: f64,
    /// stopping tolerance on the application metric or relative KKT residual
    #[arg(long, default_value_t = 1e-6, env = "SGSADMM_TOL")]
    tol: f64,
    #[arg(long, default_value_t = 100_000, env = "SGSADMM_MAX_ITER")]
    max_iter: usize,
    #[arg(long, default_value_t = 0, env = "SGSADMM_SEED")]
    seed: u64,
    /// subproblem tolerance schedule: exact | poly[:alpha] | geo:e0,gamma
    #[arg(long, default_value = "exact", env = "SGSADMM_SCHEDULE")]
    schedule: String,
    #[arg(long, default_value_t = false, env = "SGSADMM_ADAPTIVE_SIGMA")]
    adaptive_sigma: bool,
    /// per-iteration CSV trace
    #[arg(long, env = "SGSADMM_TRACE")]
    trace: Option<String>,
}

fn parse_schedule(s: &str) -> Result<ScheduleSpec, String> {
    if s == "exact" || s == "none" {
        return Ok(ScheduleSpec::None);
    }
    if s == "poly" {
        return Ok(ScheduleSpec::Polynomial { alpha: None });
    }
    if let Some(rest) = s.strip_prefix("poly:") {
        let alpha: f64 = rest.parse().map_err(|_| format!("invalid alpha `{rest}`"))?;
        return Ok(ScheduleSpec::Polynomial { alpha: Some(alpha) });
    }
    if let Some(rest) = s.strip_prefix("geo:") {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| "geometric schedule needs e0,gamma".to_string())?;
        return Ok(ScheduleSpec::Geometric {
            e0: a.parse().map_err(|_| format!("invalid e0 `{a}`"))?,
            gamma: b.parse().map_err(|_| format!("invalid gamma `{b}`"))?,
        });
    }
    Err(format!("unknown schedule `{s}`"))
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// comma separated seeds
    #[arg(long, default_value = "1,2,3,4,5", env = "SGSADMM_SEEDS")]
    seeds: String,
    /// comma separated step-lengths
    #[arg(long, default_value = "1.0,1.618,1.9,1.99", env = "SGSADMM_TAUS")]
    taus: String,
    /// comma separated solvers
    #[arg(long, default_value = "classic-admm", env = "SGSADMM_SOLVERS")]
    solvers: String,
    #[arg(long, default_value_t = 1.0, env = "SGSADMM_SIGMA")]
    sigma: f64,
    #[arg(long, default_value_t = 1e-6, env = "SGSADMM_TOL")]
    tol: f64,
    #[arg(long, default_value_t = 100_000, env = "SGSADMM_MAX_ITER")]
    max_iter: usize,
    /// per-cell CSV output path
    #[arg(long, default_value = "bench_cells.csv")]
    cells: String,
    /// performance-profile CSV output path
    #[arg(long, default_value = "bench_profile.csv")]
    profile: String,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0, env = "SGSADMM_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 1.9, env = "SGSADMM_TAU")]
    tau: f64,
    #[arg(long, default_value_t = 1.0, env = "SGSADMM_SIGMA")]
    sigma: f64,
}

#[derive(Args)]
struct GenArgs {
    /// generator spec, see `solve --generate`
    #[arg(long)]
    generate: String,
    #[arg(long, default_value_t = 0, env = "SGSADMM_SEED")]
    seed: u64,
    #[arg(long, value_enum, default_value = "sdpa")]
    format: FormatArg,
    /// output path
    #[arg(long)]
    out: String,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print a structured result record
    Solve(SolveArgs),
    /// Run a (seeds x step-lengths x solvers) grid and emit CSV tables
    Bench(BenchArgs),
    /// Run the runtime-certificate bundle on a seeded random instance
    Verify(VerifyArgs),
    /// Generate a synthetic instance file
    Gen(GenArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(args) => {
            let spec = match args.instance.resolve() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let schedule = match parse_schedule(&args.schedule) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let cfg = RunConfig {
                solver: args.solver.into(),
                instance: spec,
                seed: args.seed,
                tau: args.tau,
                sigma: args.sigma,
                stop_tol: args.tol,
                max_iter: args.max_iter,
                schedule,
                adaptive_sigma: args.adaptive_sigma,
                trace_path: args.trace,
            };
            cli_io::solve_command(&cfg, &mut std::io::stdout())
        }
        Command::Bench(args) => {
            let spec = match args.instance.resolve() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let parse_list =
                |s: &str| -> Vec<String> { s.split(',').map(|t| t.trim().to_string()).collect() };
            let seeds: Vec<u64> = parse_list(&args.seeds)
                .iter()
                .filter_map(|t| t.parse().ok())
                .collect();
            let taus: Vec<f64> = parse_list(&args.taus)
                .iter()
                .filter_map(|t| t.parse().ok())
                .collect();
            let solvers: Vec<SolverKind> = parse_list(&args.solvers)
                .iter()
                .filter_map(|t| match t.as_str() {
                    "ipalm" => Some(SolverKind::Ipalm),
                    "sgs-ipadmm" => Some(SolverKind::SgsIpadmm),
                    "classic-admm" => Some(SolverKind::ClassicAdmm),
                    "directly-extended" => Some(SolverKind::DirectlyExtended),
                    _ => None,
                })
                .collect();
            if seeds.is_empty() || taus.is_empty() || solvers.is_empty() {
                eprintln!("error: empty bench grid");
                return ExitCode::from(1);
            }
            let spec = BenchSpec {
                instance: spec,
                seeds,
                taus,
                solvers,
                sigma: args.sigma,
                stop_tol: args.tol,
                max_iter: args.max_iter,
                schedule: ScheduleSpec::None,
            };
            let run = || -> std::io::Result<i32> {
                let mut cells = std::fs::File::create(&args.cells)?;
                let mut profile = std::fs::File::create(&args.profile)?;
                let code = cli_io::bench_command(&spec, &mut cells, &mut profile);
                cells.flush()?;
                profile.flush()?;
                eprintln!("bench tables written to {} and {}", args.cells, args.profile);
                Ok(code)
            };
            match run() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Command::Verify(args) => {
            let mut cfg = RunConfig::new(
                SolverKind::SgsIpadmm,
                InstanceSpec::MultiBlock { nonneg: true },
            );
            cfg.seed = args.seed;
            cfg.tau = args.tau;
            cfg.sigma = args.sigma;
            cli_io::verify_command(&cfg, &mut std::io::stdout())
        }
        Command::Gen(args) => match parse_gen_spec(&args.generate) {
            Ok(spec) => cli_io::gen_command(&spec, args.seed, &args.out, args.format.into()),
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    };
    ExitCode::from(code as u8)
}
