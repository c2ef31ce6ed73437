//! `interfx` command-line front end.

mod estimate;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interfx::sim::{run_monte_carlo, DgpConfig, Design, ErrorDist, Estimator, McConfig};

#[derive(Debug, Parser)]
#[command(name = "interfx", version, about = "Panel models with interactive effects")]
struct Cli {
    /// Worker threads for Monte Carlo runs (default: logical cores).
    #[arg(long, global = true, env = "INTERFX_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a long-format panel CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment on one of the simulation designs.
    Simulate(SimulateArgs),
    /// Print the factor-number criteria for a panel.
    Select(SelectArgs),
    /// Draw one panel from a simulation design and write it as CSV.
    Generate(GenerateArgs),
}

/// A factor count, or `auto` to choose it by information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Count {
    Auto,
    Fixed(usize),
}

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(Count::Auto);
        }
        s.parse()
            .map(Count::Fixed)
            .map_err(|_| format!("expected a non-negative integer or 'auto', got '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Basic,
    Zero,
    Phi,
    PhiCommon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeMethod {
    Trace,
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitMethod {
    Pc,
    Random,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Panel CSV with columns unit,time,y,x1,...
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, value_enum, default_value = "basic")]
    pub model: Model,
    /// Total number of factors (basic model, default auto).
    #[arg(long)]
    pub r: Option<Count>,
    /// Factors entering the outcome with estimated loadings.
    #[arg(long)]
    pub r1: Option<Count>,
    /// Factors excluded from the outcome (zero model).
    #[arg(long)]
    pub r2: Option<Count>,
    /// Observed loadings, one row per unit: unit,phi1,...
    #[arg(long)]
    pub phi: Option<PathBuf>,
    /// Common regressors, one row per period: time,d1,...
    #[arg(long)]
    pub common: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "trace")]
    pub se: SeMethod,
    /// Report file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tolerance on the max-norm parameter change.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 3000)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "pc")]
    pub init: InitMethod,
    /// Seed for random starting values.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest factor number considered by `auto`.
    #[arg(long, default_value_t = interfx::selection::DEFAULT_R_MAX)]
    pub r_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    design: u8,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "wg,pc,mle")]
    estimators: String,
    #[arg(long, value_enum, default_value = "off")]
    select_r: OnOff,
    #[arg(long, default_value = "chisq")]
    dist: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value_t = interfx::selection::DEFAULT_R_MAX)]
    r_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    design: u8,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "chisq")]
    dist: String,
    /// Panel CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Where to write observed loadings (designs 3 and 4).
    #[arg(long)]
    phi_out: Option<PathBuf>,
    /// Where to write common regressors (design 4).
    #[arg(long)]
    common_out: Option<PathBuf>,
}

/// Failure of a subcommand: bad input, or a report that was written for a
/// fit that did not converge.
pub enum Failure {
    Input(String),
    NotConverged,
}

impl From<interfx::Error> for Failure {
    fn from(e: interfx::Error) -> Self {
        Failure::Input(e.to_string())
    }
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
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Estimate(args) => estimate::run(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Select(args) => select(&args),
        Command::Generate(args) => generate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => ExitCode::from(2),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dgp_config(design: u8, n: usize, t: usize, seed: u64, dist: &str) -> Result<DgpConfig, Failure> {
    let mut cfg = DgpConfig::new(Design::from_number(design)?, n, t, seed);
    cfg.error_dist = ErrorDist::from_str(dist)?;
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let dgp = dgp_config(args.design, args.n, args.t, args.seed, &args.dist)?;
    let mut cfg = McConfig::new(dgp, args.reps);
    cfg.estimators = Estimator::parse_list(&args.estimators)?;
    cfg.select = args.select_r == OnOff::On;
    let report = run_monte_carlo(&cfg)?;
    report::emit(&report.to_report_string(), args.out.as_deref())
}

fn select(args: &SelectArgs) -> Result<(), Failure> {
    let data = report::read_panel(&args.panel)?;
    let cfg = interfx::selection::SelectionConfig {
        r_max: args.r_max,
        ..Default::default()
    };
    let s = interfx::select_r1_r2(&data, &cfg)?;
    let mut out = String::from("# interfx select\n");
    out += &format!("n={}\nt={}\nk={}\n", data.n_units(), data.n_periods(), data.n_regressors());
    out += &format!("r={}\nr1={}\nr2={}\n", s.r, s.r1, s.r2);
    out += &report::criterion_table("ic", &s.ic);
    out += &report::criterion_table("step2_ic", &s.step2_ic);
    report::emit(&out, args.out.as_deref())
}

fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let cfg = dgp_config(args.design, args.n, args.t, args.seed, &args.dist)?;
    let (data, _) = interfx::sim::generate_dgp(&cfg)?;
    data.write_csv(&args.out)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.out.display())))?;
    let side = [
        (&args.phi_out, data.phi_observed(), "phi"),
        (&args.common_out, data.d_observed(), "d"),
    ];
    for (path, m, prefix) in side {
        match (path, m) {
            (Some(path), Some(m)) => interfx::panel::write_side_matrix(path, m, prefix)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
            (Some(_), None) => {
                return Err(Failure::Input(format!(
                    "design {} has no observed {prefix} to write",
                    args.design
                )))
            }
            _ => {}
        }
    }
    Ok(())
}
