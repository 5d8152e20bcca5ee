//! Command-line front end: single reconstructions, phase-diagram sweeps,
//! threshold curves, convergence comparisons, exact-oracle solves, and a
//! fast selftest.
//!
//! Data goes to `--out` (or standard output); everything else goes to the
//! error stream. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::io::Write as _;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cs_recon::gen::{make_instance, GenSpec, MatrixKind};
use cs_recon::harness::{
    convergence_compare, grid, phase_csv, phase_sweep, selftest, threshold_csv, ConvergenceSpec,
    PhaseGridSpec,
};
use cs_recon::model::{AnnealSchedule, SolverConfig, SolverVariant, ThresholdInit};
use cs_recon::oracle::{l1_min_enum, l1_min_lp};
use cs_recon::phase::{default_alpha_grid, threshold_curve};
use cs_recon::solvers::run;

#[derive(Parser)]
#[command(
    name = "csrecon",
    about = "Sparse reconstruction experiments: annealed thresholding solvers, \
             phase diagrams, and exact l1 oracles",
    version
)]
struct Cli {
    /// Worker threads for sweeps and trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on one seeded instance and print the run summary.
    Reconstruct(ReconstructArgs),
    /// Sweep success rate over an (alpha, rho) grid and emit CSV.
    PhaseDiagram(PhaseDiagramArgs),
    /// Tabulate the theoretical recovery boundary rho_c(alpha).
    ThresholdCurve(ThresholdCurveArgs),
    /// Compare solver MSE traces on shared instances and emit CSV.
    Convergence(ConvergenceArgs),
    /// Solve a small instance exactly by l1 minimization.
    Oracle(OracleArgs),
    /// Run the fast invariant checks and report pass/fail per check.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverName {
    Naive,
    PartialConstant,
    PartialStepDependent,
    AmpExternal,
    Amp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixName {
    /// Dense Gaussian entries with variance 1/M.
    Dense,
    /// Same, with a seeded 90% of entries forced to zero.
    Sparse10,
}

impl From<MatrixName> for MatrixKind {
    fn from(name: MatrixName) -> Self {
        match name {
            MatrixName::Dense => MatrixKind::DenseGauss,
            MatrixName::Sparse10 => MatrixKind::SparsifiedGauss { keep_fraction: 0.1 },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

/// Flags shared by every subcommand that runs a solver.
#[derive(Args)]
struct SolverArgs {
    /// Solver variant.
    #[arg(long, value_enum, default_value = "amp")]
    solver: SolverName,

    /// Partition ratio for partial-constant; rejected with other solvers.
    #[arg(long)]
    gamma: Option<f64>,

    /// Per-step threshold decay factor.
    #[arg(long, default_value_t = 0.995)]
    decay: f64,

    /// Initial threshold; defaults to max |F^T y| for the instance.
    #[arg(long)]
    k0: Option<f64>,

    /// Threshold floor ending the annealing.
    #[arg(long, default_value_t = 1e-9)]
    k_floor: f64,

    #[arg(long, default_value_t = 2000)]
    max_steps: usize,

    /// Per-entry MSE below which a run counts as a success.
    #[arg(long, default_value_t = 1e-3)]
    mse_threshold: f64,
}

impl SolverArgs {
    fn variant(&self) -> Result<SolverVariant, String> {
        match (self.solver, self.gamma) {
            (SolverName::PartialConstant, g) => Ok(SolverVariant::PartialConstant {
                gamma: g.unwrap_or(1.0),
            }),
            (_, Some(_)) => {
                Err("--gamma only applies to --solver partial-constant".to_string())
            }
            (SolverName::Naive, None) => Ok(SolverVariant::Naive),
            (SolverName::PartialStepDependent, None) => Ok(SolverVariant::PartialStepDependent),
            (SolverName::AmpExternal, None) => Ok(SolverVariant::AmpExternal),
            (SolverName::Amp, None) => Ok(SolverVariant::Amp),
        }
    }

    fn config(&self) -> Result<SolverConfig, String> {
        let mut config = SolverConfig::new(self.variant()?);
        config.anneal = AnnealSchedule {
            k0: self.k0.map_or(ThresholdInit::Auto, ThresholdInit::Fixed),
            decay: self.decay,
            k_floor: self.k_floor,
        };
        config.max_steps = self.max_steps;
        config.mse_success_threshold = self.mse_threshold;
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output path; "-" writes to standard output.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,

    /// Measurement ratio M/N.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    /// Density K/N of the planted signal.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, value_enum, default_value = "dense")]
    matrix: MatrixName,

    #[command(flatten)]
    solver: SolverArgs,

    /// json: run summary with traces; csv: per-step trace table.
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct PhaseDiagramArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,

    #[arg(long, default_value_t = 20)]
    trials: usize,

    #[arg(long, default_value_t = 0.1)]
    alpha_min: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha_max: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_step: f64,

    #[arg(long, default_value_t = 0.05)]
    rho_min: f64,
    #[arg(long, default_value_t = 0.45)]
    rho_max: f64,
    #[arg(long, default_value_t = 0.05)]
    rho_step: f64,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, value_enum, default_value = "dense")]
    matrix: MatrixName,

    /// Full protocol: N=1000, 50 trials, 10^4 steps, decay 0.999,
    /// grid step 0.025. Hours of compute; overrides the flags above.
    #[arg(long)]
    paper_scale: bool,

    #[command(flatten)]
    solver: SolverArgs,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ThresholdCurveArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha_min: f64,
    #[arg(long, default_value_t = 0.95)]
    alpha_max: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha_step: f64,

    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,

    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    #[arg(long, default_value_t = 0.1)]
    rho: f64,

    #[arg(long, default_value_t = 20)]
    trials: usize,

    /// Solvers to compare; repeat the flag to list several.
    #[arg(long = "solver", value_enum, default_values = ["amp", "partial-step-dependent"])]
    solvers: Vec<SolverName>,

    #[arg(long)]
    gamma: Option<f64>,

    #[arg(long, default_value_t = 0.95)]
    decay: f64,

    #[arg(long, default_value_t = 1e-9)]
    k_floor: f64,

    #[arg(long, default_value_t = 1000)]
    max_steps: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, value_enum, default_value = "dense")]
    matrix: MatrixName,

    /// Full protocol: N=2000, M=1000, K=200, 100 trials.
    #[arg(long)]
    paper_scale: bool,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMethod {
    /// Simplex on the linear-programming form; handles N up to 200.
    Lp,
    /// Exhaustive basis enumeration; N up to 20.
    Enum,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 12)]
    n: usize,

    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    #[arg(long, default_value_t = 0.1)]
    rho: f64,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, value_enum, default_value = "dense")]
    matrix: MatrixName,

    #[arg(long, value_enum, default_value = "lp")]
    method: OracleMethod,

    #[command(flatten)]
    output: OutputArgs,
}

fn gen_spec(n: usize, alpha: f64, rho: f64, matrix: MatrixName, seed: u64) -> Result<GenSpec, String> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(format!("--alpha must lie in (0, 1), got {alpha}"));
    }
    if !(rho >= 0.0 && rho < 1.0) {
        return Err(format!("--rho must lie in [0, 1), got {rho}"));
    }
    let spec = GenSpec {
        n,
        m: ((alpha * n as f64).round() as usize).max(1),
        k_nonzeros: (rho * n as f64).round() as usize,
        matrix_kind: matrix.into(),
        seed,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn write_output(out: &str, data: &str) -> Result<(), String> {
    if out == "-" {
        std::io::stdout()
            .write_all(data.as_bytes())
            .map_err(|e| e.to_string())
    } else {
        fs::write(out, data).map_err(|e| format!("cannot write {out}: {e}"))
    }
}

fn run_reconstruct(args: &ReconstructArgs) -> Result<String, Failure> {
    let spec = gen_spec(args.n, args.alpha, args.rho, args.matrix, args.seed)
        .map_err(Failure::Usage)?;
    let config = args.solver.config().map_err(Failure::Usage)?;
    let instance = make_instance(&spec).map_err(Failure::runtime)?;
    let result = run(&instance, &config).map_err(Failure::runtime)?;
    if let Some(reason) = &result.failure {
        eprintln!("run ended early: {reason}");
    }
    match args.format {
        OutputFormat::Json => {
            let mut text = result.to_summary_json().map_err(Failure::runtime)?;
            text.push('\n');
            Ok(text)
        }
        OutputFormat::Csv => {
            let traced_gamma = !result.gamma_trace.is_empty();
            let mut out =
                String::from(if traced_gamma { "step,mse,k,gamma\n" } else { "step,mse,k\n" });
            for (i, (mse, k)) in result.mse_trace.iter().zip(&result.k_trace).enumerate() {
                out.push_str(&format!(
                    "{},{},{}",
                    i + 1,
                    cs_recon::harness::fmt_float(*mse),
                    cs_recon::harness::fmt_float(*k)
                ));
                if traced_gamma {
                    out.push(',');
                    out.push_str(&cs_recon::harness::fmt_float(result.gamma_trace[i]));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn run_phase_diagram(args: &PhaseDiagramArgs) -> Result<String, Failure> {
    let mut config = args.solver.config().map_err(Failure::Usage)?;
    let (n, trials, alpha_grid, rho_grid);
    if args.paper_scale {
        n = 1000;
        trials = 50;
        config.max_steps = 10_000;
        config.anneal.decay = 0.999;
        alpha_grid = grid(0.05, 0.95, 0.025);
        rho_grid = grid(0.025, 0.475, 0.025);
    } else {
        n = args.n;
        trials = args.trials;
        alpha_grid = grid(args.alpha_min, args.alpha_max, args.alpha_step);
        rho_grid = grid(args.rho_min, args.rho_max, args.rho_step);
    }
    let spec = PhaseGridSpec {
        n,
        alpha_grid,
        rho_grid,
        trials,
        solver: config,
        matrix: args.matrix.into(),
        base_seed: args.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!(
        "sweeping {} cells, {} trials each at n = {}",
        spec.alpha_grid.len() * spec.rho_grid.len(),
        spec.trials,
        spec.n
    );
    let cells = phase_sweep(&spec).map_err(Failure::runtime)?;
    Ok(phase_csv(&cells, spec.solver.mse_success_threshold))
}

fn run_threshold_curve(args: &ThresholdCurveArgs) -> Result<String, Failure> {
    let alphas = if (args.alpha_min, args.alpha_max, args.alpha_step) == (0.05, 0.95, 0.05) {
        default_alpha_grid()
    } else {
        grid(args.alpha_min, args.alpha_max, args.alpha_step)
    };
    if alphas.is_empty() {
        return Err(Failure::Usage("empty alpha grid".to_string()));
    }
    let points = threshold_curve(&alphas).map_err(Failure::runtime)?;
    match args.format {
        OutputFormat::Csv => Ok(threshold_csv(&points)),
        OutputFormat::Json => {
            let mut text = serde_json::to_string(&points).map_err(Failure::runtime)?;
            text.push('\n');
            Ok(text)
        }
    }
}

fn run_convergence(args: &ConvergenceArgs) -> Result<String, Failure> {
    let (n, m, k_nonzeros, trials);
    if args.paper_scale {
        (n, m, k_nonzeros, trials) = (2000, 1000, 200, 100);
    } else {
        if !(args.alpha > 0.0 && args.alpha < 1.0) {
            return Err(Failure::Usage(format!(
                "--alpha must lie in (0, 1), got {}",
                args.alpha
            )));
        }
        if !(args.rho >= 0.0 && args.rho < 1.0) {
            return Err(Failure::Usage(format!(
                "--rho must lie in [0, 1), got {}",
                args.rho
            )));
        }
        n = args.n;
        m = ((args.alpha * n as f64).round() as usize).max(1);
        k_nonzeros = (args.rho * n as f64).round() as usize;
        trials = args.trials;
    }
    let variants = args
        .solvers
        .iter()
        .map(|&s| {
            SolverArgs {
                solver: s,
                gamma: args.gamma,
                decay: args.decay,
                k0: None,
                k_floor: args.k_floor,
                max_steps: args.max_steps,
                mse_threshold: 1e-3,
            }
            .variant()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    let spec = ConvergenceSpec {
        n,
        m,
        k_nonzeros,
        trials,
        variants,
        anneal: AnnealSchedule {
            k0: ThresholdInit::Auto,
            decay: args.decay,
            k_floor: args.k_floor,
        },
        max_steps: args.max_steps,
        matrix: args.matrix.into(),
        base_seed: args.seed,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    eprintln!(
        "comparing {} solvers over {} shared instances at n = {}, m = {}, k = {}",
        spec.variants.len(),
        spec.trials,
        spec.n,
        spec.m,
        spec.k_nonzeros
    );
    let traces = convergence_compare(&spec).map_err(Failure::runtime)?;
    Ok(cs_recon::harness::convergence_csv(&traces))
}

fn run_oracle(args: &OracleArgs) -> Result<String, Failure> {
    let spec = gen_spec(args.n, args.alpha, args.rho, args.matrix, args.seed)
        .map_err(Failure::Usage)?;
    let instance = make_instance(&spec).map_err(Failure::runtime)?;
    let solution = match args.method {
        OracleMethod::Lp => l1_min_lp(&instance),
        OracleMethod::Enum => l1_min_enum(&instance),
    }
    .map_err(Failure::runtime)?;
    let mut text = solution.to_json().map_err(Failure::runtime)?;
    text.push('\n');
    Ok(text)
}

fn run_selftest() -> Result<String, Failure> {
    let checks = selftest();
    let mut out = String::new();
    let mut all_ok = true;
    for (name, ok) in &checks {
        out.push_str(&format!("{}: {name}\n", if *ok { "ok" } else { "FAILED" }));
        all_ok &= ok;
    }
    if all_ok {
        out.push_str(&format!("all {} checks passed\n", checks.len()));
        Ok(out)
    } else {
        // Report what did pass before signalling the failure.
        eprint!("{out}");
        Err(Failure::Runtime("selftest failed".to_string()))
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap routes help to stdout and errors to stderr on its own.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let (result, out) = match &cli.command {
        Command::Reconstruct(args) => (run_reconstruct(args), args.output.out.as_str()),
        Command::PhaseDiagram(args) => (run_phase_diagram(args), args.output.out.as_str()),
        Command::ThresholdCurve(args) => (run_threshold_curve(args), args.output.out.as_str()),
        Command::Convergence(args) => (run_convergence(args), args.output.out.as_str()),
        Command::Oracle(args) => (run_oracle(args), args.output.out.as_str()),
        Command::Selftest => (run_selftest(), "-"),
    };

    match result {
        Ok(data) => match write_output(out, &data) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
