//! `clrg` command line tool.

mod io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clrg::bench::{self, ExperimentSpec, Method};
use clrg::dynamics::{self, DynamicsParams, DynamicsTrace};
use clrg::game::{self, GameConfig};
use clrg::plot::{Chart, Series};
use clrg::population::{self, EnvironmentMoments};
use clrg::sem::{self, PresetOptions, SemConfig, Setting};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable files (exit code 1).
    Usage(String),
    /// Invalid input data or a numerical failure (exit code 2).
    Invalid(String),
}

impl CliError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) => f.write_str(m),
        }
    }
}

impl From<clrg::Error> for CliError {
    fn from(e: clrg::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "clrg", version, about = "Constrained linear regression games")]
struct Cli {
    /// Print progress information to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples from a two-environment linear SEM.
    Simulate(SimulateArgs),
    /// Least-squares solutions, equilibrium strategies and ensemble.
    Solve(SolveArgs),
    /// Run best-response dynamics and dump the trajectory.
    Trace(TraceArgs),
    /// Monte Carlo comparison of estimators over sample sizes.
    Bench(BenchArgs),
    /// Run the built-in property checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "F-HOM")]
    preset: Setting,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 5)]
    q: usize,
    /// Samples per environment.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SEM config as JSON; overrides --preset, --p and --q.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Draw the SEM parameters independently per environment.
    #[arg(long)]
    independent_params: bool,
    /// Also write the SEM config used.
    #[arg(long)]
    config_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    /// Sample CSV as written by `simulate`.
    #[arg(long, conflicts_with = "moments", required_unless_present = "moments")]
    data: Option<PathBuf>,
    /// Moments JSON: {"environments": [{"sigma": [[..]], "rho": [..]}, ..]}.
    #[arg(long)]
    moments: Option<PathBuf>,
}

impl InputArgs {
    fn load(&self) -> Result<Vec<EnvironmentMoments>, CliError> {
        let ms = match (&self.data, &self.moments) {
            (Some(d), _) => io::read_samples(d)?.iter().map(EnvironmentMoments::from_sample).collect::<clrg::Result<Vec<_>>>()?,
            (_, Some(m)) => io::read_moments(m)?,
            _ => unreachable!("clap requires one input"),
        };
        if ms.len() < 2 {
            return Err(CliError::Invalid(format!("need at least two environments, got {}", ms.len())));
        }
        Ok(ms)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 2.0)]
    w_sup: f64,
    /// Tolerance for deciding that coefficients agree.
    #[arg(long, default_value_t = game::DEFAULT_TOL)]
    tol: f64,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DynamicKind {
    Exact,
    Clamp,
    Signed,
    Sgd,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long, value_enum, default_value = "exact")]
    dynamic: DynamicKind,
    #[command(flatten)]
    input: InputArgs,
    /// Dynamics parameters as JSON; command line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    w_sup: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    env2_first: bool,
    /// CSV with columns `round,env,component,value`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// 0-based components to plot (default: all).
    #[arg(long, value_delimiter = ',')]
    components: Vec<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "F-HOM")]
    setting: Setting,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 5)]
    q: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 100, 250, 500, 750, 1000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::ClrgSgd, Method::Erm])]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment spec as JSON; replaces all other experiment flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    w_sup: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Reuse one SEM instance across trials.
    #[arg(long)]
    fixed_instance: bool,
    #[arg(long)]
    independent_params: bool,
    /// Run the 2-D comparison instead of the sweep and print a table.
    #[arg(long, conflicts_with_all = ["config", "svg", "literature"])]
    planar: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Overlay published means on the plot (dashed).
    #[arg(long)]
    literature: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, verbose),
        Command::Solve(a) => solve(a),
        Command::Trace(a) => trace(a, verbose),
        Command::Bench(a) => run_bench(a, verbose),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn simulate(a: SimulateArgs, verbose: bool) -> Result<u8, CliError> {
    let cfg: SemConfig = match &a.config {
        Some(path) => io::read_json(path)?,
        None => {
            let opts = PresetOptions { shared_parameters: !a.independent_params, ..PresetOptions::default() };
            sem::preset_with(a.preset, a.p, a.q, a.seed, &opts)?
        }
    };
    cfg.validate()?;
    let samples = (0..cfg.envs.len()).map(|e| sem::sample_environment(&cfg, e, a.n, a.seed)).collect::<clrg::Result<Vec<_>>>()?;
    io::write_samples(&a.out, &samples)?;
    if let Some(path) = &a.config_out {
        io::write_text(path, &to_json(&cfg))?;
    }
    if verbose {
        eprintln!("wrote {} rows to {}", a.n * samples.len(), a.out.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct SolveOutput {
    w1_star: Vec<f64>,
    w2_star: Vec<f64>,
    /// Least-squares solutions of every environment.
    w_star: Vec<Vec<f64>>,
    ensemble: Vec<f64>,
    strategies: Option<Vec<Vec<f64>>>,
    u_set: Vec<usize>,
    v_set: Vec<usize>,
    stability: game::StabilityVerdict,
}

fn solve(a: SolveArgs) -> Result<u8, CliError> {
    let ms = a.input.load()?;
    let cfg = GameConfig { w_sup: a.w_sup, tolerance: a.tol };
    cfg.validate()?;
    let w_star = ms.iter().map(|m| population::least_squares(m).map(|s| s.w_star)).collect::<clrg::Result<Vec<_>>>()?;
    let split = game::index_split(&w_star[0], &w_star[1], a.tol)?;
    let (ensemble, strategies) = if ms.len() == 2 {
        let sol = game::nash_strategies(&w_star[0], &w_star[1], &cfg)?;
        (sol.ensemble, Some(sol.strategies))
    } else {
        (game::nash_ensemble_multi(&w_star, &cfg)?, None)
    };
    let out = SolveOutput {
        w1_star: w_star[0].clone(),
        w2_star: w_star[1].clone(),
        w_star: w_star.clone(),
        ensemble,
        strategies,
        u_set: split.u_set,
        v_set: split.v_set,
        stability: game::variational_stability_check(&ms[0].sigma, &ms[1].sigma)?,
    };
    let text = to_json(&out);
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => println!("{text}"),
    }
    Ok(0)
}

fn trace(a: TraceArgs, verbose: bool) -> Result<u8, CliError> {
    let mut params: DynamicsParams = match &a.config {
        Some(path) => io::read_json(path)?,
        None => DynamicsParams::default(),
    };
    if let Some(v) = a.w_sup {
        params.w_sup = v;
    }
    if let Some(v) = a.step {
        params.step = v;
    }
    if let Some(v) = a.max_rounds {
        params.max_rounds = v;
    }
    if let Some(v) = a.epochs {
        params.epochs = v;
    }
    if let Some(v) = a.batch_size {
        params.batch_size = v;
    }
    if let Some(v) = a.seed {
        params.seed = v;
    }
    params.env2_first |= a.env2_first;
    params.validate()?;

    let tr: DynamicsTrace = match a.dynamic {
        DynamicKind::Sgd => {
            let path = a.input.data.as_ref().ok_or_else(|| CliError::Usage("--dynamic sgd needs --data".into()))?;
            dynamics::sgd_brd(&io::read_samples(path)?, &params)?
        }
        kind => {
            let ms = a.input.load()?;
            match kind {
                DynamicKind::Exact => dynamics::exact_brd_multi(&ms, &params)?,
                _ => {
                    if ms.len() != 2 {
                        return Err(CliError::Invalid("clamp and signed dynamics need exactly two environments".into()));
                    }
                    let w1 = population::least_squares(&ms[0])?.w_star;
                    let w2 = population::least_squares(&ms[1])?.w_star;
                    if matches!(kind, DynamicKind::Clamp) {
                        dynamics::clamp_brd(&w1, &w2, &params)?
                    } else {
                        dynamics::signed_grad_brd(&w1, &w2, &params)?
                    }
                }
            }
        }
    };
    io::write_text(&a.out, &trace_csv(&tr))?;

    if let Some(path) = &a.svg {
        let d = tr.final_strategies.first().map_or(0, Vec::len);
        let comps: Vec<usize> = if a.components.is_empty() { (0..d).collect() } else { a.components.clone() };
        if let Some(&c) = comps.iter().find(|&&c| c >= d) {
            return Err(CliError::Usage(format!("component {c} out of range (dimension {d})")));
        }
        let mut series = Vec::new();
        for &c in &comps {
            for e in 0..tr.final_strategies.len() {
                let pts = tr.rounds.iter().enumerate().map(|(t, r)| (t as f64, r.strategies[e][c])).collect();
                series.push(Series::new(format!("w{} [{c}]", e + 1), pts));
            }
            let pts = tr.rounds.iter().enumerate().map(|(t, r)| (t as f64, r.ensemble[c])).collect();
            series.push(Series { dashed: true, ..Series::new(format!("ensemble [{c}]"), pts) });
        }
        let chart = Chart { title: "Best-response trajectory".into(), x_label: "record".into(), y_label: "coefficient".into(), log_y: false, series };
        io::write_text(path, &chart.to_svg())?;
    }
    if verbose {
        eprintln!("stop reason: {:?}, rounds: {}, converged: {}", tr.stop_reason, tr.iterations, tr.converged);
    }
    Ok(0)
}

/// One line per recorded strategy and ensemble coefficient. `round` is the
/// record index (one record per mover for alternating dynamics, one per
/// round or epoch otherwise); `env` is 1-based or `ensemble`.
fn trace_csv(tr: &DynamicsTrace) -> String {
    let mut s = String::from("round,env,component,value\n");
    for (t, r) in tr.rounds.iter().enumerate() {
        for (e, w) in r.strategies.iter().enumerate() {
            for (i, v) in w.iter().enumerate() {
                s.push_str(&format!("{t},{},{i},{v:.16e}\n", e + 1));
            }
        }
        for (i, v) in r.ensemble.iter().enumerate() {
            s.push_str(&format!("{t},ensemble,{i},{v:.16e}\n"));
        }
    }
    s
}

fn run_bench(a: BenchArgs, verbose: bool) -> Result<u8, CliError> {
    if a.planar {
        let mut params = DynamicsParams::default();
        if let Some(v) = a.epochs {
            params.epochs = v;
        }
        let report = bench::planar_comparison_with(a.seed, bench::PLANAR_N, &params)?;
        let text = report.to_text();
        match &a.out {
            Some(path) => io::write_text(path, &text)?,
            None => print!("{text}"),
        }
        return Ok(0);
    }
    let spec: ExperimentSpec = match &a.config {
        Some(path) => io::read_json(path)?,
        None => {
            let mut dynamics = DynamicsParams::default();
            if let Some(v) = a.w_sup {
                dynamics.w_sup = v;
            }
            if let Some(v) = a.epochs {
                dynamics.epochs = v;
            }
            ExperimentSpec {
                setting: a.setting,
                p: a.p,
                q: a.q,
                sample_sizes: a.sizes.clone(),
                trials: a.trials,
                methods: a.methods.clone(),
                seed: a.seed,
                dynamics,
                preset: PresetOptions { shared_parameters: !a.independent_params, ..PresetOptions::default() },
                fixed_instance: a.fixed_instance,
            }
        }
    };
    let report = bench::run_experiment(&spec)?;
    if verbose {
        for c in &report.cells {
            eprintln!("{} n={} mean={:.4} se={:.4} failures={} ({:.2}s)", c.method, c.n, c.mean_error, c.stderr, c.failures.len(), c.wall_time_secs);
        }
    }
    for c in report.cells.iter().filter(|c| !c.failures.is_empty()) {
        for (trial, msg) in &c.failures {
            eprintln!("warning: {} n={} trial {trial} failed: {msg}", c.method, c.n);
        }
    }
    match &a.out {
        Some(path) => io::write_text(path, &report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    if let Some(path) = &a.svg {
        let mut series: Vec<Series> = spec
            .methods
            .iter()
            .map(|&m| {
                let pts = report.cells.iter().filter(|c| c.method == m).map(|c| (c.n as f64, c.mean_error)).collect();
                Series::new(m.name(), pts)
            })
            .collect();
        if a.literature {
            for name in ["IRM", "ICP", "ERM", "C-LRG"] {
                let pts = bench::literature_values(spec.setting).iter().filter(|r| r.0 == name).map(|r| (r.1 as f64, r.2)).collect();
                series.push(Series { dashed: true, ..Series::new(format!("{name} (published)"), pts) });
            }
        }
        let chart = Chart {
            title: format!("{} (p={}, q={})", spec.setting, spec.p, spec.q),
            x_label: "samples per environment".into(),
            y_label: "squared error".into(),
            log_y: true,
            series,
        };
        io::write_text(path, &chart.to_svg())?;
    }
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<u8, CliError> {
    let checks = clrg::verify::run_all(a.seed);
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { 0 } else { 2 })
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}
