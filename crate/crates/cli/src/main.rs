use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use critmet::experiments::{self, SweepSpec};
use critmet::fock::OracleConfig;
use critmet::onoff;
use critmet::qfi::{self, qfi_from_trajectory};
use critmet::{integrate, Error, IntegratorConfig, Schedule, SystemParams};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_VIOLATION: u8 = 5;

/// Oracle agreement required by `--oracle-check`.
const ORACLE_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "critmet",
    version,
    about = "Squeezing protocols, QFI sweeps and bound audits for a driven critical mode"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one schedule and write its trajectory CSV.
    Simulate(SimulateArgs),
    /// Run a parameter sweep described by a JSON spec.
    Sweep(SweepArgs),
    /// Audit the analytic bounds on sweeps or random schedules.
    Bounds(BoundsArgs),
    /// Fit a scaling law to a sweep CSV.
    Fit(FitArgs),
    /// Compare the phase-plane model with number-basis evolution.
    OracleCheck(OracleArgs),
    /// Print the optimal on-off protocol for a horizon.
    Protocol(ProtocolArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScheduleChoice {
    /// Solved on-off protocol, driven by phase feedback.
    Onoff,
    /// ε held at eps_max from t = 0.
    Quench,
    /// ε held at a given value.
    Constant,
}

/// Contents of a `simulate --config` file. Flags override each field.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    schedule: Option<ScheduleSpec>,
    n: Option<u32>,
    #[serde(rename = "wT")]
    wt: Option<f64>,
    eps_max: Option<f64>,
    eps: Option<f64>,
    out: Option<PathBuf>,
    integrator: Option<IntegratorConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScheduleSpec {
    Named(ScheduleChoice),
    Explicit(Schedule),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleChoice>,
    /// Winding number of the on-off protocol; optimized when absent.
    #[arg(long)]
    n: Option<u32>,
    /// Total time in units of 1/ω.
    #[arg(long = "wT")]
    wt: Option<f64>,
    /// Control ceiling, in units of ω.
    #[arg(long, alias = "eps-on")]
    eps_max: Option<f64>,
    /// Value for `--schedule constant`.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stride: Option<f64>,
    /// Also evolve in the number basis and report relative errors.
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Sweep spec whose grid points are audited.
    #[arg(long, conflicts_with_all = ["random", "monotone"])]
    config: Option<PathBuf>,
    /// Audit this many seeded random piecewise-constant schedules.
    #[arg(long)]
    random: Option<usize>,
    /// Audit this many seeded random monotone schedules.
    #[arg(long, conflicts_with = "random")]
    monotone: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "wT", default_value_t = 10.0)]
    wt: f64,
    #[arg(long, default_value_t = 1.0)]
    eps_max: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FitKind {
    /// ln F against ln T.
    Power,
    /// ln F against T.
    Exp,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    window: Vec<f64>,
    #[arg(long, value_enum, default_value = "power")]
    kind: FitKind,
    /// Keep only rows with this n.
    #[arg(long)]
    n: Option<u32>,
    /// Keep only rows with this gamma.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value = "T")]
    x: String,
    #[arg(long, default_value = "qfi")]
    y: String,
}

#[derive(Args)]
struct OracleArgs {
    /// File holding one schedule as JSON; random schedules otherwise.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Horizon for `--schedule`.
    #[arg(long = "wT")]
    wt: Option<f64>,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest random horizon.
    #[arg(long = "wT-max", default_value_t = 5.0)]
    wt_max: f64,
    #[arg(long, default_value_t = ORACLE_TOL)]
    tol: f64,
}

#[derive(Args)]
struct ProtocolArgs {
    #[arg(long = "wT")]
    wt: Option<f64>,
    /// Fixed winding number; optimized when absent.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    eps_max: f64,
    /// Print the asymptotic constants instead of a solution.
    #[arg(long)]
    asymptotics: bool,
}

/// An error with a chosen exit code and no further context.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Exit>() {
            return e.0;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.exit_code() as u8;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_CONFIG;
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_NUMERIC
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Bounds(a) => bounds(a),
        Command::Fit(a) => fit(a),
        Command::OracleCheck(a) => oracle_check(a),
        Command::Protocol(a) => protocol(a),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Exit(EXIT_CONFIG, msg.into()).into()
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> critmet::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write(&mut w)?;
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg: SimulateConfig = match &args.config {
        Some(p) => serde_json::from_str(&read_text(p)?).context("parsing simulate config")?,
        None => SimulateConfig::default(),
    };
    let params = SystemParams::default();
    let horizon = args
        .wt
        .or(cfg.wt)
        .ok_or_else(|| config_error("missing --wT"))?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(config_error(format!("--wT = {horizon} must be positive")));
    }
    let eps_max = args.eps_max.or(cfg.eps_max).unwrap_or(params.omega);
    let mut integrator = cfg.integrator.unwrap_or_default();
    if let Some(s) = args.stride {
        integrator.output_stride = s;
    }
    let spec = match (args.schedule, cfg.schedule) {
        (Some(c), _) => ScheduleSpec::Named(c),
        (None, Some(s)) => s,
        (None, None) => return Err(config_error("missing --schedule")),
    };
    let n = args.n.or(cfg.n);

    // (feedback schedule, time-programmed twin for the oracle)
    let (schedule, programmed) = match spec {
        ScheduleSpec::Named(ScheduleChoice::Onoff) => {
            let sol = match n {
                Some(n) => onoff::solve_fixed_n(horizon, n, eps_max, params.omega)?,
                None => experiments::optimal_protocol(horizon, eps_max, params.omega)?,
            };
            if !sol.feasible {
                return Err(Error::Infeasible { n: sol.n, horizon }.into());
            }
            eprintln!("protocol: {}", sol.to_json());
            let fb = Schedule::feedback_from_onoff_solution(&sol)?;
            (fb, Schedule::from_onoff_solution(&sol, &params)?)
        }
        ScheduleSpec::Named(ScheduleChoice::Quench) => {
            let s = Schedule::constant(eps_max).with_eps_max(eps_max);
            (s.clone(), s)
        }
        ScheduleSpec::Named(ScheduleChoice::Constant) => {
            let eps = args
                .eps
                .or(cfg.eps)
                .ok_or_else(|| config_error("--schedule constant needs --eps"))?;
            let s = Schedule::constant(eps);
            (s.clone(), s)
        }
        ScheduleSpec::Explicit(s) => (s.clone(), s),
    };
    schedule.validate(&params)?;

    let traj = integrate(&params, &schedule, horizon, &integrator)?;
    let out = args
        .out
        .or(cfg.out)
        .unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    write_file(&out, |w| traj.write_csv(w))?;
    let f = &traj.final_state;
    println!(
        "T = {:?}  r = {:?}  Phi = {:?}  n = {}  F = {:?}  csv = {}",
        horizon,
        f.r(),
        f.phi_unwrapped,
        traj.winding,
        qfi_from_trajectory(&traj).value,
        out.display()
    );

    if args.oracle_check {
        let cmp = experiments::oracle_compare(
            &programmed,
            horizon,
            &params,
            &integrator,
            &OracleConfig::default(),
        )?;
        println!(
            "oracle: rel_err_r = {:.3e}  rel_err_state = {:.3e}  rel_err_qfi = {:.3e}  (dim {})",
            cmp.rel_err_r, cmp.rel_err_state, cmp.rel_err_qfi, cmp.fock_dim
        );
        if !(cmp.max_rel_err() < ORACLE_TOL) {
            bail!(Exit(
                EXIT_NUMERIC,
                format!(
                    "oracle disagreement {:.3e} exceeds {ORACLE_TOL:e}",
                    cmp.max_rel_err()
                )
            ));
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut spec = SweepSpec::from_json(&read_text(&args.config)?)?;
    if let Some(o) = args.out {
        spec.output = Some(o);
    }
    if let Some(w) = args.workers {
        spec.workers = Some(w);
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let outcome = experiments::run_sweep(&spec)?;
    println!("{}", serde_json::to_string(&outcome)?);
    if outcome.failures > 0 {
        let errs = experiments::errors_path(&outcome.output);
        bail!(Exit(
            EXIT_NUMERIC,
            format!(
                "{} grid points failed; see {}",
                outcome.failures,
                errs.display()
            )
        ));
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let params = SystemParams::default();
    let cfg = IntegratorConfig::default();
    let report = if let Some(path) = &args.config {
        experiments::audit_sweep(&SweepSpec::from_json(&read_text(path)?)?)?
    } else if let Some(count) = args.random {
        experiments::audit_random(args.seed, count, args.wt, args.eps_max, &params, &cfg)?
    } else if let Some(count) = args.monotone {
        experiments::audit_monotone(args.seed, count, args.wt, args.eps_max, &params, &cfg)?
    } else {
        return Err(config_error("give one of --config, --random or --monotone"));
    };
    let summary = report.summary();
    let violations: Vec<_> = report.violations().collect();
    let json = serde_json::json!({
        "trajectories": report.trajectories,
        "all_satisfied": report.all_satisfied(),
        "summary": summary,
        "violations": violations,
        "errors": report.errors,
    });
    let text = serde_json::to_string_pretty(&json)?;
    match &args.out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    for s in &summary {
        eprintln!(
            "{:<18} {:>6} checks  {:>4} violations  worst relative margin {:.3e}",
            s.kind, s.checks, s.violations, s.worst_relative_margin
        );
    }
    if !report.errors.is_empty() {
        eprintln!("{} runs could not be evaluated", report.errors.len());
    }
    if !report.all_satisfied() {
        bail!(Exit(
            EXIT_VIOLATION,
            format!("{} bound violations", violations.len())
        ));
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let [lo, hi] = args.window[..] else {
        return Err(config_error("--window takes two values"));
    };
    let mut filter = Vec::new();
    if let Some(n) = args.n {
        filter.push(("n", n as f64));
    }
    if let Some(g) = args.gamma {
        filter.push(("gamma", g));
    }
    let points = experiments::read_columns(&read_text(&args.csv)?, &args.x, &args.y, &filter)?;
    let result = match args.kind {
        FitKind::Power => qfi::fit_power_law(&points, (lo, hi))?,
        FitKind::Exp => qfi::fit_exponent(&points, (lo, hi))?,
    };
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn oracle_check(args: OracleArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};

    let params = SystemParams::default();
    let cfg = IntegratorConfig::default();
    let cases: Vec<(Schedule, f64)> = match &args.schedule {
        Some(path) => {
            let s = Schedule::from_json(&read_text(path)?)?;
            let t = args
                .wt
                .or_else(|| Some(s.horizon()).filter(|h| h.is_finite()));
            vec![(
                s,
                t.ok_or_else(|| config_error("schedule has no horizon; pass --wT"))?,
            )]
        }
        None => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.count)
                .map(|_| {
                    let t = rng.gen_range(1.0..=args.wt_max);
                    (
                        critmet::schedules::random_piecewise(&mut rng, t, 6, params.omega),
                        t,
                    )
                })
                .collect()
        }
    };
    let mut worst: f64 = 0.0;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "T,r_gauss,r_fock,phi_gauss,phi_fock,qfi_gauss,qfi_fock,max_rel_err"
    )?;
    for (s, t) in &cases {
        let c = experiments::oracle_compare(s, *t, &params, &cfg, &OracleConfig::default())?;
        worst = worst.max(c.max_rel_err());
        writeln!(
            out,
            "{t:?},{:?},{:?},{:?},{:?},{:?},{:?},{:e}",
            c.r_gauss,
            c.r_fock,
            c.phi_gauss,
            c.phi_fock,
            c.qfi_gauss,
            c.qfi_fock,
            c.max_rel_err()
        )?;
    }
    eprintln!(
        "worst relative error {worst:.3e} over {} schedules",
        cases.len()
    );
    if !(worst < args.tol) {
        bail!(Exit(
            EXIT_NUMERIC,
            format!("oracle disagreement {worst:.3e} exceeds {:e}", args.tol)
        ));
    }
    Ok(())
}

fn protocol(args: ProtocolArgs) -> Result<()> {
    let omega = SystemParams::default().omega;
    if args.asymptotics {
        let json = serde_json::json!({
            "phi_star": onoff::phi_star(),
            "n_opt_per_wT": onoff::n_opt_asymptotic(1.0, omega),
            "r_per_wT": onoff::r_rate_asymptotic(),
            "gamma": onoff::gamma_exponent(args.eps_max, omega)?,
        });
        println!("{json}");
        return Ok(());
    }
    let horizon = args
        .wt
        .ok_or_else(|| anyhow!(Exit(EXIT_CONFIG, "missing --wT".into())))?;
    let sol = match args.n {
        Some(n) => onoff::solve_fixed_n(horizon, n, args.eps_max, omega)?,
        None => {
            onoff::optimize_n(
                horizon,
                args.eps_max,
                omega,
                onoff::default_n_max(horizon, omega),
            )?
            .best
        }
    };
    println!("{}", sol.to_json());
    Ok(())
}
