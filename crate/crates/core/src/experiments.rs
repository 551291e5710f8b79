//! Sweeps over protocol families, bound audits and oracle comparisons:
//! everything the command-line front end drives.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundReport};
use crate::dynamics::{integrate, IntegratorConfig, SystemParams, Trajectory};
use crate::error::{Error, Result};
use crate::fock::{self, OracleConfig};
use crate::onoff::{self, OnOffSolution};
use crate::open_system::{self, OpenParams};
use crate::qfi::qfi_from_trajectory;
use crate::schedules::{self, Schedule};

pub const WORKERS_ENV: &str = "CRITMET_WORKERS";
pub const SWEEP_HEADER: &str = "T,n,eps_max,qfi,envelope,r_final,winding";
pub const OPEN_SWEEP_HEADER: &str = "T,n,eps_max,gamma,qfi,envelope,r_final,winding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    FixedN,
    OptimalN,
    Open,
    MonotoneFamily,
}

/// Horizon grid: an explicit list or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TGrid {
    List(Vec<f64>),
    Log {
        log_from: f64,
        log_to: f64,
        points: usize,
    },
    Linear {
        from: f64,
        to: f64,
        points: usize,
    },
}

impl TGrid {
    pub fn values(&self) -> Vec<f64> {
        let spaced = |a: f64, b: f64, k: usize| -> Vec<f64> {
            match k {
                0 => vec![],
                1 => vec![a],
                _ => (0..k)
                    .map(|i| {
                        if i + 1 == k {
                            b
                        } else {
                            a + (b - a) * i as f64 / (k - 1) as f64
                        }
                    })
                    .collect(),
            }
        };
        match self {
            TGrid::List(v) => v.clone(),
            TGrid::Linear { from, to, points } => spaced(*from, *to, *points),
            TGrid::Log {
                log_from,
                log_to,
                points,
            } => {
                let mut v: Vec<f64> = spaced(log_from.ln(), log_to.ln(), *points)
                    .into_iter()
                    .map(f64::exp)
                    .collect();
                // pin the end points exactly
                if let Some(f) = v.first_mut() {
                    *f = *log_from;
                }
                if v.len() > 1 {
                    *v.last_mut().unwrap() = *log_to;
                }
                v
            }
        }
    }
}

fn default_eps_max() -> f64 {
    1.0
}

fn default_omega() -> f64 {
    1.0
}

fn default_samples() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub mode: SweepMode,
    #[serde(rename = "T")]
    pub t_grid: TGrid,
    /// Winding numbers for `fixed_n`.
    #[serde(default)]
    pub n: Vec<u32>,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub nbar: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Random schedules per horizon for `monotone_family`.
    #[serde(default = "default_samples")]
    pub samples: u32,
}

impl SweepSpec {
    pub fn new(mode: SweepMode, t_grid: TGrid) -> Self {
        SweepSpec {
            mode,
            t_grid,
            n: vec![],
            eps_max: 1.0,
            gamma: vec![],
            nbar: 0.0,
            omega: 1.0,
            integrator: IntegratorConfig::default(),
            output: None,
            workers: None,
            seed: 0,
            samples: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ts = self.t_grid.values();
        if ts.is_empty() {
            return Err(Error::Config("T grid is empty".into()));
        }
        if ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("T values must be positive".into()));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("T values must be strictly increasing".into()));
        }
        let params = self.params()?;
        if !(self.eps_max >= 0.0 && self.eps_max <= params.omega) {
            return Err(Error::Config(format!(
                "eps_max = {} outside [0, omega]: dynamics are restricted to the symmetric phase",
                self.eps_max
            )));
        }
        match self.mode {
            SweepMode::FixedN if self.n.is_empty() => {
                return Err(Error::Config(
                    "fixed_n sweep needs a non-empty n list".into(),
                ))
            }
            SweepMode::Open if self.gamma.is_empty() => {
                return Err(Error::Config(
                    "open sweep needs a non-empty gamma list".into(),
                ))
            }
            SweepMode::Open => {
                for &g in &self.gamma {
                    OpenParams::new(g, self.nbar).map_err(|e| Error::Config(e.to_string()))?;
                }
            }
            SweepMode::MonotoneFamily if self.samples == 0 => {
                return Err(Error::Config("samples must be >= 1".into()))
            }
            _ => {}
        }
        self.integrator
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::new(self.omega).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn header(&self) -> &'static str {
        if self.mode == SweepMode::Open {
            OPEN_SWEEP_HEADER
        } else {
            SWEEP_HEADER
        }
    }

    /// Grid points in output order: outer loop over γ, then n (or sample
    /// index), innermost over T.
    pub fn grid(&self) -> Vec<GridPoint> {
        let ts = self.t_grid.values();
        let mut out = Vec::new();
        let mut push = |gamma: Option<f64>, n: Option<u32>| {
            for &t in &ts {
                out.push(GridPoint {
                    index: out.len(),
                    t,
                    n,
                    gamma,
                });
            }
        };
        match self.mode {
            SweepMode::FixedN => self.n.iter().for_each(|&n| push(None, Some(n))),
            SweepMode::OptimalN => push(None, None),
            SweepMode::Open => self.gamma.iter().for_each(|&g| push(Some(g), None)),
            SweepMode::MonotoneFamily => (0..self.samples).for_each(|i| push(None, Some(i))),
        }
        out
    }

    /// Everything that determines the sweep's content.
    fn fingerprint(&self) -> String {
        let mut s = self.clone();
        s.output = None;
        s.workers = None;
        serde_json::to_string(&s).expect("spec serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub index: usize,
    #[serde(rename = "T")]
    pub t: f64,
    /// Winding number for `fixed_n`, sample index for `monotone_family`.
    pub n: Option<u32>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: f64,
    /// Protocol winding number; sample index for `monotone_family`.
    pub n: u32,
    pub eps_max: f64,
    pub gamma: Option<f64>,
    /// Closed systems: the QFI. Open systems: the upper bound 4T∫sinh²2r.
    pub qfi: f64,
    /// Closed systems: 2(∫sinh 2r)². Open systems: the instantaneous QFI at T.
    pub envelope: f64,
    pub r_final: f64,
    pub winding: i64,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        match self.gamma {
            Some(g) => format!(
                "{:?},{},{:?},{:?},{:?},{:?},{:?},{}",
                self.t,
                self.n,
                self.eps_max,
                g,
                self.qfi,
                self.envelope,
                self.r_final,
                self.winding
            ),
            None => format!(
                "{:?},{},{:?},{:?},{:?},{:?},{}",
                self.t, self.n, self.eps_max, self.qfi, self.envelope, self.r_final, self.winding
            ),
        }
    }
}

/// Resolve the worker count: the environment wins over the spec.
pub fn resolve_workers(requested: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{WORKERS_ENV} = {v:?} is not a positive integer"
            ))),
        };
    }
    Ok(requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Optimal on-off protocol at horizon T.
pub fn optimal_protocol(horizon: f64, eps_max: f64, omega: f64) -> Result<OnOffSolution> {
    let scan = onoff::optimize_n(
        horizon,
        eps_max,
        omega,
        onoff::default_n_max(horizon, omega),
    )?;
    if !scan.best.feasible {
        return Err(Error::Infeasible {
            n: scan.best.n,
            horizon,
        });
    }
    Ok(scan.best)
}

/// Closed-system run of a solved protocol under phase feedback.
pub fn run_protocol(
    sol: &OnOffSolution,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let schedule = Schedule::feedback_from_onoff_solution(sol)?;
    integrate(params, &schedule, sol.horizon, cfg)
}

fn closed_row(traj: &Trajectory, n: u32, eps_max: f64) -> SweepRow {
    let q = qfi_from_trajectory(traj);
    SweepRow {
        t: traj.horizon(),
        n,
        eps_max,
        gamma: None,
        qfi: q.value,
        envelope: q.envelope,
        r_final: traj.final_state.r(),
        winding: traj.winding,
    }
}

fn monotone_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The trajectory behind one closed-system grid point.
pub fn point_trajectory(spec: &SweepSpec, point: &GridPoint) -> Result<(Trajectory, u32)> {
    let params = spec.params()?;
    let omega = params.omega;
    match spec.mode {
        SweepMode::FixedN => {
            let n = point.n.expect("fixed_n grid carries n");
            let sol = onoff::solve_fixed_n(point.t, n, spec.eps_max, omega)?;
            if !sol.feasible {
                return Err(Error::Infeasible {
                    n,
                    horizon: point.t,
                });
            }
            Ok((run_protocol(&sol, &params, &spec.integrator)?, n))
        }
        SweepMode::OptimalN => {
            let sol = optimal_protocol(point.t, spec.eps_max, omega)?;
            Ok((run_protocol(&sol, &params, &spec.integrator)?, sol.n))
        }
        SweepMode::MonotoneFamily => {
            let mut rng = monotone_rng(spec.seed, point.index);
            let schedule = schedules::random_monotone(&mut rng, point.t, spec.eps_max);
            Ok((
                integrate(&params, &schedule, point.t, &spec.integrator)?,
                point.n.unwrap_or(0),
            ))
        }
        SweepMode::Open => Err(Error::Config(
            "open-system points have no closed trajectory".into(),
        )),
    }
}

/// Evaluate a single grid point.
pub fn run_point(spec: &SweepSpec, point: &GridPoint) -> Result<SweepRow> {
    if spec.mode != SweepMode::Open {
        let (traj, n) = point_trajectory(spec, point)?;
        return Ok(closed_row(&traj, n, spec.eps_max));
    }
    let params = spec.params()?;
    let gamma = point.gamma.expect("open grid carries gamma");
    let open = OpenParams::new(gamma, spec.nbar)?;
    let sol = optimal_protocol(point.t, spec.eps_max, params.omega)?;
    let schedule = Schedule::feedback_from_onoff_solution(&sol)?;
    let traj = open_system::integrate_open(&params, &open, &schedule, point.t, &spec.integrator)?;
    let f = &traj.final_state;
    Ok(SweepRow {
        t: point.t,
        n: sol.n,
        eps_max: spec.eps_max,
        gamma: Some(gamma),
        qfi: open_system::qfi_open_bound(std::slice::from_ref(f), point.t),
        envelope: open_system::instantaneous_qfi(f),
        r_final: f.r,
        winding: traj.winding,
    })
}

#[derive(Debug)]
pub struct PointResult {
    pub point: GridPoint,
    pub row: Result<SweepRow>,
}

/// Evaluate the whole grid in memory, in grid order.
pub fn evaluate(spec: &SweepSpec) -> Result<Vec<PointResult>> {
    spec.validate()?;
    let workers = resolve_workers(spec.workers)?;
    let grid = spec.grid();
    Ok(pool(workers)?.install(|| {
        grid.par_iter()
            .map(|p| PointResult {
                point: *p,
                row: run_point(spec, p),
            })
            .collect()
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum JournalEntry {
    Spec {
        spec: String,
    },
    Done {
        index: usize,
        line: String,
    },
    Failed {
        index: usize,
        code: i32,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub output: PathBuf,
    pub rows: usize,
    pub failures: usize,
    /// False when a point limit stopped the run before the grid was done.
    pub complete: bool,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn journal_path(output: &Path) -> PathBuf {
    sibling(output, ".journal")
}

pub fn errors_path(output: &Path) -> PathBuf {
    sibling(output, ".errors.jsonl")
}

/// Entries already completed, keyed by grid index. A torn final line from an
/// interrupted write is ignored.
fn read_journal(path: &Path, fingerprint: &str) -> Result<BTreeMap<usize, JournalEntry>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let Ok(entry) = serde_json::from_str::<JournalEntry>(&line) else {
            continue;
        };
        match &entry {
            JournalEntry::Spec { spec } => {
                if i != 0 || spec != fingerprint {
                    return Err(Error::Config(format!(
                        "journal {} belongs to a different sweep; remove it to start over",
                        path.display()
                    )));
                }
            }
            JournalEntry::Done { index, .. } | JournalEntry::Failed { index, .. } => {
                done.insert(*index, entry);
            }
        }
    }
    Ok(done)
}

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = sibling(path, ".tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Run a sweep to its output CSV, resuming from the journal if one exists.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    run_sweep_limited(spec, None)
}

/// As [`run_sweep`], but stop after evaluating at most `limit` new points,
/// leaving the journal in place as an interrupted run would.
pub fn run_sweep_limited(spec: &SweepSpec, limit: Option<usize>) -> Result<SweepOutcome> {
    spec.validate()?;
    let output = spec
        .output
        .clone()
        .ok_or_else(|| Error::Config("sweep needs an output path".into()))?;
    let workers = resolve_workers(spec.workers)?;
    let journal = journal_path(&output);
    let fingerprint = spec.fingerprint();
    let mut done = read_journal(&journal, &fingerprint)?;

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&journal)?;
    if file.metadata()?.len() == 0 {
        writeln!(
            file,
            "{}",
            serde_json::to_string(&JournalEntry::Spec { spec: fingerprint })?
        )?;
    } else {
        // a torn line may lack its newline; start fresh on the next one
        writeln!(file)?;
    }

    let mut todo: Vec<GridPoint> = spec
        .grid()
        .into_iter()
        .filter(|p| !done.contains_key(&p.index))
        .collect();
    let complete = limit.is_none_or(|l| l >= todo.len());
    if let Some(l) = limit {
        todo.truncate(l);
    }

    let (tx, rx) = mpsc::channel::<JournalEntry>();
    let pool = pool(workers)?;
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                todo.par_iter().for_each_with(tx, |tx, p| {
                    let entry = match run_point(spec, p) {
                        Ok(row) => JournalEntry::Done {
                            index: p.index,
                            line: row.csv_line(),
                        },
                        Err(e) => JournalEntry::Failed {
                            index: p.index,
                            code: e.exit_code(),
                            error: e.to_string(),
                        },
                    };
                    // the receiver only disappears if journaling failed
                    let _ = tx.send(entry);
                })
            })
        });
        for entry in rx {
            writeln!(file, "{}", serde_json::to_string(&entry)?)?;
            file.flush()?;
            if let JournalEntry::Done { index, .. } | JournalEntry::Failed { index, .. } = entry {
                done.insert(index, entry);
            }
        }
        Ok(())
    })?;
    file.sync_all()?;
    drop(file);

    let failures = done
        .values()
        .filter(|e| matches!(e, JournalEntry::Failed { .. }))
        .count();
    let rows = done.len() - failures;
    if !complete {
        return Ok(SweepOutcome {
            output,
            rows,
            failures,
            complete,
        });
    }

    let mut csv = String::from(spec.header());
    csv.push('\n');
    let mut errors = String::new();
    let grid = spec.grid();
    for (index, entry) in &done {
        match entry {
            JournalEntry::Done { line, .. } => {
                csv.push_str(line);
                csv.push('\n');
            }
            JournalEntry::Failed { code, error, .. } => {
                let p = &grid[*index];
                let record = serde_json::json!({
                    "index": index, "T": p.t, "n": p.n, "gamma": p.gamma, "exit_code": code, "error": error
                });
                errors.push_str(&record.to_string());
                errors.push('\n');
            }
            JournalEntry::Spec { .. } => {}
        }
    }
    write_atomic(&output, &csv)?;
    let err_path = errors_path(&output);
    if errors.is_empty() {
        if err_path.exists() {
            fs::remove_file(&err_path)?;
        }
    } else {
        write_atomic(&err_path, &errors)?;
    }
    fs::remove_file(&journal)?;
    Ok(SweepOutcome {
        output,
        rows,
        failures,
        complete,
    })
}

/// (x, y) columns of a CSV, keeping rows whose `filter` columns equal the given values.
pub fn read_columns(
    text: &str,
    x: &str,
    y: &str,
    filter: &[(&str, f64)],
) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Config(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found")))
    };
    let (xi, yi) = (col(x)?, col(y)?);
    let filters: Vec<(usize, f64)> = filter
        .iter()
        .map(|(n, v)| col(n).map(|i| (i, *v)))
        .collect::<Result<_>>()?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("not a number: {s:?}")))
    };
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let mut keep = true;
        for &(i, v) in &filters {
            keep &= parse(&rec[i])? == v;
        }
        if keep {
            out.push((parse(&rec[xi])?, parse(&rec[yi])?));
        }
    }
    Ok(out)
}

/// Bound reports for one closed-system trajectory.
pub fn audit_trajectory(traj: &Trajectory, eps_max: f64) -> Result<Vec<BoundReport>> {
    let omega = traj.params.omega;
    let mut out = vec![bounds::thm1_check(traj)];
    out.extend(bounds::lemma_cycle_check(traj, eps_max, omega));
    if eps_max < omega {
        out.extend(bounds::thm4_check(traj, eps_max)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub trajectories: usize,
    pub reports: Vec<BoundReport>,
    /// Runs that could not be evaluated at all.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KindSummary {
    pub kind: String,
    pub checks: usize,
    pub violations: usize,
    /// Smallest margin relative to the bound.
    pub worst_relative_margin: f64,
}

impl AuditReport {
    pub fn violations(&self) -> impl Iterator<Item = &BoundReport> {
        self.reports.iter().filter(|r| !r.satisfied)
    }

    pub fn all_satisfied(&self) -> bool {
        self.errors.is_empty() && self.violations().next().is_none()
    }

    pub fn summary(&self) -> Vec<KindSummary> {
        let mut by_kind: BTreeMap<&str, KindSummary> = BTreeMap::new();
        for r in &self.reports {
            let e = by_kind.entry(&r.kind).or_insert_with(|| KindSummary {
                kind: r.kind.clone(),
                checks: 0,
                violations: 0,
                worst_relative_margin: f64::INFINITY,
            });
            e.checks += 1;
            e.violations += usize::from(!r.satisfied);
            let rel = if r.bound_value != 0.0 {
                r.margin / r.bound_value.abs()
            } else {
                r.margin
            };
            e.worst_relative_margin = e.worst_relative_margin.min(rel);
        }
        by_kind.into_values().collect()
    }

    fn absorb(&mut self, run: Result<Vec<BoundReport>>) {
        self.trajectories += 1;
        match run {
            Ok(r) => self.reports.extend(r),
            Err(e) => self.errors.push(e.to_string()),
        }
    }
}

/// Audit every closed-system point of a sweep. Monotone families are also
/// checked for zero winding.
pub fn audit_sweep(spec: &SweepSpec) -> Result<AuditReport> {
    spec.validate()?;
    if spec.mode == SweepMode::Open {
        return Err(Error::Config(
            "bound audits apply to closed-system sweeps".into(),
        ));
    }
    let workers = resolve_workers(spec.workers)?;
    let runs: Vec<Result<Vec<BoundReport>>> = pool(workers)?.install(|| {
        spec.grid()
            .par_iter()
            .map(|p| {
                let (traj, _) = point_trajectory(spec, p)?;
                let mut reps = audit_trajectory(&traj, spec.eps_max)?;
                if spec.mode == SweepMode::MonotoneFamily {
                    reps.push(winding_report(&traj));
                }
                Ok(reps)
            })
            .collect()
    });
    let mut report = AuditReport::default();
    runs.into_iter().for_each(|r| report.absorb(r));
    Ok(report)
}

/// Monotone schedules must end with zero winding.
fn winding_report(traj: &Trajectory) -> BoundReport {
    BoundReport::new("monotone_winding", 0, 0.0, traj.winding as f64)
}

/// Audit seeded random admissible piecewise-constant schedules.
pub fn audit_random(
    seed: u64,
    count: usize,
    horizon: f64,
    eps_max: f64,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheds: Vec<Schedule> = (0..count)
        .map(|_| schedules::random_piecewise(&mut rng, horizon, 8, eps_max))
        .collect();
    let runs: Vec<Result<Vec<BoundReport>>> = scheds
        .par_iter()
        .map(|s| audit_trajectory(&integrate(params, s, horizon, cfg)?, eps_max))
        .collect();
    let mut report = AuditReport::default();
    runs.into_iter().for_each(|r| report.absorb(r));
    Ok(report)
}

/// Audit seeded random monotone schedules for zero winding and the bounds.
pub fn audit_monotone(
    seed: u64,
    count: usize,
    horizon: f64,
    eps_max: f64,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheds: Vec<Schedule> = (0..count)
        .map(|_| schedules::random_monotone(&mut rng, horizon, eps_max))
        .collect();
    let runs: Vec<Result<Vec<BoundReport>>> = scheds
        .par_iter()
        .map(|s| {
            let traj = integrate(params, s, horizon, cfg)?;
            let mut reps = audit_trajectory(&traj, eps_max)?;
            reps.push(winding_report(&traj));
            Ok(reps)
        })
        .collect();
    let mut report = AuditReport::default();
    runs.into_iter().for_each(|r| report.absorb(r));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub r_gauss: f64,
    pub r_fock: f64,
    pub phi_gauss: f64,
    pub phi_fock: f64,
    pub qfi_gauss: f64,
    pub qfi_fock: f64,
    pub rel_err_r: f64,
    /// |Δ(sinh 2r e^{iφ})| / sinh 2r, which covers the phase.
    pub rel_err_state: f64,
    pub rel_err_qfi: f64,
    pub fock_dim: usize,
}

impl OracleComparison {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err_r.max(self.rel_err_state).max(self.rel_err_qfi)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Phase-plane description against brute-force number-basis evolution for a
/// time-programmed schedule started from the vacuum.
pub fn oracle_compare(
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    cfg: &IntegratorConfig,
    oracle: &OracleConfig,
) -> Result<OracleComparison> {
    let traj = integrate(params, schedule, horizon, cfg)?;
    let f = &traj.final_state;
    let q = qfi_from_trajectory(&traj);
    let psi = fock::evolve_vacuum(schedule, horizon, params, oracle)?;
    let (r_fock, phi_fock) = psi.gaussian_params();
    let (_, a2) = psi.moments();
    let z_fock = -2.0 * a2.conj();
    let z_gauss = Complex64::new(f.x, f.y);
    let qfi_fock = fock::qfi_fd(
        schedule,
        horizon,
        params,
        &OracleConfig {
            dim: psi.dim(),
            ..*oracle
        },
    )?;
    Ok(OracleComparison {
        r_gauss: f.r(),
        r_fock,
        phi_gauss: f.phi_unwrapped.rem_euclid(std::f64::consts::TAU),
        phi_fock,
        qfi_gauss: q.value,
        qfi_fock,
        rel_err_r: rel(f.r(), r_fock),
        rel_err_state: if z_gauss.norm() == 0.0 {
            z_fock.norm()
        } else {
            (z_gauss - z_fock).norm() / z_gauss.norm()
        },
        rel_err_qfi: rel(q.value, qfi_fock),
        fock_dim: psi.dim(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransitionScan {
    /// Horizon at which winding numbers n and n + 1 tie.
    pub t_critical: f64,
    pub below: OnOffSolution,
    pub above: OnOffSolution,
    /// Jump of the optimal total phase 2πn + φ̃ across the transition.
    pub phase_jump: f64,
    /// Jump of the optimal r_pred across the transition.
    pub r_jump: f64,
}

/// Locate the horizon in `[t_lo, t_hi]` where the optimal winding number
/// changes from n to n + 1, and compare the optima on either side.
pub fn transition_scan(
    n: u32,
    eps_max: f64,
    omega: f64,
    t_lo: f64,
    t_hi: f64,
    half_width: f64,
) -> Result<TransitionScan> {
    let gap = |t: f64| -> f64 {
        let a = onoff::solve_fixed_n(t, n, eps_max, omega);
        let b = onoff::solve_fixed_n(t, n + 1, eps_max, omega);
        match (a, b) {
            (Ok(a), Ok(b)) if a.feasible && b.feasible => b.r_pred - a.r_pred,
            (Ok(a), Ok(_)) if a.feasible => -1.0,
            _ => 1.0,
        }
    };
    let t_critical = crate::roots::brent_root(gap, t_lo, t_hi, 1e-13, 200).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "no n = {n} -> {} transition in [{t_lo}, {t_hi}]",
            n + 1
        ))
    })?;
    let best = |t: f64| optimal_protocol(t, eps_max, omega);
    let below = best(t_critical - half_width)?;
    let above = best(t_critical + half_width)?;
    Ok(TransitionScan {
        t_critical,
        below,
        above,
        phase_jump: above.total_phase() - below.total_phase(),
        r_jump: above.r_pred - below.r_pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_end_points() {
        let g = TGrid::Log {
            log_from: 100.0,
            log_to: 1000.0,
            points: 12,
        }
        .values();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 100.0);
        assert_eq!(g[11], 1000.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let ratio = g[1] / g[0];
        assert!((g[6] / g[5] - ratio).abs() < 1e-12);
    }

    #[test]
    fn spec_json_forms() {
        let s = SweepSpec::from_json(r#"{"mode":"fixed_n","T":[1,2,3],"n":[0,1]}"#).unwrap();
        assert_eq!(s.grid().len(), 6);
        assert_eq!(s.grid()[3].n, Some(1));
        let s = SweepSpec::from_json(r#"{"mode":"optimal_n","T":{"from":30,"to":70,"points":5}}"#)
            .unwrap();
        assert_eq!(s.t_grid.values(), vec![30.0, 40.0, 50.0, 60.0, 70.0]);
        let s = SweepSpec::from_json(
            r#"{"mode":"open","T":{"log_from":10,"log_to":20,"points":3},"gamma":[0.2,0.6]}"#,
        )
        .unwrap();
        assert_eq!(s.grid().len(), 6);
        assert_eq!(s.header(), OPEN_SWEEP_HEADER);
    }

    #[test]
    fn spec_rejections() {
        for bad in [
            r#"{"mode":"fixed_n","T":[1,2]}"#,
            r#"{"mode":"optimal_n","T":[]}"#,
            r#"{"mode":"optimal_n","T":[2,1]}"#,
            r#"{"mode":"optimal_n","T":[1,1]}"#,
            r#"{"mode":"optimal_n","T":[-1,1]}"#,
            r#"{"mode":"optimal_n","T":[1],"eps_max":1.5}"#,
            r#"{"mode":"open","T":[1]}"#,
            r#"{"mode":"optimal_n","T":[1],"bogus":1}"#,
            r#"{"mode":"sideways","T":[1]}"#,
        ] {
            let err = SweepSpec::from_json(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn shortest_float_formatting() {
        let row = SweepRow {
            t: 0.1,
            n: 2,
            eps_max: 1.0,
            gamma: None,
            qfi: 1e300,
            envelope: 2.5,
            r_final: 1.0 / 3.0,
            winding: 2,
        };
        assert_eq!(row.csv_line(), "0.1,2,1.0,1e300,2.5,0.3333333333333333,2");
        let back: f64 = "0.3333333333333333".parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn fixed_n_point_fills_horizon() {
        let mut spec = SweepSpec::new(SweepMode::FixedN, TGrid::List(vec![8.0]));
        spec.n = vec![1];
        let row = run_point(&spec, &spec.grid()[0]).unwrap();
        assert_eq!(row.winding, 1);
        assert_eq!(row.t, 8.0);
        assert!(row.qfi <= row.envelope);
        let sol = onoff::solve_fixed_n(8.0, 1, 1.0, 1.0).unwrap();
        // r_pred is the large-squeezing approximation, already close at r ≈ 2
        assert!((row.r_final - sol.r_pred).abs() < 0.03 * sol.r_pred);
    }

    #[test]
    fn columns_with_filter() {
        let text = "T,n,qfi\n1,0,2\n2,0,8\n1,1,3\n";
        assert_eq!(
            read_columns(text, "T", "qfi", &[("n", 0.0)]).unwrap(),
            vec![(1.0, 2.0), (2.0, 8.0)]
        );
        assert!(read_columns(text, "T", "nope", &[]).is_err());
    }

    #[test]
    fn audit_flags_violations() {
        let mut r = AuditReport::default();
        r.absorb(Ok(vec![
            BoundReport::new("a", 0, 1.0, 0.5),
            BoundReport::new("a", 1, 1.0, 2.0),
        ]));
        assert!(!r.all_satisfied());
        let s = r.summary();
        assert_eq!(s[0].violations, 1);
        assert_eq!(s[0].worst_relative_margin, -1.0);
    }
}
