//! Control laws ε(t): time-programmed pieces and phase-feedback on-off rules.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};
use crate::onoff::{self, OnOffSolution};

/// Relative slack when comparing a time against a schedule horizon.
const HORIZON_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant {
        eps: f64,
    },
    /// `(duration, eps)` pairs, applied back to back from t = 0.
    PiecewiseConstant {
        segments: Vec<(f64, f64)>,
    },
    LinearRamp {
        eps_start: f64,
        eps_end: f64,
        #[serde(rename = "T")]
        horizon: f64,
    },
    /// ε = eps_on while φ mod 2π ∈ [0, phi_on), otherwise 0. Once the
    /// winding number reaches `cycle_cap` the control is held at eps_on.
    OnoffFeedback {
        phi_on: f64,
        eps_on: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cycle_cap: Option<u32>,
    },
}

/// A control schedule with its declared ceiling. Values are absolute
/// frequencies; with ω = 1 they are in units of ω.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps_max: Option<f64>,
}

/// One interval of a time-programmed schedule with ε linear in t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub eps0: f64,
    pub eps1: f64,
}

impl Piece {
    pub fn eval(&self, t: f64) -> f64 {
        if self.eps0 == self.eps1 || self.t1 <= self.t0 {
            return self.eps0;
        }
        let s = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        self.eps0 + (self.eps1 - self.eps0) * s
    }
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Schedule {
            kind,
            eps_max: None,
        }
    }

    pub fn with_eps_max(mut self, eps_max: f64) -> Self {
        self.eps_max = Some(eps_max);
        self
    }

    pub fn constant(eps: f64) -> Self {
        Self::new(ScheduleKind::Constant { eps })
    }

    pub fn piecewise(segments: Vec<(f64, f64)>) -> Self {
        Self::new(ScheduleKind::PiecewiseConstant { segments })
    }

    pub fn ramp(eps_start: f64, eps_end: f64, horizon: f64) -> Self {
        Self::new(ScheduleKind::LinearRamp {
            eps_start,
            eps_end,
            horizon,
        })
    }

    pub fn onoff_feedback(phi_on: f64, eps_on: f64, cycle_cap: Option<u32>) -> Self {
        Self::new(ScheduleKind::OnoffFeedback {
            phi_on,
            eps_on,
            cycle_cap,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }

    /// Declared ceiling, defaulting to the largest value the schedule takes.
    pub fn eps_max(&self) -> f64 {
        self.eps_max.unwrap_or_else(|| self.largest_value())
    }

    fn largest_value(&self) -> f64 {
        match &self.kind {
            ScheduleKind::Constant { eps } => *eps,
            ScheduleKind::PiecewiseConstant { segments } => {
                segments.iter().map(|s| s.1).fold(0.0, f64::max)
            }
            ScheduleKind::LinearRamp {
                eps_start, eps_end, ..
            } => eps_start.max(*eps_end),
            ScheduleKind::OnoffFeedback { eps_on, .. } => *eps_on,
        }
    }

    pub fn is_feedback(&self) -> bool {
        matches!(self.kind, ScheduleKind::OnoffFeedback { .. })
    }

    /// Horizon over which the schedule is defined (infinite for constant and
    /// feedback laws).
    pub fn horizon(&self) -> f64 {
        match &self.kind {
            ScheduleKind::PiecewiseConstant { segments } => segments.iter().map(|s| s.0).sum(),
            ScheduleKind::LinearRamp { horizon, .. } => *horizon,
            _ => f64::INFINITY,
        }
    }

    /// Short human-readable identifier used in trajectory metadata.
    pub fn label(&self) -> String {
        match &self.kind {
            ScheduleKind::Constant { eps } => format!("constant(eps={eps})"),
            ScheduleKind::PiecewiseConstant { segments } => {
                format!("piecewise({} segments)", segments.len())
            }
            ScheduleKind::LinearRamp {
                eps_start,
                eps_end,
                horizon,
            } => {
                format!("ramp({eps_start}->{eps_end}, T={horizon})")
            }
            ScheduleKind::OnoffFeedback {
                phi_on,
                eps_on,
                cycle_cap,
            } => match cycle_cap {
                Some(c) => format!("onoff_feedback(phi_on={phi_on}, eps_on={eps_on}, cap={c})"),
                None => format!("onoff_feedback(phi_on={phi_on}, eps_on={eps_on})"),
            },
        }
    }

    /// Check the admissible range 0 ≤ ε ≤ eps_max ≤ ω and structural invariants.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let eps_max = self.eps_max();
        if !(eps_max.is_finite() && eps_max >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_max = {eps_max} must be finite and >= 0"
            )));
        }
        if eps_max > params.omega * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "eps_max = {eps_max} exceeds omega = {}: controls are restricted to the symmetric phase 0 <= eps <= omega",
                params.omega
            )));
        }
        let check = |eps: f64| -> Result<()> {
            if !(eps.is_finite() && eps >= 0.0 && eps <= eps_max * (1.0 + 1e-12)) {
                return Err(Error::InvalidParameter(format!(
                    "control value {eps} outside [0, eps_max = {eps_max}] (symmetric phase requires 0 <= eps <= omega)"
                )));
            }
            Ok(())
        };
        match &self.kind {
            ScheduleKind::Constant { eps } => check(*eps),
            ScheduleKind::PiecewiseConstant { segments } => {
                if segments.is_empty() {
                    return Err(Error::InvalidParameter(
                        "piecewise schedule has no segments".into(),
                    ));
                }
                for &(d, e) in segments {
                    if !(d.is_finite() && d > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "segment duration {d} must be > 0"
                        )));
                    }
                    check(e)?;
                }
                Ok(())
            }
            ScheduleKind::LinearRamp {
                eps_start,
                eps_end,
                horizon,
            } => {
                if !(horizon.is_finite() && *horizon > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "ramp horizon {horizon} must be > 0"
                    )));
                }
                check(*eps_start)?;
                check(*eps_end)
            }
            ScheduleKind::OnoffFeedback { phi_on, eps_on, .. } => {
                if !(*phi_on > 0.0 && *phi_on < TAU) {
                    return Err(Error::InvalidParameter(format!(
                        "phi_on = {phi_on} must lie in (0, 2pi)"
                    )));
                }
                check(*eps_on)
            }
        }
    }

    /// Control value at time `t` and current phase `phi_mod` ∈ [0, 2π).
    /// Time-programmed variants ignore the phase; the feedback rule ignores t.
    pub fn eval(&self, t: f64, phi_mod: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + HORIZON_SLACK) + HORIZON_SLACK) {
            return Err(Error::Domain { t, horizon });
        }
        Ok(match &self.kind {
            ScheduleKind::Constant { eps } => *eps,
            ScheduleKind::PiecewiseConstant { segments } => {
                let mut start = 0.0;
                let mut value = segments.last().map(|s| s.1).unwrap_or(0.0);
                for &(d, e) in segments {
                    if t < start + d {
                        value = e;
                        break;
                    }
                    start += d;
                }
                value
            }
            ScheduleKind::LinearRamp {
                eps_start,
                eps_end,
                horizon,
            } => {
                let s = (t / horizon).clamp(0.0, 1.0);
                eps_start + (eps_end - eps_start) * s
            }
            ScheduleKind::OnoffFeedback { phi_on, eps_on, .. } => {
                let m = phi_mod.rem_euclid(TAU);
                if m < *phi_on {
                    *eps_on
                } else {
                    0.0
                }
            }
        })
    }

    /// True iff ε is non-decreasing on a uniform grid of `resolution` points
    /// over the horizon (or over `[0, 1]` for an unbounded constant schedule).
    /// Feedback schedules are never reported monotone.
    pub fn is_monotone(&self, resolution: usize) -> bool {
        if self.is_feedback() {
            return false;
        }
        let horizon = match self.horizon() {
            h if h.is_finite() => h,
            _ => 1.0,
        };
        let n = resolution.max(2);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..n {
            let t = horizon * i as f64 / (n - 1) as f64;
            let v = match self.eval(t, 0.0) {
                Ok(v) => v,
                Err(_) => return false,
            };
            if v < prev {
                return false;
            }
            prev = v;
        }
        true
    }

    /// Split `[0, horizon]` into pieces on which ε is linear in t.
    /// `None` for feedback schedules.
    pub fn pieces(&self, horizon: f64) -> Option<Result<Vec<Piece>>> {
        let own = self.horizon();
        if own.is_finite() && horizon > own * (1.0 + HORIZON_SLACK) + HORIZON_SLACK {
            return Some(Err(Error::Domain {
                t: horizon,
                horizon: own,
            }));
        }
        Some(Ok(match &self.kind {
            ScheduleKind::Constant { eps } => vec![Piece {
                t0: 0.0,
                t1: horizon,
                eps0: *eps,
                eps1: *eps,
            }],
            ScheduleKind::PiecewiseConstant { segments } => {
                let mut out = Vec::with_capacity(segments.len());
                let mut start = 0.0;
                for (i, &(d, e)) in segments.iter().enumerate() {
                    let last = i + 1 == segments.len();
                    let end = if last {
                        horizon
                    } else {
                        (start + d).min(horizon)
                    };
                    if end > start {
                        out.push(Piece {
                            t0: start,
                            t1: end,
                            eps0: e,
                            eps1: e,
                        });
                    }
                    start += d;
                    if start >= horizon {
                        break;
                    }
                }
                if let Some(p) = out.last_mut() {
                    p.t1 = horizon;
                }
                out
            }
            ScheduleKind::LinearRamp {
                eps_start,
                eps_end,
                horizon: rh,
            } => {
                let end_value = eps_start + (eps_end - eps_start) * (horizon / rh).min(1.0);
                vec![Piece {
                    t0: 0.0,
                    t1: horizon,
                    eps0: *eps_start,
                    eps1: end_value,
                }]
            }
            ScheduleKind::OnoffFeedback { .. } => return None,
        }))
    }

    /// Time-programmed realization of a solved on-off protocol: `n` repetitions
    /// of (on, off) followed by the final on-segment.
    pub fn from_onoff_solution(sol: &OnOffSolution, params: &SystemParams) -> Result<Schedule> {
        if !sol.feasible {
            return Err(Error::Infeasible {
                n: sol.n,
                horizon: sol.horizon,
            });
        }
        let omega = params.omega;
        let on = onoff::on_time(sol.phi_n, sol.eps_max, omega)?;
        let off = onoff::off_time(sol.phi_n, omega);
        let last = onoff::on_time(sol.tilde_phi_n, sol.eps_max, omega)?;
        let mut segments = Vec::with_capacity(2 * sol.n as usize + 1);
        for _ in 0..sol.n {
            segments.push((on, sol.eps_max));
            segments.push((off, 0.0));
        }
        if last > 0.0 {
            segments.push((last, sol.eps_max));
        }
        if segments.is_empty() {
            return Err(Error::Infeasible {
                n: sol.n,
                horizon: sol.horizon,
            });
        }
        Ok(Schedule::piecewise(segments).with_eps_max(sol.eps_max))
    }

    /// Phase-feedback realization of a solved protocol: switch off at φ_n in
    /// each of the first n cycles, then hold the control on until the horizon.
    pub fn feedback_from_onoff_solution(sol: &OnOffSolution) -> Result<Schedule> {
        if !sol.feasible {
            return Err(Error::Infeasible {
                n: sol.n,
                horizon: sol.horizon,
            });
        }
        let phi_on = if sol.n == 0 { PI } else { sol.phi_n };
        Ok(Schedule::onoff_feedback(phi_on, sol.eps_max, Some(sol.n)).with_eps_max(sol.eps_max))
    }
}

/// Random admissible piecewise-constant schedule on `[0, horizon]` with
/// 1..=max_segments segments and values uniform in `[0, eps_max]`.
pub fn random_piecewise<R: Rng>(
    rng: &mut R,
    horizon: f64,
    max_segments: usize,
    eps_max: f64,
) -> Schedule {
    let count = rng.gen_range(1..=max_segments.max(1));
    let mut cuts: Vec<f64> = (0..count - 1)
        .map(|_| rng.gen_range(0.0..horizon))
        .collect();
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut segments = Vec::with_capacity(count);
    let mut prev = 0.0;
    for c in cuts.into_iter().chain(std::iter::once(horizon)) {
        let d = c - prev;
        if d > 1e-6 * horizon {
            segments.push((d, rng.gen_range(0.0..=eps_max)));
            prev = c;
        }
    }
    if segments.is_empty() {
        segments.push((horizon, rng.gen_range(0.0..=eps_max)));
    }
    let covered: f64 = segments.iter().map(|s| s.0).sum();
    if let Some(last) = segments.last_mut() {
        last.0 += horizon - covered;
    }
    Schedule::piecewise(segments).with_eps_max(eps_max)
}

/// Random non-decreasing schedule: either a sorted piecewise-constant staircase
/// or a linear ramp, with values in `[0, eps_max]`.
pub fn random_monotone<R: Rng>(rng: &mut R, horizon: f64, eps_max: f64) -> Schedule {
    if rng.gen_bool(0.5) {
        let a = rng.gen_range(0.0..=eps_max);
        let b = rng.gen_range(0.0..=eps_max);
        Schedule::ramp(a.min(b), a.max(b), horizon).with_eps_max(eps_max)
    } else {
        let s = random_piecewise(rng, horizon, 6, eps_max);
        let ScheduleKind::PiecewiseConstant { mut segments } = s.kind else {
            unreachable!()
        };
        let mut values: Vec<f64> = segments.iter().map(|s| s.1).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        for (seg, v) in segments.iter_mut().zip(values) {
            seg.1 = v;
        }
        Schedule::piecewise(segments).with_eps_max(eps_max)
    }
}
