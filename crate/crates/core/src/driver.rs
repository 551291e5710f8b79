//! Adaptive integration of a controlled system whose state carries a
//! phase-plane angle. Shared by the closed and open dynamics.
//!
//! The driver owns step-size control, unwrapping of the phase angle,
//! location of feedback switches and of 2kπ crossings, and dense sampling.

use std::f64::consts::{PI, TAU};

use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::ode::{dopri5_step, step_factor, Step};
use crate::schedules::{Piece, Schedule, ScheduleKind};

/// Squared radius below which the phase angle is treated as undefined.
pub const BALL_SQ: f64 = 1e-12;

/// Exits from the ball within this angle of a half-turn are taken as a
/// passage straight through the origin.
const TIE_ANGLE: f64 = 0.05;

const MAX_BISECTIONS: usize = 200;

pub trait PhasePlane<const N: usize> {
    fn rates(&self, eps: f64, y: &[f64; N], dy: &mut [f64; N]);
    /// Cartesian coordinates whose polar angle is the tracked phase.
    fn phase_coords(&self, y: &[f64; N]) -> (f64, f64);
    fn check(&self, t: f64, y: &[f64; N]) -> Result<()>;
}

/// Continuous branch of the phase angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTracker {
    pub phi: f64,
    pub frozen: bool,
}

impl PhaseTracker {
    pub fn start(phi: f64, coords: (f64, f64)) -> Self {
        PhaseTracker {
            phi,
            frozen: coords.0 * coords.0 + coords.1 * coords.1 < BALL_SQ,
        }
    }

    pub fn advance(&self, (a, b): (f64, f64)) -> Self {
        if a * a + b * b < BALL_SQ {
            return PhaseTracker {
                phi: self.phi,
                frozen: true,
            };
        }
        let mut d = (b.atan2(a) - self.phi).rem_euclid(TAU);
        if d > PI {
            d -= TAU;
        }
        if self.frozen && d > PI - TIE_ANGLE {
            d -= TAU;
        }
        PhaseTracker {
            phi: self.phi + d,
            frozen: false,
        }
    }
}

/// How the control value is produced.
#[derive(Debug, Clone)]
pub enum Control {
    Pieces(Vec<Piece>),
    Feedback {
        phi_on: f64,
        eps_on: f64,
        cap: Option<u32>,
    },
}

impl Control {
    pub fn from_schedule(schedule: &Schedule, horizon: f64) -> Result<Control> {
        match &schedule.kind {
            ScheduleKind::OnoffFeedback {
                phi_on,
                eps_on,
                cycle_cap,
            } => Ok(Control::Feedback {
                phi_on: *phi_on,
                eps_on: *eps_on,
                cap: *cycle_cap,
            }),
            _ => Ok(Control::Pieces(
                schedule.pieces(horizon).expect("programmed schedule")?,
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    On(i64),
    Off(i64),
    Hold,
}

impl Mode {
    fn initial(phi: f64, phi_on: f64, cap: Option<u32>) -> Mode {
        let k = (phi / TAU).floor() as i64;
        if cap.is_some_and(|c| k >= c as i64) {
            return Mode::Hold;
        }
        if phi - TAU * (k as f64) < phi_on {
            Mode::On(k)
        } else {
            Mode::Off(k)
        }
    }

    fn target(&self, phi_on: f64) -> Option<f64> {
        match *self {
            Mode::On(k) => Some(TAU * k as f64 + phi_on),
            Mode::Off(k) => Some(TAU * (k + 1) as f64),
            Mode::Hold => None,
        }
    }

    fn next(&self, cap: Option<u32>) -> Mode {
        match *self {
            Mode::On(k) => Mode::Off(k),
            Mode::Off(k) if cap.is_some_and(|c| k + 1 >= c as i64) => Mode::Hold,
            Mode::Off(k) => Mode::On(k + 1),
            Mode::Hold => Mode::Hold,
        }
    }

    fn eps(&self, eps_on: f64) -> f64 {
        match self {
            Mode::Off(_) => 0.0,
            _ => eps_on,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawSample<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub phi: f64,
}

#[derive(Debug, Clone)]
pub struct RawCrossing<const N: usize> {
    pub k: i64,
    pub t: f64,
    pub y: [f64; N],
}

#[derive(Debug, Clone)]
pub struct RawRun<const N: usize> {
    pub samples: Vec<RawSample<N>>,
    pub crossings: Vec<RawCrossing<N>>,
    pub switches: Vec<f64>,
    pub last: RawSample<N>,
}

struct Trial<const N: usize> {
    step: Step<N>,
    mid: PhaseTracker,
    end: PhaseTracker,
}

impl<const N: usize> Trial<N> {
    /// Phase at an interior time, unwrapped through the step midpoint.
    fn phi_at<S: PhasePlane<N>>(&self, sys: &S, start: &PhaseTracker, t: f64) -> f64 {
        let base = if t <= self.step.t0 + 0.5 * self.step.h {
            start
        } else {
            &self.mid
        };
        base.advance(sys.phase_coords(&self.step.interpolate(t)))
            .phi
    }
}

/// Smallest time in `(lo, hi]` (to `tol`) at which the phase reaches `level`.
fn locate<const N: usize, S: PhasePlane<N>>(
    sys: &S,
    trial: &Trial<N>,
    start: &PhaseTracker,
    level: f64,
    tol: f64,
) -> Result<f64> {
    let mut lo = trial.step.t0;
    let mut hi = trial.step.t1();
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            return Ok(hi);
        }
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            return Ok(hi);
        }
        if trial.phi_at(sys, start, m) >= level {
            hi = m;
        } else {
            lo = m;
        }
    }
    Err(Error::EventLocalization { t: hi })
}

fn sample_times(horizon: f64, stride: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if stride > 0.0 && stride.is_finite() {
        let count = (horizon / stride).ceil() as usize;
        for i in 1..count {
            out.push(stride * i as f64);
        }
    }
    out.push(horizon);
    out
}

pub fn drive<const N: usize, S: PhasePlane<N>>(
    sys: &S,
    control: &Control,
    y0: [f64; N],
    phi0: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<RawRun<N>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "horizon T = {horizon} must be > 0"
        )));
    }
    cfg.validate()?;
    sys.check(0.0, &y0)?;

    let mut t = 0.0;
    let mut y = y0;
    let mut tracker = PhaseTracker::start(phi0, sys.phase_coords(&y0));
    let mut mode = match control {
        Control::Feedback { phi_on, cap, .. } => Mode::initial(phi0, *phi_on, *cap),
        Control::Pieces(_) => Mode::Hold,
    };
    let mut piece = 0usize;

    let times = sample_times(horizon, cfg.output_stride);
    let mut next_sample = 0usize;
    let mut samples = vec![RawSample {
        t: 0.0,
        y,
        phi: tracker.phi,
    }];

    let mut crossings = Vec::new();
    let mut next_k = (phi0 / TAU).floor() as i64 + 1;
    if phi0 == 0.0 {
        crossings.push(RawCrossing { k: 0, t: 0.0, y });
    }
    let mut switches = Vec::new();

    let event_tol = cfg.rel_tol * horizon;
    let min_step = 1e-14 * horizon.max(1.0);
    let mut h = cfg.max_step.min(0.01 * horizon).max(min_step);

    while t < horizon {
        let (seg_end, current) = match control {
            Control::Pieces(ps) => (ps[piece].t1.min(horizon), Some(ps[piece])),
            Control::Feedback { .. } => (horizon, None),
        };
        let eps_fb = match control {
            Control::Feedback { eps_on, .. } => mode.eps(*eps_on),
            Control::Pieces(_) => 0.0,
        };
        let mut rhs = |tt: f64, yy: &[f64; N], dy: &mut [f64; N]| {
            let eps = current.map_or(eps_fb, |p| p.eval(tt));
            sys.rates(eps, yy, dy);
        };

        let remaining = seg_end - t;
        let h_try = h.min(cfg.max_step).min(remaining);
        let last_in_segment = h_try >= remaining;
        let mut f0 = [0.0; N];
        rhs(t, &y, &mut f0);
        let step = dopri5_step(&mut rhs, t, &y, &f0, h_try, cfg.rel_tol, cfg.abs_tol);

        let finite = step.y1.iter().all(|v| v.is_finite()) && step.err.is_finite();
        if !finite || step.err > 1.0 {
            h = if finite {
                h_try * step_factor(step.err)
            } else {
                h_try * 0.2
            };
            if h < min_step {
                if !finite {
                    sys.check(t, &step.y1)?;
                }
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }

        let mid = tracker.advance(sys.phase_coords(&step.interpolate(t + 0.5 * h_try)));
        let end = mid.advance(sys.phase_coords(&step.y1));
        let jump_a =
            !tracker.frozen && !mid.frozen && (mid.phi - tracker.phi).abs() > cfg.phase_step_cap;
        let jump_b = !mid.frozen && !end.frozen && (end.phi - mid.phi).abs() > cfg.phase_step_cap;
        if jump_a || jump_b {
            h = 0.5 * h_try;
            if h < min_step {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }

        let mut trial = Trial { step, mid, end };
        let mut switched = false;
        let mut at_segment_end = last_in_segment;
        if let Control::Feedback { phi_on, .. } = control {
            if let Some(target) = mode.target(*phi_on) {
                if trial.end.phi >= target {
                    let t_ev = locate(sys, &trial, &tracker, target, event_tol)?;
                    let h_ev = t_ev - t;
                    if h_ev <= 0.0 {
                        return Err(Error::EventLocalization { t });
                    }
                    if h_ev < trial.step.h {
                        let step =
                            dopri5_step(&mut rhs, t, &y, &f0, h_ev, cfg.rel_tol, cfg.abs_tol);
                        let mid =
                            tracker.advance(sys.phase_coords(&step.interpolate(t + 0.5 * h_ev)));
                        let end = mid.advance(sys.phase_coords(&step.y1));
                        trial = Trial { step, mid, end };
                        at_segment_end = false;
                    }
                    switched = true;
                }
            }
        }

        while trial.end.phi >= TAU * next_k as f64 {
            let level = TAU * next_k as f64;
            let tc = locate(sys, &trial, &tracker, level, 0.0)?;
            crossings.push(RawCrossing {
                k: next_k,
                t: tc,
                y: trial.step.interpolate(tc),
            });
            next_k += 1;
        }

        let t1 = if at_segment_end {
            seg_end
        } else {
            trial.step.t1()
        };
        while next_sample < times.len() && times[next_sample] <= t1 {
            let ts = times[next_sample];
            let (ys, phs) = if ts >= t1 {
                (trial.step.y1, trial.end.phi)
            } else {
                (trial.step.interpolate(ts), trial.phi_at(sys, &tracker, ts))
            };
            samples.push(RawSample {
                t: ts,
                y: ys,
                phi: phs,
            });
            next_sample += 1;
        }

        sys.check(t1, &trial.step.y1)?;
        let err = trial.step.err;
        t = t1;
        y = trial.step.y1;
        tracker = trial.end;
        if switched {
            mode = mode.next(match control {
                Control::Feedback { cap, .. } => *cap,
                Control::Pieces(_) => None,
            });
            switches.push(t);
        } else {
            h = h_try * step_factor(err);
        }
        if let Control::Pieces(ps) = control {
            if at_segment_end && piece + 1 < ps.len() {
                piece += 1;
            }
        }
    }

    let last = samples.last().cloned().expect("final sample");
    Ok(RawRun {
        samples,
        crossings,
        switches,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_follows_nearest_branch() {
        let t = PhaseTracker {
            phi: TAU - 0.1,
            frozen: false,
        };
        let n = t.advance((0.1f64.cos(), 0.1f64.sin()));
        assert!((n.phi - (TAU + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn tracker_freezes_in_ball() {
        let t = PhaseTracker {
            phi: 1.0,
            frozen: false,
        };
        let n = t.advance((1e-8, 0.0));
        assert!(n.frozen);
        assert_eq!(n.phi, 1.0);
    }

    #[test]
    fn passage_through_origin_turns_back() {
        let inside = PhaseTracker {
            phi: 1.5 * PI,
            frozen: true,
        };
        let out = inside.advance((1e-3, 1.0));
        assert!((out.phi - 1.0f64.atan2(1e-3)).abs() < 1e-12);
    }

    #[test]
    fn mode_cycle() {
        let m = Mode::initial(0.0, 2.0, Some(2));
        assert_eq!(m, Mode::On(0));
        assert_eq!(m.target(2.0), Some(2.0));
        let m = m.next(Some(2));
        assert_eq!(m, Mode::Off(0));
        assert_eq!(m.target(2.0), Some(TAU));
        let m = m.next(Some(2)).next(Some(2)).next(Some(2));
        assert_eq!(m, Mode::Hold);
        assert_eq!(Mode::initial(0.0, 2.0, Some(0)), Mode::Hold);
        assert_eq!(Mode::initial(3.0, 2.0, None), Mode::Off(0));
    }

    #[test]
    fn sample_grid_ends_at_horizon() {
        assert_eq!(sample_times(1.0, 0.25), vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(sample_times(1.0, 0.0), vec![1.0]);
        assert_eq!(sample_times(1.0, 0.3).last(), Some(&1.0));
    }
}
