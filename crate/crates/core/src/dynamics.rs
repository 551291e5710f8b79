//! Closed-system squeezing dynamics in the regular (x, y) phase plane,
//! x + iy = sinh(2r)·e^{iφ}.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::driver::{self, Control, PhasePlane, BALL_SQ};
use crate::error::{Error, Result};
use crate::schedules::Schedule;

/// sinh 2r above which the state is reported as overflowing.
pub const OVERFLOW_LIMIT: f64 = 1e280;

/// ∫ sinh²(2r) dt overflows long before sinh 2r itself does.
const ACC_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega: f64,
}

impl SystemParams {
    pub fn new(omega: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "omega = {omega} must be > 0"
            )));
        }
        Ok(SystemParams { omega })
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams { omega: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Time between stored samples; zero stores only the end points.
    pub output_stride: f64,
    pub phase_step_cap: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_step: 0.1,
            output_stride: 0.05,
            phase_step_cap: PI / 8.0,
        }
    }
}

impl IntegratorConfig {
    pub fn with_stride(mut self, stride: f64) -> Self {
        self.output_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be > 0".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter("max_step must be > 0".into()));
        }
        if !(self.output_stride >= 0.0) {
            return Err(Error::InvalidParameter("output_stride must be >= 0".into()));
        }
        if !(self.phase_step_cap > 0.0 && self.phase_step_cap <= PI / 4.0) {
            return Err(Error::InvalidParameter(format!(
                "phase_step_cap = {} must lie in (0, pi/4]",
                self.phase_step_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub phi_unwrapped: f64,
    pub j_re: f64,
    pub j_im: f64,
    /// ∫ sinh²(2r) dt
    pub a_acc: f64,
    /// ∫ sinh(2r) dt
    pub s_acc: f64,
}

impl PhaseState {
    pub fn vacuum() -> Self {
        PhaseState {
            t: 0.0,
            x: 0.0,
            y: 0.0,
            theta: 0.0,
            phi_unwrapped: 0.0,
            j_re: 0.0,
            j_im: 0.0,
            a_acc: 0.0,
            s_acc: 0.0,
        }
    }

    /// A squeezed state at t = 0 with empty accumulators.
    pub fn injected(x: f64, y: f64, theta: f64) -> Self {
        let phi = if x * x + y * y < BALL_SQ {
            0.0
        } else {
            y.atan2(x).rem_euclid(TAU)
        };
        PhaseState {
            x,
            y,
            theta,
            phi_unwrapped: phi,
            ..Self::vacuum()
        }
    }

    pub fn sinh2r(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn r(&self) -> f64 {
        squeezing_of(self)
    }

    /// Integrated form: θ is carried as ψ = θ + (direction of (x, y)), which
    /// stays smooth when the orbit runs through the origin and θ jumps by π.
    fn to_vec(self) -> [f64; 7] {
        let psi = self.theta + direction(self.x, self.y, self.phi_unwrapped);
        [
            self.x, self.y, psi, self.j_re, self.j_im, self.a_acc, self.s_acc,
        ]
    }

    fn from_vec(t: f64, v: &[f64; 7], phi: f64) -> Self {
        PhaseState {
            t,
            x: v[0],
            y: v[1],
            theta: v[2] - direction(v[0], v[1], phi),
            phi_unwrapped: phi,
            j_re: v[3],
            j_im: v[4],
            a_acc: v[5],
            s_acc: v[6],
        }
    }
}

/// Direction of (x, y) on the branch of the unwrapped phase. At the origin the
/// orbit always departs along +y, a quarter turn past the frozen phase.
fn direction(x: f64, y: f64, phi: f64) -> f64 {
    if x * x + y * y < BALL_SQ {
        phi + PI / 2.0
    } else {
        phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    /// Zero while the phase is frozen at the origin.
    pub dphi: f64,
    pub phi_frozen: bool,
    pub dj_re: f64,
    pub dj_im: f64,
    pub da: f64,
    pub ds: f64,
}

/// A located crossing of Φ = 2kπ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub k: i64,
    pub state: PhaseState,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: SystemParams,
    pub schedule_id: String,
    pub samples: Vec<PhaseState>,
    pub final_state: PhaseState,
    pub winding: i64,
    pub crossings: Vec<Crossing>,
    pub switch_times: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.final_state.t
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,theta,phi,r,j_re,j_im,a_acc")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t,
                s.x,
                s.y,
                s.theta,
                s.phi_unwrapped,
                s.r(),
                s.j_re,
                s.j_im,
                s.a_acc
            )?;
        }
        Ok(())
    }
}

struct Closed {
    omega: f64,
}

fn raw_rates(omega: f64, eps: f64, v: &[f64; 7], dv: &mut [f64; 7]) {
    let (x, y, psi) = (v[0], v[1], v[2]);
    let rho2 = x * x + y * y;
    let rho = rho2.sqrt();
    let root = (1.0 + rho2).sqrt();
    let w = 2.0 * omega - eps;
    dv[0] = -w * y;
    dv[1] = w * x + eps * root;
    dv[2] = w + eps * x / (1.0 + root);
    // sinh 2r e^{iθ} = e^{iψ} (x − iy)
    let (s, c) = psi.sin_cos();
    dv[3] = c * x + s * y;
    dv[4] = s * x - c * y;
    dv[5] = rho2;
    dv[6] = rho;
}

impl PhasePlane<7> for Closed {
    fn rates(&self, eps: f64, y: &[f64; 7], dy: &mut [f64; 7]) {
        raw_rates(self.omega, eps, y, dy);
    }

    fn phase_coords(&self, y: &[f64; 7]) -> (f64, f64) {
        (y[0], y[1])
    }

    fn check(&self, t: f64, y: &[f64; 7]) -> Result<()> {
        if y.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidState(format!("non-finite state at t = {t}")));
        }
        let m = y[0].hypot(y[1]);
        if !(m <= OVERFLOW_LIMIT) || !(y[5] <= ACC_LIMIT) {
            return Err(Error::Overflow { t, magnitude: m });
        }
        Ok(())
    }
}

/// Instantaneous rates of the augmented state at control value `eps`.
pub fn eom_rates(state: &PhaseState, eps: f64, params: &SystemParams) -> Result<Rates> {
    let v = state.to_vec();
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidState("non-finite state component".into()));
    }
    if !(eps >= 0.0 && eps <= params.omega) {
        return Err(Error::InvalidParameter(format!(
            "control eps = {eps} outside the symmetric phase [0, omega = {}]",
            params.omega
        )));
    }
    let mut d = [0.0; 7];
    raw_rates(params.omega, eps, &v, &mut d);
    let rho2 = state.x * state.x + state.y * state.y;
    let frozen = rho2 < BALL_SQ;
    let w = 2.0 * params.omega - eps;
    let dtheta = if frozen {
        0.5 * w
    } else {
        -eps * state.x / rho2
    };
    let dphi = if frozen {
        0.0
    } else {
        2.0 * params.omega - eps + eps * state.x * (1.0 + rho2).sqrt() / rho2
    };
    Ok(Rates {
        dx: d[0],
        dy: d[1],
        dtheta,
        dphi,
        phi_frozen: frozen,
        dj_re: d[3],
        dj_im: d[4],
        da: d[5],
        ds: d[6],
    })
}

/// Integrate from the vacuum over `[0, T]`.
pub fn integrate(
    params: &SystemParams,
    schedule: &Schedule,
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_from(params, schedule, horizon, config, PhaseState::vacuum())
}

/// Integrate from an arbitrary initial state at t = 0.
pub fn integrate_from(
    params: &SystemParams,
    schedule: &Schedule,
    horizon: f64,
    config: &IntegratorConfig,
    initial: PhaseState,
) -> Result<Trajectory> {
    schedule.validate(params)?;
    let control = Control::from_schedule(schedule, horizon)?;
    let sys = Closed {
        omega: params.omega,
    };
    let run = driver::drive(
        &sys,
        &control,
        initial.to_vec(),
        initial.phi_unwrapped,
        horizon,
        config,
    )?;
    let samples: Vec<PhaseState> = run
        .samples
        .iter()
        .map(|s| PhaseState::from_vec(s.t, &s.y, s.phi))
        .collect();
    let final_state = PhaseState::from_vec(run.last.t, &run.last.y, run.last.phi);
    let crossings = run
        .crossings
        .iter()
        .map(|c| Crossing {
            k: c.k,
            state: PhaseState::from_vec(c.t, &c.y, TAU * c.k as f64),
        })
        .collect();
    Ok(Trajectory {
        params: *params,
        schedule_id: schedule.label(),
        winding: (final_state.phi_unwrapped / TAU).floor() as i64,
        samples,
        final_state,
        crossings,
        switch_times: run.switches,
    })
}

pub fn squeezing_of(state: &PhaseState) -> f64 {
    state.sinh2r().asinh() / 2.0
}

pub fn winding_of(traj: &Trajectory) -> i64 {
    (traj.final_state.phi_unwrapped / TAU).floor() as i64
}
