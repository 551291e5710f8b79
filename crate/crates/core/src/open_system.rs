//! Thermal dissipation: the affine covariance ODE of the Gaussian state.
//!
//! The state is (⟨x̂²⟩, ⟨p̂²⟩, ⟨x̂p̂ + p̂x̂⟩/2) plus det V, carried as its own
//! variable so that μ = √det V stays accurate when the entries are huge.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::driver::{self, Control, PhasePlane};
use crate::dynamics::{IntegratorConfig, SystemParams};
use crate::error::{Error, Result};
use crate::ode::{dopri5_step, step_factor};
use crate::schedules::Schedule;

const ACC_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenParams {
    pub gamma: f64,
    pub nbar: f64,
}

impl OpenParams {
    pub fn new(gamma: f64, nbar: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) || !(nbar >= 0.0 && nbar.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma = {gamma} and nbar = {nbar} must be >= 0"
            )));
        }
        Ok(OpenParams { gamma, nbar })
    }

    /// Affine drive γ(2n̄ + 1)/2.
    fn drive(&self) -> f64 {
        self.gamma * (2.0 * self.nbar + 1.0) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceState {
    pub t: f64,
    pub vxx: f64,
    pub vpp: f64,
    pub vxp: f64,
    pub det: f64,
    pub mu: f64,
    pub r: f64,
    /// Unwrapped phase of the squeezing axis.
    pub phi: f64,
    /// ∫ sinh²(2r) dt
    pub a_acc: f64,
}

impl CovarianceState {
    pub fn vacuum() -> Self {
        Self::from_mu_r_phi(0.0, 0.5, 0.0, 0.0)
    }

    /// (vxx, vpp, vxp) = μ(cosh 2r − sinh 2r cos φ, cosh 2r + sinh 2r cos φ, sinh 2r sin φ).
    pub fn from_mu_r_phi(t: f64, mu: f64, r: f64, phi: f64) -> Self {
        let (s, c) = ((2.0 * r).sinh(), (2.0 * r).cosh());
        CovarianceState {
            t,
            vxx: mu * (c - s * phi.cos()),
            vpp: mu * (c + s * phi.cos()),
            vxp: mu * s * phi.sin(),
            det: mu * mu,
            mu,
            r,
            phi,
            a_acc: 0.0,
        }
    }

    fn from_vec(t: f64, v: &[f64; 5], phi: f64) -> Self {
        let mu = v[3].max(0.0).sqrt();
        let p = (0.5 * (v[1] - v[0])).hypot(v[2]);
        CovarianceState {
            t,
            vxx: v[0],
            vpp: v[1],
            vxp: v[2],
            det: v[3],
            mu,
            r: 0.5 * (p / mu).asinh(),
            phi,
            a_acc: v[4],
        }
    }

    fn to_vec(self) -> [f64; 5] {
        [self.vxx, self.vpp, self.vxp, self.det, self.a_acc]
    }

    pub fn sinh2r(&self) -> f64 {
        (2.0 * self.r).sinh()
    }
}

/// Rates of (vxx, vpp, vxp).
pub fn cov_rates(
    state: &CovarianceState,
    eps: f64,
    params: &SystemParams,
    open: &OpenParams,
) -> (f64, f64, f64) {
    let mut d = [0.0; 5];
    raw_rates(params.omega, open, eps, &state.to_vec(), &mut d);
    (d[0], d[1], d[2])
}

fn raw_rates(omega: f64, open: &OpenParams, eps: f64, v: &[f64; 5], d: &mut [f64; 5]) {
    let (vxx, vpp, vxp, det) = (v[0], v[1], v[2], v[3]);
    let g = open.gamma;
    let c = open.drive();
    d[0] = -g * vxx + 2.0 * omega * vxp + c;
    d[1] = -g * vpp + (2.0 * eps - 2.0 * omega) * vxp + c;
    d[2] = (eps - omega) * vxx + omega * vpp - g * vxp;
    d[3] = -2.0 * g * det + c * (vxx + vpp);
    let p2 = (0.5 * (vpp - vxx)).powi(2) + vxp * vxp;
    d[4] = p2 / det;
}

struct Open {
    omega: f64,
    open: OpenParams,
}

impl PhasePlane<5> for Open {
    fn rates(&self, eps: f64, y: &[f64; 5], dy: &mut [f64; 5]) {
        raw_rates(self.omega, &self.open, eps, y, dy);
    }

    fn phase_coords(&self, y: &[f64; 5]) -> (f64, f64) {
        (0.5 * (y[1] - y[0]), y[2])
    }

    fn check(&self, t: f64, y: &[f64; 5]) -> Result<()> {
        let m = y[0].abs().max(y[1].abs());
        if y.iter().any(|v| !v.is_finite())
            || !(y[4] <= ACC_LIMIT)
            || !(m <= crate::dynamics::OVERFLOW_LIMIT)
        {
            return Err(Error::Overflow { t, magnitude: m });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OpenTrajectory {
    pub samples: Vec<CovarianceState>,
    pub final_state: CovarianceState,
    pub winding: i64,
}

impl OpenTrajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,vxx,vpp,vxp,mu,r,phi,qfi_bound_running")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t,
                s.vxx,
                s.vpp,
                s.vxp,
                s.mu,
                s.r,
                s.phi,
                4.0 * s.t * s.a_acc
            )?;
        }
        Ok(())
    }
}

pub fn integrate_open(
    params: &SystemParams,
    open: &OpenParams,
    schedule: &Schedule,
    horizon: f64,
    config: &IntegratorConfig,
) -> Result<OpenTrajectory> {
    integrate_open_from(
        params,
        open,
        schedule,
        horizon,
        config,
        CovarianceState::vacuum(),
    )
}

pub fn integrate_open_from(
    params: &SystemParams,
    open: &OpenParams,
    schedule: &Schedule,
    horizon: f64,
    config: &IntegratorConfig,
    initial: CovarianceState,
) -> Result<OpenTrajectory> {
    schedule.validate(params)?;
    if !(initial.mu >= 0.5 - 1e-12 && initial.vxx > 0.0 && initial.vpp > 0.0) {
        return Err(Error::InvalidState(
            "covariance violates the uncertainty bound".into(),
        ));
    }
    let control = Control::from_schedule(schedule, horizon)?;
    let sys = Open {
        omega: params.omega,
        open: *open,
    };
    let run = driver::drive(
        &sys,
        &control,
        initial.to_vec(),
        initial.phi,
        horizon,
        config,
    )?;
    let samples: Vec<CovarianceState> = run
        .samples
        .iter()
        .map(|s| CovarianceState::from_vec(s.t, &s.y, s.phi))
        .collect();
    let final_state = CovarianceState::from_vec(run.last.t, &run.last.y, run.last.phi);
    Ok(OpenTrajectory {
        winding: (final_state.phi / TAU).floor() as i64,
        samples,
        final_state,
    })
}

/// QFI of a squeezed thermal state for the rotation generator.
pub fn instantaneous_qfi(state: &CovarianceState) -> f64 {
    8.0 * state.mu / (2.0 * state.mu + 1.0) * state.sinh2r().powi(2)
}

/// Upper bound 4T ∫₀ᵀ sinh²(2r) dt on the dissipative QFI.
pub fn qfi_open_bound(states: &[CovarianceState], horizon: f64) -> f64 {
    4.0 * horizon * states.last().map_or(0.0, |s| s.a_acc)
}

/// Integrate the equivalent (μ, r, φ) equations from a state with r > 0.
/// Singular at r = 0; used only to cross-check the covariance form.
pub fn integrate_mu_r_phi(
    params: &SystemParams,
    open: &OpenParams,
    schedule: &Schedule,
    horizon: f64,
    initial: (f64, f64, f64),
    rel_tol: f64,
) -> Result<(f64, f64, f64)> {
    if schedule.is_feedback() {
        return Err(Error::InvalidParameter(
            "cross-check needs a time-programmed schedule".into(),
        ));
    }
    let omega = params.omega;
    let g = open.gamma;
    let k = 2.0 * open.nbar + 1.0;
    let pieces = schedule.pieces(horizon).expect("programmed schedule")?;
    let mut t = 0.0;
    let mut y = [initial.0, initial.1, initial.2];
    let mut h: f64 = 1e-3;
    for piece in &pieces {
        let mut rhs = |tt: f64, v: &[f64; 3], d: &mut [f64; 3]| {
            let eps = piece.eval(tt);
            let (mu, r, phi) = (v[0], v[1], v[2]);
            let (s, c) = ((2.0 * r).sinh(), (2.0 * r).cosh());
            d[0] = -g * mu + g * c * k / 2.0;
            d[1] = eps * phi.sin() / 2.0 - g * s * k / (4.0 * mu);
            d[2] = 2.0 * omega - eps + eps * phi.cos() * c / s;
        };
        while t < piece.t1 {
            let h_try = h.min(piece.t1 - t);
            let mut f0 = [0.0; 3];
            rhs(t, &y, &mut f0);
            let step = dopri5_step(&mut rhs, t, &y, &f0, h_try, rel_tol, rel_tol * 1e-3);
            if !(step.err <= 1.0) {
                h = h_try
                    * if step.err.is_finite() {
                        step_factor(step.err)
                    } else {
                        0.2
                    };
                if h < 1e-14 {
                    return Err(Error::StepUnderflow { t, h });
                }
                continue;
            }
            t = if h_try >= piece.t1 - t {
                piece.t1
            } else {
                step.t1()
            };
            y = step.y1;
            h = h_try * step_factor(step.err);
        }
    }
    Ok((y[0], y[1], y[2]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate;

    fn unit() -> SystemParams {
        SystemParams::new(1.0).unwrap()
    }

    #[test]
    fn stationary_points() {
        let closed = OpenParams::new(0.0, 0.0).unwrap();
        assert_eq!(
            cov_rates(&CovarianceState::vacuum(), 0.0, &unit(), &closed),
            (0.0, 0.0, 0.0)
        );
        let bath = OpenParams::new(0.3, 2.0).unwrap();
        let thermal = CovarianceState::from_mu_r_phi(0.0, 2.5, 0.0, 0.0);
        let (a, b, c) = cov_rates(&thermal, 0.0, &unit(), &bath);
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15 && c.abs() < 1e-15);
    }

    #[test]
    fn reconstruction_round_trip() {
        let s = CovarianceState::from_mu_r_phi(0.0, 1.7, 0.8, 2.2);
        let back = CovarianceState::from_vec(0.0, &s.to_vec(), 2.2);
        assert!((back.mu - 1.7).abs() < 1e-10);
        assert!((back.r - 0.8).abs() < 1e-10);
        assert!((s.vxx * s.vpp - s.vxp * s.vxp - s.det).abs() < 1e-10);
    }

    #[test]
    fn instantaneous_qfi_limits() {
        let pure = CovarianceState::from_mu_r_phi(0.0, 0.5, 0.6, 0.0);
        assert!((instantaneous_qfi(&pure) - 2.0 * 1.2f64.sinh().powi(2)).abs() < 1e-12);
        assert_eq!(instantaneous_qfi(&CovarianceState::vacuum()), 0.0);
        let hot = CovarianceState::from_mu_r_phi(0.0, 1e9, 0.6, 0.0);
        assert!((instantaneous_qfi(&hot) / (4.0 * 1.2f64.sinh().powi(2)) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn purity_conserved_without_bath() {
        let sched = Schedule::piecewise(vec![(1.0, 1.0), (1.5, 0.0), (2.0, 0.8)]);
        let traj = integrate_open(
            &unit(),
            &OpenParams::new(0.0, 0.0).unwrap(),
            &sched,
            4.5,
            &IntegratorConfig::default(),
        )
        .unwrap();
        for s in &traj.samples {
            assert!((s.mu - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_limit_matches_phase_plane() {
        let sched = Schedule::piecewise(vec![(1.2, 1.0), (1.0, 0.0), (2.5, 0.6)]);
        let cfg = IntegratorConfig::default().with_stride(0.5);
        let open = integrate_open(
            &unit(),
            &OpenParams::new(0.0, 0.0).unwrap(),
            &sched,
            4.7,
            &cfg,
        )
        .unwrap();
        let closed = integrate(&unit(), &sched, 4.7, &cfg).unwrap();
        for (a, b) in open.samples.iter().zip(&closed.samples) {
            assert_eq!(a.t, b.t);
            assert!((a.r - b.r()).abs() < 1e-8, "t = {}", a.t);
            if b.sinh2r() > 1e-3 {
                assert!((a.phi - b.phi_unwrapped).abs() < 1e-8, "t = {}", a.t);
            }
        }
        assert!(
            (open.final_state.a_acc - closed.final_state.a_acc).abs()
                < 1e-8 * closed.final_state.a_acc
        );
    }

    #[test]
    fn free_relaxation() {
        let bath = OpenParams::new(0.5, 2.0).unwrap();
        let cfg = IntegratorConfig::default().with_stride(0.5);
        let traj = integrate_open(&unit(), &bath, &Schedule::constant(0.0), 12.0, &cfg).unwrap();
        for s in &traj.samples {
            // μ relaxes at rate γ; det V = μ² since the state stays unsqueezed
            let mu = 2.5 + (0.5 - 2.5) * (-0.5 * s.t).exp();
            assert!((s.mu - mu).abs() < 1e-8, "t = {}", s.t);
            assert!((s.det - mu * mu).abs() < 1e-8 * mu * mu);
            assert!(s.mu >= 0.5);
        }
        assert!((traj.final_state.mu - 2.5).abs() < 1e-2);
    }

    #[test]
    fn bound_dominates_closed_qfi() {
        let sched = Schedule::piecewise(vec![(2.0, 1.0), (1.2, 0.0), (1.8, 1.0)]);
        let cfg = IntegratorConfig::default();
        let open = integrate_open(
            &unit(),
            &OpenParams::new(0.0, 0.0).unwrap(),
            &sched,
            5.0,
            &cfg,
        )
        .unwrap();
        let closed = integrate(&unit(), &sched, 5.0, &cfg).unwrap();
        let f = crate::qfi::qfi_from_trajectory(&closed).value;
        assert!(qfi_open_bound(&open.samples, 5.0) >= f);
        assert_eq!(qfi_open_bound(&[CovarianceState::vacuum()], 3.0), 0.0);
    }

    #[test]
    fn mu_r_phi_agrees_with_covariance() {
        let bath = OpenParams::new(0.3, 0.5).unwrap();
        let sched = Schedule::piecewise(vec![(1.5, 0.9), (1.0, 0.0), (1.5, 0.9)]);
        let start = CovarianceState::from_mu_r_phi(0.0, 0.8, 0.4, 1.0);
        let cov = integrate_open_from(
            &unit(),
            &bath,
            &sched,
            4.0,
            &IntegratorConfig::default(),
            start,
        )
        .unwrap();
        let (mu, r, _) =
            integrate_mu_r_phi(&unit(), &bath, &sched, 4.0, (0.8, 0.4, 1.0), 1e-11).unwrap();
        assert!(cov.final_state.r > 0.05);
        assert!((mu - cov.final_state.mu).abs() < 1e-6 * mu);
        assert!((r - cov.final_state.r).abs() < 1e-6 * r);
    }

    #[test]
    fn csv_header() {
        let traj = integrate_open(
            &unit(),
            &OpenParams::new(0.1, 0.0).unwrap(),
            &Schedule::constant(0.5),
            1.0,
            &IntegratorConfig::default().with_stride(0.25),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,vxx,vpp,vxp,mu,r,phi,qfi_bound_running\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
