//! Brute-force check of the Gaussian description: truncated number-basis
//! Schrödinger evolution under H = ω a†a − (ε/4)(a† + a)².

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemParams;
use crate::error::{Error, Result};
use crate::schedules::{Piece, Schedule};

const TAIL_LIMIT: f64 = 1e-6;
const NORM_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub amps: Vec<Complex64>,
}

impl FockVector {
    pub fn vacuum(dim: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[0] = Complex64::new(1.0, 0.0);
        FockVector { amps }
    }

    /// Squeezed vacuum with ⟨a²⟩ = −½ sinh(2r) e^{−iφ}.
    pub fn squeezed_vacuum(dim: usize, r: f64, phi: f64) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        let ratio = -Complex64::from_polar(r.tanh(), -phi);
        let mut c = Complex64::new(1.0 / r.cosh().sqrt(), 0.0);
        let mut m = 0usize;
        while 2 * m < dim {
            amps[2 * m] = c;
            let (a, b) = ((2 * m + 1) as f64, (2 * m + 2) as f64);
            c *= ratio * (a * b).sqrt() / b;
            m += 1;
        }
        FockVector { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Probability mass in the top 10% of levels (at least two, so both parities count).
    pub fn tail_mass(&self) -> f64 {
        let start = self.dim() - (self.dim() / 10).max(2);
        self.amps[start..].iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn odd_mass(&self) -> f64 {
        self.amps
            .iter()
            .skip(1)
            .step_by(2)
            .map(|a| a.norm_sqr())
            .sum()
    }

    /// (⟨a†a⟩, ⟨a²⟩)
    pub fn moments(&self) -> (f64, Complex64) {
        let n: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(k, a)| k as f64 * a.norm_sqr())
            .sum();
        let a2: Complex64 = (2..self.dim())
            .map(|k| self.amps[k - 2].conj() * self.amps[k] * ((k * (k - 1)) as f64).sqrt())
            .sum();
        (n, a2)
    }

    /// Squeezing r and phase φ ∈ [0, 2π) of the Gaussian state with these moments.
    pub fn gaussian_params(&self) -> (f64, f64) {
        let (n, a2) = self.moments();
        let r = n.max(0.0).sqrt().asinh();
        let phi = (-(-2.0 * a2).arg()).rem_euclid(std::f64::consts::TAU);
        (r, phi)
    }

    fn check_health(&self) -> Result<()> {
        let tail = self.tail_mass();
        if !(tail < TAIL_LIMIT) {
            return Err(Error::Truncation {
                dim: self.dim(),
                tail,
            });
        }
        Ok(())
    }
}

/// Dense Hamiltonian in the number basis (pentadiagonal, real symmetric).
pub fn hamiltonian_matrix(eps: f64, params: &SystemParams, dim: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        h[(n, n)] = diag(n, eps, params.omega);
        if n + 2 < dim {
            let c = coupling(n, eps);
            h[(n + 2, n)] = c;
            h[(n, n + 2)] = c;
        }
    }
    h
}

fn diag(n: usize, eps: f64, omega: f64) -> f64 {
    omega * n as f64 - eps / 4.0 * (2 * n + 1) as f64
}

fn coupling(n: usize, eps: f64) -> f64 {
    -eps / 4.0 * (((n + 1) * (n + 2)) as f64).sqrt()
}

/// out = −i H ψ
fn apply(eps: f64, omega: f64, psi: &[Complex64], out: &mut [Complex64]) {
    let dim = psi.len();
    for n in 0..dim {
        let mut acc = psi[n] * diag(n, eps, omega);
        if n + 2 < dim {
            acc += psi[n + 2] * coupling(n, eps);
        }
        if n >= 2 {
            acc += psi[n - 2] * coupling(n - 2, eps);
        }
        out[n] = Complex64::new(acc.im, -acc.re);
    }
}

fn rk4_piece(psi: &mut [Complex64], piece: &Piece, omega: f64, dt_max: f64) {
    let len = piece.t1 - piece.t0;
    if len <= 0.0 {
        return;
    }
    let steps = (len / dt_max).ceil().max(16.0) as usize;
    let h = len / steps as f64;
    let dim = psi.len();
    let zero = Complex64::new(0.0, 0.0);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![zero; dim],
        vec![zero; dim],
        vec![zero; dim],
        vec![zero; dim],
        vec![zero; dim],
    );
    for i in 0..steps {
        let t = piece.t0 + h * i as f64;
        let (e0, em, e1) = (piece.eval(t), piece.eval(t + 0.5 * h), piece.eval(t + h));
        apply(e0, omega, psi, &mut k1);
        for j in 0..dim {
            tmp[j] = psi[j] + k1[j] * (0.5 * h);
        }
        apply(em, omega, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = psi[j] + k2[j] * (0.5 * h);
        }
        apply(em, omega, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = psi[j] + k3[j] * h;
        }
        apply(e1, omega, &tmp, &mut k4);
        for j in 0..dim {
            psi[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
        }
    }
}

/// Default time step min(1e−3/ω, shortest segment/16).
pub fn default_dt(schedule: &Schedule, horizon: f64, params: &SystemParams) -> Result<f64> {
    let pieces = programmed(schedule, horizon)?;
    let shortest = pieces
        .iter()
        .map(|p| p.t1 - p.t0)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    Ok((1e-3 / params.omega).min(shortest / 16.0))
}

fn programmed(schedule: &Schedule, horizon: f64) -> Result<Vec<Piece>> {
    match schedule.pieces(horizon) {
        Some(p) => p,
        None => Err(Error::InvalidParameter(
            "the Fock oracle needs a time-programmed schedule".into(),
        )),
    }
}

/// Evolve at fixed truncation with a fixed maximal time step.
pub fn evolve(
    psi0: &FockVector,
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    dt: f64,
) -> Result<FockVector> {
    if psi0.dim() < 4 {
        return Err(Error::InvalidParameter(
            "Fock dimension must be at least 4".into(),
        ));
    }
    let pieces = programmed(schedule, horizon)?;
    let mut dt = dt;
    for _ in 0..4 {
        let mut psi = psi0.amps.clone();
        for p in &pieces {
            rk4_piece(&mut psi, p, params.omega, dt);
        }
        let out = FockVector { amps: psi };
        out.check_health()?;
        if (out.norm() - psi0.norm()).abs() < NORM_LIMIT {
            return Ok(out);
        }
        dt *= 0.5;
    }
    Err(Error::InvalidState(format!(
        "norm drift above {NORM_LIMIT:e} even at dt = {dt:e}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dim: usize,
    pub max_dim: usize,
    /// Relative finite-difference step δω/ω.
    pub delta_rel: f64,
    pub richardson_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            dim: 256,
            max_dim: 2048,
            delta_rel: 1e-5,
            richardson_tol: 1e-3,
        }
    }
}

/// Run `f` with the truncation doubled until it stops failing on truncation.
fn with_growing_dim<T>(cfg: &OracleConfig, mut f: impl FnMut(usize) -> Result<T>) -> Result<T> {
    let mut dim = cfg.dim;
    loop {
        match f(dim) {
            Err(Error::Truncation { .. }) if dim * 2 <= cfg.max_dim => dim *= 2,
            other => return other,
        }
    }
}

/// Evolve the vacuum with automatic truncation growth.
pub fn evolve_vacuum(
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    cfg: &OracleConfig,
) -> Result<FockVector> {
    let dt = default_dt(schedule, horizon, params)?;
    with_growing_dim(cfg, |dim| {
        evolve(&FockVector::vacuum(dim), schedule, horizon, params, dt)
    })
}

fn fd_qfi(
    psi0: &FockVector,
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    delta: f64,
    dt: f64,
) -> Result<f64> {
    let at = |omega: f64| evolve(psi0, schedule, horizon, &SystemParams { omega }, dt);
    let center = at(params.omega)?;
    let plus = at(params.omega + delta)?;
    let minus = at(params.omega - delta)?;
    let mut dd = 0.0;
    let mut overlap = Complex64::new(0.0, 0.0);
    for j in 0..center.dim() {
        let d = (plus.amps[j] - minus.amps[j]) / (2.0 * delta);
        dd += d.norm_sqr();
        overlap += center.amps[j].conj() * d;
    }
    Ok((4.0 * (dd - overlap.norm_sqr())).max(0.0))
}

/// QFI for ω by central differences of the evolved state, with a
/// Richardson-style consistency check at half the step.
pub fn qfi_fd_from(
    psi0: &FockVector,
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    delta_omega: f64,
    dt: f64,
    richardson_tol: f64,
) -> Result<f64> {
    let coarse = fd_qfi(psi0, schedule, horizon, params, delta_omega, dt)?;
    let fine = fd_qfi(psi0, schedule, horizon, params, 0.5 * delta_omega, dt)?;
    let scale = coarse.abs().max(fine.abs());
    let rel_change = if scale == 0.0 {
        0.0
    } else {
        (coarse - fine).abs() / scale
    };
    // an identically vanishing derivative is converged by definition
    if rel_change > richardson_tol && scale > 1e-12 {
        return Err(Error::DerivativeNotConverged { rel_change });
    }
    Ok(fine)
}

/// Finite-difference QFI from the vacuum with automatic truncation growth.
pub fn qfi_fd(
    schedule: &Schedule,
    horizon: f64,
    params: &SystemParams,
    cfg: &OracleConfig,
) -> Result<f64> {
    let dt = default_dt(schedule, horizon, params)?;
    let delta = cfg.delta_rel * params.omega;
    with_growing_dim(cfg, |dim| {
        qfi_fd_from(
            &FockVector::vacuum(dim),
            schedule,
            horizon,
            params,
            delta,
            dt,
            cfg.richardson_tol,
        )
    })
}

/// QFI of a constant-ε evolution from the vacuum as 4 Var(G) with
/// G = ∫₀ᵀ e^{iHs} a†a e^{−iHs} ds, evaluated in the eigenbasis of H.
/// Works on the even sector, which is all the vacuum ever populates.
pub fn qfi_generator_constant(eps: f64, horizon: f64, params: &SystemParams, dim: usize) -> f64 {
    let m = dim / 2;
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        h[(i, i)] = diag(2 * i, eps, params.omega);
        if i + 1 < m {
            let c = coupling(2 * i, eps);
            h[(i + 1, i)] = c;
            h[(i, i + 1)] = c;
        }
    }
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let c0: Vec<f64> = (0..m).map(|j| v[(0, j)]).collect();
    // number operator in the eigenbasis, N = Vᵀ diag(2i) V
    let weighted = DMatrix::from_fn(m, m, |i, j| 2.0 * i as f64 * v[(i, j)]);
    let n_eig = v.transpose() * weighted;
    let mut g_psi = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        for k in 0..m {
            let d = lam[j] - lam[k];
            let factor = if d.abs() * horizon < 1e-9 {
                Complex64::new(horizon, 0.0)
            } else {
                (Complex64::from_polar(1.0, d * horizon) - 1.0) / Complex64::new(0.0, d)
            };
            g_psi[j] += factor * n_eig[(j, k)] * c0[k];
        }
    }
    let norm2: f64 = g_psi.iter().map(|z| z.norm_sqr()).sum();
    let mean: Complex64 = g_psi.iter().zip(&c0).map(|(z, c)| z * c).sum();
    4.0 * (norm2 - mean.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SystemParams {
        SystemParams::new(1.0).unwrap()
    }

    #[test]
    fn matrix_entries() {
        let h0 = hamiltonian_matrix(0.0, &unit(), 6);
        for n in 0..6 {
            assert_eq!(h0[(n, n)], n as f64);
        }
        let h = hamiltonian_matrix(1.0, &unit(), 6);
        assert_eq!(h[(0, 0)], -0.25);
        assert!((h[(2, 0)] + 0.25 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(h, h.transpose());
        assert_eq!(h[(3, 0)], 0.0);
    }

    #[test]
    fn spectrum_gap_closes_at_criticality() {
        // the even-sector gap is 2ω√(1 − ε/ω) up to truncation effects
        for &eps in &[0.5, 0.9, 0.99] {
            let h = hamiltonian_matrix(eps, &unit(), 400);
            let e = SymmetricEigen::new(h).eigenvalues;
            let mut vals: Vec<f64> = e.iter().copied().collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            // lowest level pair in the even sector is levels 0 and 2 of the ladder
            let gap = vals[2] - vals[0];
            assert!(
                (gap - 2.0 * (1.0 - eps).sqrt()).abs() < 1e-6,
                "eps = {eps}: {gap}"
            );
        }
    }

    #[test]
    fn free_evolution_is_pure_phase() {
        let psi0 = FockVector::squeezed_vacuum(64, 0.3, 0.4);
        let out = evolve(&psi0, &Schedule::constant(0.0), 2.0, &unit(), 1e-3).unwrap();
        for n in 0..64 {
            let want = psi0.amps[n] * Complex64::from_polar(1.0, -(n as f64) * 2.0);
            assert!((out.amps[n] - want).norm() < 1e-9);
        }
    }

    #[test]
    fn squeezed_vacuum_moments() {
        let psi = FockVector::squeezed_vacuum(256, 0.7, 2.1);
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        let (r, phi) = psi.gaussian_params();
        assert!((r - 0.7).abs() < 1e-12);
        assert!((phi - 2.1).abs() < 1e-12);
        let (_, a2) = psi.moments();
        assert!((2.0 * a2.norm() - 1.4f64.sinh()).abs() < 1e-12);
    }

    #[test]
    fn quench_start_points_along_y() {
        let out = evolve(
            &FockVector::vacuum(32),
            &Schedule::constant(1.0),
            1e-3,
            &unit(),
            1e-5,
        )
        .unwrap();
        let (_, phi) = out.gaussian_params();
        assert!((phi - std::f64::consts::FRAC_PI_2).abs() < 1e-3);
    }

    #[test]
    fn parity_and_norm() {
        let s = Schedule::piecewise(vec![(1.0, 1.0), (0.7, 0.2), (1.0, 0.9)]);
        let out = evolve_vacuum(&s, 2.7, &unit(), &OracleConfig::default()).unwrap();
        assert!(out.odd_mass() < 1e-24);
        assert!((out.norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncation_is_detected() {
        let err = evolve(
            &FockVector::vacuum(16),
            &Schedule::constant(1.0),
            3.0,
            &unit(),
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
    }

    #[test]
    fn vacuum_has_no_information_without_drive() {
        let f = qfi_fd(
            &Schedule::constant(0.0),
            3.0,
            &unit(),
            &OracleConfig {
                dim: 32,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.abs() < 1e-12);
    }

    #[test]
    fn free_rotation_of_squeezed_vacuum() {
        let (r, horizon) = (0.5, 1.5);
        let psi0 = FockVector::squeezed_vacuum(128, r, 0.0);
        let f = qfi_fd_from(
            &psi0,
            &Schedule::constant(0.0),
            horizon,
            &unit(),
            1e-5,
            1e-3,
            1e-3,
        )
        .unwrap();
        let exact = 2.0 * (2.0 * r).sinh().powi(2) * horizon * horizon;
        assert!((f - exact).abs() < 1e-6 * exact, "{f} vs {exact}");
    }

    #[test]
    fn generator_path_agrees_with_finite_difference() {
        let s = Schedule::constant(1.0);
        let fd = qfi_fd(&s, 2.0, &unit(), &OracleConfig::default()).unwrap();
        let gen = qfi_generator_constant(1.0, 2.0, &unit(), 256);
        assert!((fd - gen).abs() < 1e-6 * gen, "{fd} vs {gen}");
    }
}
