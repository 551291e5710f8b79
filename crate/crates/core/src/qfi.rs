//! Fisher information from trajectories, and scaling-law fits.

use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{PhaseState, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QfiResult {
    pub value: f64,
    #[serde(skip)]
    pub j_final: Complex64,
    /// 2(∫ sinh 2r dt)², an upper bound on `value`.
    pub envelope: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// F = 2|∫ sinh(2r) e^{iθ} dt|² from the integrated accumulators.
pub fn qfi_from_trajectory(traj: &Trajectory) -> QfiResult {
    let f = &traj.final_state;
    let j = Complex64::new(f.j_re, f.j_im);
    QfiResult {
        value: 2.0 * j.norm_sqr(),
        j_final: j,
        envelope: 2.0 * f.s_acc * f.s_acc,
        horizon: f.t,
    }
}

/// The same functional by trapezoidal quadrature over stored samples.
pub fn qfi_by_quadrature(samples: &[PhaseState]) -> QfiResult {
    let mut j = Complex64::new(0.0, 0.0);
    let mut s = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        let fa = Complex64::from_polar(a.sinh2r(), a.theta);
        let fb = Complex64::from_polar(b.sinh2r(), b.theta);
        j += 0.5 * dt * (fa + fb);
        s += 0.5 * dt * (a.sinh2r() + b.sinh2r());
    }
    let horizon = samples.last().map_or(0.0, |p| p.t);
    QfiResult {
        value: 2.0 * j.norm_sqr(),
        j_final: j,
        envelope: 2.0 * s * s,
        horizon,
    }
}

/// ∫ sinh²(2r) dt by trapezoidal quadrature over stored samples.
pub fn a_acc_by_quadrature(samples: &[PhaseState]) -> f64 {
    samples
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].sinh2r().powi(2) + w[1].sinh2r().powi(2)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub window: (f64, f64),
    pub points: usize,
}

const MIN_FIT_POINTS: usize = 5;

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

fn fit(points: &[(f64, f64)], window: (f64, f64), log_x: bool) -> Result<FitResult> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::Fit(format!("degenerate window [{lo}, {hi}]")));
    }
    let inside: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, _)| t >= lo && t <= hi)
        .collect();
    if inside.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} points in window [{lo}, {hi}], need at least {MIN_FIT_POINTS}",
            inside.len()
        )));
    }
    if let Some(&(t, f)) = inside
        .iter()
        .find(|&&(t, f)| !(f > 0.0) || (log_x && !(t > 0.0)))
    {
        return Err(Error::Fit(format!(
            "non-positive value at T = {t}: F = {f}"
        )));
    }
    let xs: Vec<f64> = inside
        .iter()
        .map(|p| if log_x { p.0.ln() } else { p.0 })
        .collect();
    let ys: Vec<f64> = inside.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, residual_rms) = least_squares(&xs, &ys);
    if !residual_rms.is_finite() {
        return Err(Error::Fit("non-finite residual".into()));
    }
    Ok(FitResult {
        slope,
        intercept,
        residual_rms,
        window,
        points: inside.len(),
    })
}

/// Slope of ln F against ln T.
pub fn fit_power_law(points: &[(f64, f64)], window: (f64, f64)) -> Result<FitResult> {
    fit(points, window, true)
}

/// Slope of ln F against T.
pub fn fit_exponent(points: &[(f64, f64)], window: (f64, f64)) -> Result<FitResult> {
    fit(points, window, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn synthetic(
        s: f64,
        theta: impl Fn(f64) -> f64,
        horizon: f64,
        count: usize,
    ) -> Vec<PhaseState> {
        (0..=count)
            .map(|i| {
                let t = horizon * i as f64 / count as f64;
                PhaseState {
                    t,
                    theta: theta(t),
                    ..PhaseState::injected(s, 0.0, 0.0)
                }
            })
            .collect()
    }

    #[test]
    fn constant_integrand() {
        let q = qfi_by_quadrature(&synthetic(1.0, |_| 0.0, 1.0, 10));
        assert!((q.value - 2.0).abs() < 1e-14);
        assert!((q.envelope - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rotating_integrand() {
        let (s, horizon) = (1.5, 2.0);
        let q = qfi_by_quadrature(&synthetic(s, |t| PI * t / horizon, horizon, 20_000));
        let exact = 2.0 * s * s * (2.0 * horizon / PI).powi(2);
        assert!((q.value - exact).abs() < 1e-8 * exact);
        assert!(q.value <= q.envelope);
    }

    #[test]
    fn global_phase_shift_is_invisible() {
        let base = qfi_by_quadrature(&synthetic(0.7, |t| t * t, 3.0, 3000));
        let shifted = qfi_by_quadrature(&synthetic(0.7, |t| t * t + 1.234, 3.0, 3000));
        assert!((base.value - shifted.value).abs() < 1e-12 * base.value);
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| (i as f64 * 10.0, (i as f64 * 10.0).powi(7)))
            .collect();
        let f = fit_power_law(&pts, (1.0, 1000.0)).unwrap();
        assert!((f.slope - 7.0).abs() < 1e-9);
        assert!(f.residual_rms < 1e-9);
    }

    #[test]
    fn exact_exponential() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                (
                    30.0 + 5.0 * i as f64,
                    (0.9745 * (30.0 + 5.0 * i as f64)).exp(),
                )
            })
            .collect();
        let f = fit_exponent(&pts, (30.0, 70.0)).unwrap();
        assert!((f.slope - 0.9745).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|i| (i as f64, i as f64)).collect();
        assert!(fit_power_law(&pts, (1.0, 3.0)).is_err());
        assert!(fit_power_law(&pts, (3.0, 3.0)).is_err());
        let mut bad = pts.clone();
        bad[2].1 = 0.0;
        assert!(fit_power_law(&bad, (0.0, 10.0)).is_err());
    }
}
