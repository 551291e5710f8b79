//! Optimal on-off protocols in the large-squeezing limit.
//!
//! A protocol with winding number n runs n cycles of (on until φ = φ_n,
//! off until φ = 2π) and a final on-segment up to φ̃_n.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::{brent_root, maximize_on_interval};

/// Two protocols whose predicted squeezing differs by less than this tie.
pub const TIE_TOL: f64 = 1e-9;

/// Below this value of √(1 − ε_max/ω) the critical-drive formulas are used.
const CRITICAL_S: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffSolution {
    pub n: u32,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub eps_max: f64,
    pub phi_n: f64,
    pub tilde_phi_n: f64,
    pub r_pred: f64,
    pub feasible: bool,
}

impl OnOffSolution {
    fn infeasible(n: u32, horizon: f64, eps_max: f64) -> Self {
        OnOffSolution {
            n,
            horizon,
            eps_max,
            phi_n: f64::NAN,
            tilde_phi_n: f64::NAN,
            r_pred: f64::NAN,
            feasible: false,
        }
    }

    /// Total accumulated phase 2πn + φ̃_n at the end of the protocol.
    pub fn total_phase(&self) -> f64 {
        TAU * self.n as f64 + self.tilde_phi_n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("solution serializes")
    }
}

fn ratio(eps_max: f64, omega: f64) -> Result<f64> {
    let k = eps_max / omega;
    if !(k >= 0.0 && k <= 1.0 + 1e-12) || !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_max = {eps_max} must lie in [0, omega = {omega}] (symmetric phase)"
        )));
    }
    Ok(k.min(1.0))
}

/// Time for φ to advance from 0 to `phi` with the control on.
pub fn on_time(phi: f64, eps_max: f64, omega: f64) -> Result<f64> {
    let k = ratio(eps_max, omega)?;
    let s = (1.0 - k).sqrt();
    if s < CRITICAL_S {
        if phi >= PI {
            return Err(Error::Pole { angle: phi });
        }
        return Ok((phi / 2.0).tan() / omega);
    }
    if phi == PI {
        return Ok(PI / (2.0 * s * omega));
    }
    let base = (s * (phi / 2.0).tan()).atan() / (s * omega);
    Ok(if phi > PI {
        base + PI / (s * omega)
    } else {
        base
    })
}

/// Time for φ to advance from `phi` to 2π with the control off.
pub fn off_time(phi: f64, omega: f64) -> f64 {
    (PI - phi / 2.0) / omega
}

/// Inverse of [`on_time`]: angle reached after on-time `dt`, capped at π.
fn on_angle(dt: f64, k: f64, omega: f64) -> f64 {
    let s = (1.0 - k).sqrt();
    if s < CRITICAL_S {
        return 2.0 * (omega * dt).atan();
    }
    let a = s * omega * dt;
    if a >= PI / 2.0 {
        PI
    } else {
        2.0 * a.tan().atan2(s)
    }
}

/// Total duration of an n-cycle protocol with the given angles.
pub fn normalization_t(
    n: u32,
    phi_n: f64,
    tilde_phi: f64,
    eps_max: f64,
    omega: f64,
) -> Result<f64> {
    let cycles = if n > 0 {
        n as f64 * (on_time(phi_n, eps_max, omega)? + off_time(phi_n, omega))
    } else {
        0.0
    };
    Ok(cycles + on_time(tilde_phi, eps_max, omega)?)
}

fn segment_gain(phi: f64, k: f64) -> Result<f64> {
    let arg = 1.0 - k * (phi / 2.0).sin().powi(2);
    if arg <= 0.0 {
        return Err(Error::Pole { angle: phi });
    }
    Ok(-0.5 * arg.ln())
}

/// Predicted final squeezing of the protocol.
pub fn r_pred(n: u32, phi_n: f64, tilde_phi: f64, eps_max: f64, omega: f64) -> Result<f64> {
    let k = ratio(eps_max, omega)?;
    let cycles = if n > 0 {
        n as f64 * segment_gain(phi_n, k)?
    } else {
        0.0
    };
    Ok(cycles + segment_gain(tilde_phi, k)?)
}

fn critical_tilde(phi_n: f64) -> f64 {
    PI - (2.0 / (phi_n / 2.0).tan()).min(1.0).asin()
}

/// Optimal protocol with exactly `n` windings in total time `T`.
pub fn solve_fixed_n(horizon: f64, n: u32, eps_max: f64, omega: f64) -> Result<OnOffSolution> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "T = {horizon} must be > 0"
        )));
    }
    let k = ratio(eps_max, omega)?;
    if (1.0 - k).sqrt() < CRITICAL_S {
        Ok(solve_critical(horizon, n, eps_max, omega))
    } else {
        solve_numeric(horizon, n, eps_max, omega)
    }
}

fn solve_critical(horizon: f64, n: u32, eps_max: f64, omega: f64) -> OnOffSolution {
    let wt = omega * horizon;
    if n == 0 {
        let tilde = 2.0 * wt.atan();
        return OnOffSolution {
            n,
            horizon,
            eps_max,
            phi_n: tilde,
            tilde_phi_n: tilde,
            r_pred: 0.5 * wt.mul_add(wt, 1.0).ln(),
            feasible: true,
        };
    }
    let nf = n as f64;
    // ωT as a function of t = tan(φ_n/2) ≥ 2, increasing
    let budget =
        |t: f64| nf * (t + PI - t.atan()) + 0.5 * t * (1.0 + (1.0 - 4.0 / (t * t)).max(0.0).sqrt());
    if budget(2.0) > wt {
        return OnOffSolution::infeasible(n, horizon, eps_max);
    }
    let lo = 2.0 * 2f64.atan();
    let hi = 2.0 * (wt + 3.0).atan();
    let g = |phi: f64| budget((phi / 2.0).tan()) - wt;
    let Some(phi_n) = brent_root(g, lo, hi, 1e-13, 200) else {
        return OnOffSolution::infeasible(n, horizon, eps_max);
    };
    let tilde = critical_tilde(phi_n);
    let r = -nf * (phi_n / 2.0).cos().ln() - (tilde / 2.0).cos().ln();
    OnOffSolution {
        n,
        horizon,
        eps_max,
        phi_n,
        tilde_phi_n: tilde,
        r_pred: r,
        feasible: true,
    }
}

/// Maximize the predicted squeezing over φ_n with the final angle fixed by
/// the residual time budget. Valid for any 0 < ε_max ≤ ω.
fn solve_numeric(horizon: f64, n: u32, eps_max: f64, omega: f64) -> Result<OnOffSolution> {
    let k = ratio(eps_max, omega)?;
    if k == 0.0 {
        return Ok(OnOffSolution::infeasible(n, horizon, eps_max));
    }
    let tilde_for = |budget: f64| on_angle(budget, k, omega);
    let capped = |tilde: f64| (1.0 - k).sqrt() >= CRITICAL_S && tilde >= PI;
    if n == 0 {
        let tilde = tilde_for(horizon);
        if capped(tilde) {
            return Ok(OnOffSolution::infeasible(n, horizon, eps_max));
        }
        let r = segment_gain(tilde, k)?;
        return Ok(OnOffSolution {
            n,
            horizon,
            eps_max,
            phi_n: tilde,
            tilde_phi_n: tilde,
            r_pred: r,
            feasible: true,
        });
    }
    let nf = n as f64;
    let cycle = |phi: f64| {
        nf * (on_time(phi, eps_max, omega).unwrap_or(f64::INFINITY) + off_time(phi, omega))
    };
    // cycle time increases with φ; largest φ_n that leaves a non-negative budget
    let upper_phi = PI * (1.0 - 1e-12);
    let phi_max = if cycle(upper_phi) <= horizon {
        upper_phi
    } else if cycle(0.0) >= horizon {
        return Ok(OnOffSolution::infeasible(n, horizon, eps_max));
    } else {
        brent_root(|p| cycle(p) - horizon, 0.0, upper_phi, 1e-14, 200).unwrap_or(0.0)
    };
    let objective = |phi: f64| {
        let budget = (horizon - cycle(phi)).max(0.0);
        let tilde = tilde_for(budget);
        nf * segment_gain(phi, k).unwrap_or(f64::NEG_INFINITY)
            + segment_gain(tilde, k).unwrap_or(f64::NEG_INFINITY)
    };
    let (phi_n, r) = maximize_on_interval(objective, 0.0, phi_max, 256, 1e-13);
    let edge = 1e-7 * PI;
    let tilde = tilde_for((horizon - cycle(phi_n)).max(0.0));
    if phi_n <= edge || phi_n >= phi_max - edge || capped(tilde) || !r.is_finite() {
        return Ok(OnOffSolution::infeasible(n, horizon, eps_max));
    }
    Ok(OnOffSolution {
        n,
        horizon,
        eps_max,
        phi_n,
        tilde_phi_n: tilde,
        r_pred: r,
        feasible: true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WindingScan {
    pub best: OnOffSolution,
    pub scan: Vec<OnOffSolution>,
    /// Larger winding number tying with `best` within [`TIE_TOL`].
    pub tie: Option<u32>,
}

/// Best protocol over winding numbers `0..=n_max`.
pub fn optimize_n(horizon: f64, eps_max: f64, omega: f64, n_max: u32) -> Result<WindingScan> {
    let scan: Vec<OnOffSolution> = (0..=n_max)
        .into_par_iter()
        .map(|n| solve_fixed_n(horizon, n, eps_max, omega))
        .collect::<Result<_>>()?;
    let mut best: Option<OnOffSolution> = None;
    for s in scan.iter().filter(|s| s.feasible) {
        match best {
            Some(b) if s.r_pred <= b.r_pred + TIE_TOL => {}
            _ => best = Some(*s),
        }
    }
    let best = match best {
        Some(b) => b,
        None => scan[0],
    };
    let tie = scan
        .iter()
        .filter(|s| s.feasible && s.n != best.n && (s.r_pred - best.r_pred).abs() <= TIE_TOL)
        .map(|s| s.n)
        .next();
    Ok(WindingScan { best, scan, tie })
}

/// Winding-number ceiling comfortably above the asymptotic optimum.
pub fn default_n_max(horizon: f64, omega: f64) -> u32 {
    (0.25 * omega * horizon).ceil() as u32 + 3
}

fn phi_star_residual(phi: f64) -> f64 {
    let h = phi / 2.0;
    h.tan() * (1.0 + h.cos().ln()) + PI - h
}

/// Asymptotically optimal per-cycle switching angle φ*.
pub fn phi_star() -> f64 {
    brent_root(phi_star_residual, 2.0, PI - 1e-9, 1e-15, 200).expect("bracketed root")
}

/// Asymptotically optimal winding number n_opt ≈ ωT / (tan(φ*/2) + π − φ*/2).
pub fn n_opt_asymptotic(horizon: f64, omega: f64) -> f64 {
    let p = phi_star();
    omega * horizon / ((p / 2.0).tan() + PI - p / 2.0)
}

/// Asymptotic slope of the optimal squeezing, r_max / ωT = 1 / tan(φ*/2).
pub fn r_rate_asymptotic() -> f64 {
    1.0 / (phi_star() / 2.0).tan()
}

/// Exponential rate Γ(ε_max) of the optimal QFI, F ~ e^{Γ ωT}.
pub fn gamma_exponent(eps_max: f64, omega: f64) -> Result<f64> {
    let k = ratio(eps_max, omega)?;
    if k == 0.0 {
        return Ok(0.0);
    }
    let rate = |phi: f64| {
        let gain = segment_gain(phi, k).unwrap_or(0.0);
        let t = omega * on_time(phi, eps_max, omega).unwrap_or(f64::INFINITY) + PI - phi / 2.0;
        if t.is_finite() {
            gain / t
        } else {
            0.0
        }
    };
    let (_, best) = maximize_on_interval(rate, 1e-9, PI - 1e-9, 400, 1e-12);
    Ok(4.0 * best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        let t = normalization_t(1, PI / 2.0, PI / 2.0, 1.0, 1.0).unwrap();
        assert!((t - (2.0 + 0.75 * PI)).abs() < 1e-12);
        assert_eq!(normalization_t(0, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let on = on_time(PI / 2.0, 0.75, 1.0).unwrap();
        assert!((on - 0.5f64.atan() / 0.5).abs() < 1e-12);
        assert!((on - 0.927_295_218).abs() < 1e-8);
    }

    #[test]
    fn general_form_tends_to_critical() {
        for &phi in &[0.3, 1.2, 2.5, 3.0] {
            let a = on_time(phi, 1.0 - 1e-10, 1.0).unwrap();
            let b = on_time(phi, 1.0, 1.0).unwrap();
            assert!((a - b).abs() < 1e-6 * b.max(1.0), "{phi}: {a} vs {b}");
        }
    }

    #[test]
    fn tangent_pole() {
        assert!(matches!(on_time(PI, 1.0, 1.0), Err(Error::Pole { .. })));
        assert!(matches!(
            r_pred(1, PI, 0.5, 1.0, 1.0),
            Err(Error::Pole { .. })
        ));
        assert!(on_time(PI, 0.5, 1.0).unwrap().is_finite());
    }

    #[test]
    fn predicted_squeezing_values() {
        assert_eq!(r_pred(0, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let r = r_pred(2, 2.8, 0.0, 1.0, 1.0).unwrap();
        assert!((r + 2.0 * 1.4f64.cos().ln()).abs() < 1e-12);
        assert!((r - 3.544_300_275).abs() < 1e-8);
        for &(a, b) in &[(0.4, 1.1), (2.0, 2.9), (3.1, 0.2)] {
            let general = r_pred(3, a, b, 1.0, 1.0).unwrap();
            let critical = -3.0 * (a / 2.0).cos().ln() - (b / 2.0).cos().ln();
            assert!((general - critical).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_n_round_trip() {
        for &n in &[1u32, 2, 5] {
            let phi = 2.9;
            let tilde = critical_tilde(phi);
            let t = normalization_t(n, phi, tilde, 1.0, 1.0).unwrap();
            let sol = solve_fixed_n(t, n, 1.0, 1.0).unwrap();
            assert!(sol.feasible);
            assert!((sol.phi_n - phi).abs() < 1e-9, "{}", sol.phi_n - phi);
            let back = normalization_t(n, sol.phi_n, sol.tilde_phi_n, 1.0, 1.0).unwrap();
            assert!((back - t).abs() < 1e-9 * t);
        }
    }

    #[test]
    fn zero_winding_is_a_single_segment() {
        let sol = solve_fixed_n(7.0, 0, 1.0, 1.0).unwrap();
        assert!((sol.r_pred - 0.5 * 50f64.ln()).abs() < 1e-12);
        assert!(((sol.tilde_phi_n / 2.0).tan() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_n_offset_converges() {
        let offset = |t: f64| solve_fixed_n(t, 2, 1.0, 1.0).unwrap().r_pred - 3.0 * t.ln();
        let (a, b, c) = (offset(1e3), offset(1e4), offset(1e5));
        assert!((c - b).abs() < (b - a).abs());
        assert!((c - b).abs() < 1e-3);
    }

    #[test]
    fn infeasible_when_time_is_short() {
        let sol = solve_fixed_n(3.0, 1, 1.0, 1.0).unwrap();
        assert!(!sol.feasible);
        let scan = optimize_n(3.0, 1.0, 1.0, 4).unwrap();
        assert_eq!(scan.best.n, 0);
    }

    #[test]
    fn numeric_path_reproduces_critical_condition() {
        for &(t, n) in &[(30.0, 3u32), (60.0, 9), (45.0, 5)] {
            let num = solve_numeric(t, n, 1.0, 1.0).unwrap();
            let exact = solve_critical(t, n, 1.0, 1.0);
            assert!(num.feasible);
            let lhs = num.tilde_phi_n.sin();
            let rhs = 2.0 / (num.phi_n / 2.0).tan();
            assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
            assert!((num.r_pred - exact.r_pred).abs() < 1e-9 * exact.r_pred);
        }
    }

    #[test]
    fn subcritical_solution_fills_the_horizon() {
        // with fewer windings the per-cycle gain saturates before T is used up
        assert!(!solve_fixed_n(60.0, 8, 0.7, 1.0).unwrap().feasible);
        let sol = solve_fixed_n(60.0, 14, 0.7, 1.0).unwrap();
        assert!(sol.feasible);
        let t = normalization_t(sol.n, sol.phi_n, sol.tilde_phi_n, 0.7, 1.0).unwrap();
        assert!((t - 60.0).abs() < 1e-9 * 60.0);
    }

    #[test]
    fn phi_star_value() {
        let p = phi_star();
        assert!((p - 2.663_637).abs() < 1e-5);
        assert!(phi_star_residual(p).abs() < 1e-9);
        assert!((n_opt_asymptotic(100.0, 1.0) - 16.908).abs() < 0.01);
        assert_eq!(n_opt_asymptotic(0.0, 1.0), 0.0);
    }

    #[test]
    fn gamma_values() {
        let g = gamma_exponent(1.0, 1.0).unwrap();
        assert!((g - 0.974_534).abs() < 1e-5, "{g}");
        assert!((g - 4.0 * r_rate_asymptotic()).abs() < 1e-8);
        assert_eq!(gamma_exponent(0.0, 1.0).unwrap(), 0.0);
        let a = gamma_exponent(0.7, 1.0).unwrap();
        let b = gamma_exponent(0.9, 1.0).unwrap();
        assert!(a < b && b < g);
        assert!(gamma_exponent(1.2, 1.0).is_err());
    }

    #[test]
    fn json_record() {
        let sol = solve_fixed_n(20.0, 2, 1.0, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&sol.to_json()).unwrap();
        for key in [
            "n",
            "T",
            "eps_max",
            "phi_n",
            "tilde_phi_n",
            "r_pred",
            "feasible",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn ties_prefer_fewer_windings() {
        let scan = optimize_n(60.0, 1.0, 1.0, 20).unwrap();
        if let Some(other) = scan.tie {
            assert!(other > scan.best.n);
        }
        let max = scan
            .scan
            .iter()
            .filter(|s| s.feasible)
            .map(|s| s.r_pred)
            .fold(f64::MIN, f64::max);
        assert!(scan.best.r_pred >= max - TIE_TOL);
    }
}
