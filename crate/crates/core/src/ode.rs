//! Dormand–Prince 5(4) stepper with the standard fourth-order dense output.
//!
//! This module only takes single trial steps; step-size control, event
//! handling and phase unwrapping live in the drivers that use it.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Result of one trial step from `t0` with size `h`.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    /// Derivative at the end point (first stage of the next step).
    pub f1: [f64; N],
    /// Scaled RMS error estimate; the step is acceptable when `err <= 1`.
    pub err: f64,
    cont: [[f64; N]; 4],
}

impl<const N: usize> Step<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// Dense output at `t` in `[t0, t0 + h]`.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let s = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let s1 = 1.0 - s;
        let mut out = [0.0; N];
        for i in 0..N {
            let [r2, r3, r4, r5] = [
                self.cont[0][i],
                self.cont[1][i],
                self.cont[2][i],
                self.cont[3][i],
            ];
            out[i] = self.y0[i] + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5)));
        }
        out
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// Take one Dormand–Prince step. `f0` must be the derivative at `(t0, y0)`.
///
/// `rhs(t, y, dy)` fills `dy`. Errors are measured against
/// `abs_tol + rel_tol * max(|y0|, |y1|)` component-wise.
pub fn dopri5_step<const N: usize, F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Step<N>
where
    F: FnMut(f64, &[f64; N], &mut [f64; N]),
{
    let k1 = *f0;
    let mut k2 = [0.0; N];
    let mut k3 = [0.0; N];
    let mut k4 = [0.0; N];
    let mut k5 = [0.0; N];
    let mut k6 = [0.0; N];
    let mut k7 = [0.0; N];

    rhs(t0 + C2 * h, &axpy(y0, h, &[(A21, &k1)]), &mut k2);
    rhs(
        t0 + C3 * h,
        &axpy(y0, h, &[(A31, &k1), (A32, &k2)]),
        &mut k3,
    );
    rhs(
        t0 + C4 * h,
        &axpy(y0, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        &mut k4,
    );
    rhs(
        t0 + C5 * h,
        &axpy(y0, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        &mut k5,
    );
    rhs(
        t0 + h,
        &axpy(
            y0,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ),
        &mut k6,
    );
    let y1 = axpy(
        y0,
        h,
        &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
    );
    rhs(t0 + h, &y1, &mut k7);

    let mut sq = 0.0;
    for i in 0..N {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let scale = abs_tol + rel_tol * y0[i].abs().max(y1[i].abs());
        sq += (e / scale).powi(2);
    }
    let err = (sq / N as f64).sqrt();

    let mut cont = [[0.0; N]; 4];
    for i in 0..N {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k1[i] - ydiff;
        cont[0][i] = ydiff;
        cont[1][i] = bspl;
        cont[2][i] = ydiff - h * k7[i] - bspl;
        cont[3][i] =
            h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }

    Step {
        t0,
        h,
        y0: *y0,
        y1,
        f1: k7,
        err,
        cont,
    }
}

/// Step-size factor from an error estimate (I-controller, order 5).
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        return 5.0;
    }
    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
}
