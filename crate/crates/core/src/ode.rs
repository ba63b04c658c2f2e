//! Explicit Runge–Kutta integrators.
//!
//! [`Dopri5`] is the Dormand–Prince 5(4) embedded pair with an I-controller
//! on the local error; [`rk4_step`] is a classical fixed-step RK4 used for
//! cheap scans where many trajectories are integrated on a common grid.

use crate::error::{Error, Result};

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N];
}

impl<const N: usize, F> OdeSystem<N> for F
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
        self(t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
        }
    }
}

/// Per-call integration statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub fn_evals: usize,
    /// Largest normalized local error among accepted steps (≤ 1 by construction).
    pub max_error: f64,
    /// Step size the controller proposed last; reuse it to warm-start the next call.
    pub h_next: f64,
}

impl Stats {
    pub fn merge(&mut self, other: &Stats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.fn_evals += other.fn_evals;
        self.max_error = self.max_error.max(other.max_error);
        self.h_next = other.h_next;
    }
}

// Dormand–Prince coefficients.
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

// 5th-order weights (also the last row of A, FSAL).
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
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

/// Adaptive Dormand–Prince 5(4) integrator.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub tol: Tolerance,
    /// Upper bound on the step size.
    pub max_step: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Steps shorter than this fraction of the interval count as underflow.
    pub min_step_ratio: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self::new(Tolerance::default())
    }
}

impl Dopri5 {
    pub fn new(tol: Tolerance) -> Self {
        Self {
            tol,
            max_step: f64::INFINITY,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
            min_step_ratio: 1e-14,
            max_steps: 10_000_000,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    /// Integrate from `(t0, y0)` to `t1 >= t0`, calling `observe` after every
    /// accepted step (not at `t0`). `h0` warm-starts the step size.
    pub fn integrate<S, const N: usize>(
        &self,
        sys: &S,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        h0: Option<f64>,
        mut observe: impl FnMut(f64, &[f64; N]),
    ) -> Result<([f64; N], Stats)>
    where
        S: OdeSystem<N> + ?Sized,
    {
        let mut stats = Stats::default();
        let span = t1 - t0;
        if span <= 0.0 {
            stats.h_next = h0.unwrap_or(0.0);
            return Ok((y0, stats));
        }
        let mut t = t0;
        let mut y = y0;
        let mut k1 = sys.rhs(t, &y);
        stats.fn_evals += 1;
        let mut h = match h0 {
            Some(h) if h > 0.0 => h,
            _ => self.initial_step(sys, t, &y, &k1, span, &mut stats),
        }
        .min(self.max_step)
        .min(span);
        let h_min = self.min_step_ratio * span.max(t0.abs().max(t1.abs()));

        while t < t1 {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::StepSizeUnderflow { t, h });
            }
            let last = t + h >= t1 || (t1 - (t + h)) < 1e-3 * h;
            let h_try = if last { t1 - t } else { h };

            let k2 = sys.rhs(t + C2 * h_try, &axpy(&y, h_try, &[(A21, &k1)]));
            let k3 = sys.rhs(t + C3 * h_try, &axpy(&y, h_try, &[(A31, &k1), (A32, &k2)]));
            let k4 = sys.rhs(
                t + C4 * h_try,
                &axpy(&y, h_try, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = sys.rhs(
                t + C5 * h_try,
                &axpy(&y, h_try, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = sys.rhs(
                t + h_try,
                &axpy(
                    &y,
                    h_try,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = axpy(
                &y,
                h_try,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = sys.rhs(t + h_try, &y_new);
            stats.fn_evals += 6;

            let mut err = 0.0f64;
            for i in 0..N {
                let e = h_try
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let scale = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / scale).abs());
            }
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                err = f64::INFINITY;
            }

            if err <= 1.0 {
                t = if last { t1 } else { t + h_try };
                y = y_new;
                k1 = k7;
                stats.accepted += 1;
                stats.max_error = stats.max_error.max(err);
                observe(t, &y);
                let factor = if err == 0.0 {
                    self.max_factor
                } else {
                    (self.safety * err.powf(-0.2)).clamp(self.min_factor, self.max_factor)
                };
                h = (h_try * factor).min(self.max_step);
            } else {
                stats.rejected += 1;
                let factor = (self.safety * err.powf(-0.2)).clamp(self.min_factor, 1.0);
                h = h_try * factor;
                if h < h_min {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
        stats.h_next = h;
        Ok((y, stats))
    }

    fn initial_step<S, const N: usize>(
        &self,
        sys: &S,
        t: f64,
        y: &[f64; N],
        f0: &[f64; N],
        span: f64,
        stats: &mut Stats,
    ) -> f64
    where
        S: OdeSystem<N> + ?Sized,
    {
        // Hairer–Wanner starting step heuristic.
        let mut d0 = 0.0f64;
        let mut d1 = 0.0f64;
        for i in 0..N {
            let sc = self.tol.atol + self.tol.rtol * y[i].abs();
            d0 = d0.max((y[i] / sc).abs());
            d1 = d1.max((f0[i] / sc).abs());
        }
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
        .min(span);
        let y1 = axpy(y, h0, &[(1.0, f0)]);
        let f1 = sys.rhs(t + h0, &y1);
        stats.fn_evals += 1;
        let mut d2 = 0.0f64;
        for i in 0..N {
            let sc = self.tol.atol + self.tol.rtol * y[i].abs();
            d2 = d2.max(((f1[i] - f0[i]) / sc).abs() / h0);
        }
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }
}

/// One classical RK4 step.
#[inline]
pub fn rk4_step<S, const N: usize>(sys: &S, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    S: OdeSystem<N> + ?Sized,
{
    let k1 = sys.rhs(t, y);
    let k2 = sys.rhs(t + 0.5 * h, &axpy(y, h, &[(0.5, &k1)]));
    let k3 = sys.rhs(t + 0.5 * h, &axpy(y, h, &[(0.5, &k2)]));
    let k4 = sys.rhs(t + h, &axpy(y, h, &[(1.0, &k3)]));
    axpy(
        y,
        h,
        &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
    )
}
