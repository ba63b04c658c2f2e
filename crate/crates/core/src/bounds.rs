//! Closed-form transfer times between purity levels and two-sided bounds on
//! the minimal time of the two-point problem.
//!
//! Only the Bloch radius can change at a finite rate, so the time to move
//! from radius `μ₀` to `μ₁` is bounded below by the purity problem, solved by
//! pointing `θ` straight up (`σ = +1`) or down (`σ = −1`) along the axis
//! `r_x = 0`:
//!
//! ```text
//! T = (1/γ) ln((1 − σμ₀)/(1 − σμ₁)),   σ = sgn(μ₁ − μ₀)
//! ```
//!
//! For targets with `μ₁ ≤ 1 − (π/2)(γ/ω)` an explicit control reaches the
//! target in at most `π/ω + e/γ` longer.

use std::f64::consts::{E, FRAC_PI_2, PI};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bloch::{
    mu_of_purity, purity_of_mu, sign_tie_plus, BlochState, CylState, PhysParams, STATE_TOL,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::schedule::ControlSchedule;

fn check_radius(name: &str, mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0 && mu <= 1.0 + STATE_TOL) {
        return Err(Error::InvalidState(format!(
            "{name} must lie in [0, 1], got {mu}"
        )));
    }
    Ok(mu.min(1.0))
}

/// `(1/γ) ln((1 − σμ₀)/(1 − σμ₁))` with `σ = sgn(μ₁ − μ₀)`, `sgn(0) = +1`.
///
/// Moving onto the pure sphere (`μ₁ = 1`) from a mixed state takes infinite
/// time; `μ₀ = μ₁ = 1` gives 0.
fn purity_time(mu0: f64, mu1: f64, gamma: f64) -> Result<(f64, f64)> {
    let sigma = sign_tie_plus(mu1 - mu0);
    if mu0 == mu1 {
        return Ok((0.0, sigma));
    }
    if mu1 >= 1.0 {
        return Err(Error::NoFiniteTime { mu0, mu1 });
    }
    let t = ((1.0 - sigma * mu0) / (1.0 - sigma * mu1)).ln() / gamma;
    Ok((t.max(0.0), sigma))
}

/// Optimal motion between two purity levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityTransfer {
    pub mu0: f64,
    pub mu1: f64,
    pub gamma: f64,
    /// +1 when the purity increases, −1 when it decreases.
    pub sigma: f64,
    pub time: f64,
}

impl PurityTransfer {
    /// Constant control angle `σπ/2`.
    pub fn theta(&self) -> f64 {
        self.sigma * FRAC_PI_2
    }

    /// `R(t) = μ₀e^{−γt} + σ(1 − e^{−γt})`; `r_x ≡ 0` throughout.
    pub fn radius_at(&self, t: f64) -> f64 {
        let e = (-self.gamma * t).exp();
        self.mu0 * e + self.sigma * (1.0 - e)
    }

    pub fn start(&self) -> CylState {
        CylState::new(0.0, self.mu0, self.theta())
    }

    pub fn schedule(&self) -> ControlSchedule {
        ControlSchedule::constant_theta(self.theta(), self.time)
    }
}

/// Fastest change of the Bloch radius from `mu0` to `mu1` at decay rate `gamma`.
pub fn purity_transfer_time(mu0: f64, mu1: f64, gamma: f64) -> Result<PurityTransfer> {
    let mu0 = check_radius("mu0", mu0)?;
    let mu1 = check_radius("mu1", mu1)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParams(format!(
            "gamma must be finite and positive, got {gamma}"
        )));
    }
    let (time, sigma) = purity_time(mu0, mu1, gamma)?;
    Ok(PurityTransfer {
        mu0,
        mu1,
        gamma,
        sigma,
        time,
    })
}

/// Lower and (when available) upper bound on the minimal transfer time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBounds {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub lower: f64,
    /// Present iff `feasible_upper`.
    pub upper: Option<f64>,
    pub feasible_upper: bool,
    /// `1 − (π/2)(γ/ω)`.
    pub cap: f64,
}

impl TimeBounds {
    /// Width of the bracket, `π/ω + e/γ`, when the upper bound exists.
    pub fn gap(&self) -> Option<f64> {
        self.upper.map(|u| u - self.lower)
    }
}

/// `π/ω + e/γ`.
pub fn upper_margin(params: &PhysParams) -> f64 {
    PI / params.omega + E / params.gamma
}

/// Bounds for radii `mu0 → mu1`.
pub fn bounds_from_radii(mu0: f64, mu1: f64, params: &PhysParams) -> Result<TimeBounds> {
    params.validate()?;
    let mu0 = check_radius("|r0|", mu0)?;
    let mu1 = check_radius("|r1|", mu1)?;
    let (lower, sigma) = purity_time(mu0, mu1, params.gamma)?;
    let cap = params.feasibility_cap();
    let feasible_upper = mu1 <= cap;
    let upper = feasible_upper.then(|| upper_margin(params) + lower);
    Ok(TimeBounds {
        mu0,
        mu1,
        sigma,
        lower,
        upper,
        feasible_upper,
        cap,
    })
}

/// Bounds on the minimal time to steer `r0` to `r1`.
pub fn two_point_bounds(r0: &BlochState, r1: &BlochState, params: &PhysParams) -> Result<TimeBounds> {
    r0.validate()?;
    r1.validate()?;
    bounds_from_radii(r0.norm(), r1.norm(), params)
}

/// Whether radius `mu1` can be reached in finite time from radius `mu0`.
pub fn reachable(mu0: f64, mu1: f64) -> bool {
    mu1 < 1.0 || mu0 == mu1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub p0: f64,
    pub p1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub lower: f64,
    pub upper: f64,
    /// Upper bound without the `π/ω` term.
    pub upper_neglect_pi_over_omega: f64,
}

/// Bounds over an `n × n` grid of purities `P0, P1 ∈ [1/2, P_max]`, where
/// `P_max` corresponds to the radius cap. Rows run over `P0`, columns over
/// `P1`, both increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Grid {
    pub n: usize,
    pub p_max: f64,
    pub rows: Vec<Figure1Row>,
}

impl Figure1Grid {
    pub fn at(&self, i0: usize, i1: usize) -> &Figure1Row {
        &self.rows[i0 * self.n + i1]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "P0,P1,lower,upper,upper_neglect_pi_over_omega")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.p0, r.p1, r.lower, r.upper, r.upper_neglect_pi_over_omega
            )?;
        }
        Ok(())
    }
}

pub fn figure1_grid(gamma: f64, omega: f64, n: usize, exec: Execution) -> Result<Figure1Grid> {
    // κ does not enter the bounds.
    let params = PhysParams::new(omega, 1.0, gamma)?;
    if n < 2 {
        return Err(Error::InvalidGrid(format!("need n >= 2, got {n}")));
    }
    let cap = params.feasibility_cap();
    if cap < 0.0 {
        return Err(Error::InvalidParams(format!(
            "γ/ω = {} leaves no target radius with an upper bound",
            params.ratio()
        )));
    }
    let p_max = purity_of_mu(cap);
    let levels: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let p = if i + 1 == n {
                p_max
            } else {
                0.5 + (p_max - 0.5) * i as f64 / (n - 1) as f64
            };
            let mu = if i + 1 == n { cap } else { mu_of_purity(p)?.min(cap) };
            Ok((p, mu))
        })
        .collect::<Result<_>>()?;
    let pi_over_omega = PI / omega;
    let e_over_gamma = E / gamma;
    let rows: Vec<Vec<Figure1Row>> = par::map_range(exec, n, |i0| {
        let (p0, mu0) = levels[i0];
        levels
            .iter()
            .map(|&(p1, mu1)| {
                let (lower, _) = purity_time(mu0, mu1, gamma).expect("radii below the cap");
                let upper_neglect_pi_over_omega = e_over_gamma + lower;
                Figure1Row {
                    p0,
                    p1,
                    mu0,
                    mu1,
                    lower,
                    upper: pi_over_omega + upper_neglect_pi_over_omega,
                    upper_neglect_pi_over_omega,
                }
            })
            .collect()
    });
    Ok(Figure1Grid {
        n,
        p_max,
        rows: rows.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn purity_transfer_examples() {
        let t = purity_transfer_time(0.0, 0.5, 1.0).unwrap();
        assert!((t.time - LN_2).abs() < 1e-15);
        assert_eq!(t.sigma, 1.0);
        assert_eq!(purity_transfer_time(0.3, 0.3, 2.0).unwrap().time, 0.0);
        let t = purity_transfer_time(0.8, 0.2, 1.0).unwrap();
        assert_eq!(t.sigma, -1.0);
        assert!((t.time - 1.5f64.ln()).abs() < 1e-15);
        assert!((t.radius_at(t.time) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pure_target() {
        assert_eq!(
            purity_transfer_time(0.4, 1.0, 1.0),
            Err(Error::NoFiniteTime { mu0: 0.4, mu1: 1.0 })
        );
        assert_eq!(purity_transfer_time(1.0, 1.0, 1.0).unwrap().time, 0.0);
        let down = purity_transfer_time(1.0, 0.0, 1.0).unwrap();
        assert!((down.time - LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_point_example() {
        let p = PhysParams::new(20.0, 1.0, 1.0).unwrap();
        let b = two_point_bounds(
            &BlochState::default(),
            &BlochState::from_array([0.0, 0.5, 0.0]),
            &p,
        )
        .unwrap();
        assert!((b.lower - LN_2).abs() < 1e-12);
        assert!((b.upper.unwrap() - 3.568508641698480).abs() < 1e-12);
        let b = bounds_from_radii(0.2, 0.95, &p).unwrap();
        assert!(!b.feasible_upper && b.upper.is_none());
        assert!(b.lower > 0.0);
    }

    #[test]
    fn equal_states_have_zero_lower_bound() {
        let p = PhysParams::new(20.0, 1.0, 1.0).unwrap();
        let r = BlochState::from_array([0.1, -0.2, 0.3]);
        let b = two_point_bounds(&r, &r, &p).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!((b.gap().unwrap() - upper_margin(&p)).abs() < 1e-15);
    }

    #[test]
    fn reachability() {
        assert!(reachable(0.2, 0.99));
        assert!(!reachable(0.2, 1.0));
        assert!(reachable(1.0, 1.0));
    }

    #[test]
    fn figure1_small_grid() {
        let g = figure1_grid(1.0, 20.0, 5, Execution::Sequential).unwrap();
        assert_eq!(g.rows.len(), 25);
        assert_eq!(g.at(0, 0).p0, 0.5);
        assert!((g.at(4, 4).mu1 - (1.0 - PI / 40.0)).abs() < 1e-15);
        for i in 0..5 {
            let d = g.at(i, i);
            assert_eq!(d.lower, 0.0);
            assert!((d.upper - d.lower - (PI / 20.0 + E)).abs() < 1e-12);
        }
        assert_eq!(g, figure1_grid(1.0, 20.0, 5, Execution::Parallel).unwrap());
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 26);
        assert!(figure1_grid(1.0, 20.0, 1, Execution::Sequential).is_err());
    }
}
