//! Explicit three-phase control that realizes the upper time bound.
//!
//! 1. With θ = 0 or π the point `(r_x, R)` spirals about the origin at
//!    angular rate ω while its radius decays as `e^{−γt/2}`; this brings it to
//!    the axis `r_x = 0` in `τ₀ = |arctan(r_x⁰/R⁰)|/ω`, at radius `R̃⁰`.
//! 2. With θ = ±π/2 the point moves along `r_x = 0` from `R̃⁰` to `R̃¹` in the
//!    purity-optimal time `τ_½`.
//! 3. The mirror image of phase 1 leaves the axis and lands on the target
//!    after `τ₁ = |arctan(r_x¹/R¹)|/ω`.
//!
//! In terms of `v = θ̇/ω` the control is a sum of at most four impulses. The
//! drive u follows from the trajectory by [`reconstruct_u`].

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::bloch::{bloch_to_cyl, sign_tie_plus, wrap_angle, BlochState, CylState, PhysParams};
use crate::bounds::{two_point_bounds, TimeBounds};
use crate::dynamics::{integrate_aux, integrate_bloch, reconstruct_u, IntegrateOptions};
use crate::error::{Error, Result};
use crate::ode::Tolerance;
use crate::par::{self, Execution};
use crate::schedule::{ControlSchedule, Impulse, Signal};

/// A θ jump of the v control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanImpulse {
    pub t: f64,
    /// Jump as given by the phase angles.
    pub raw: f64,
    /// `raw` reduced to `(−π, π]`; this is what the schedules carry.
    pub reduced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPlan {
    pub r0: BlochState,
    pub r1: BlochState,
    pub theta0: f64,
    pub theta1: f64,
    pub tau0: f64,
    pub tau_half: f64,
    pub tau1: f64,
    /// `τ₀ + τ_½ + τ₁`.
    pub total_time: f64,
    /// θ on the three phases.
    pub theta_pieces: [f64; 3],
    pub tilde_r0: f64,
    pub tilde_r1: f64,
    pub tilde_sigma: f64,
    pub v_impulses: Vec<PlanImpulse>,
}

/// A plan together with the control in its three representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub plan: ProtocolPlan,
    pub theta: ControlSchedule,
    pub v: ControlSchedule,
    /// Absent when the drive is singular at an endpoint on the axis `R = 0`.
    pub u: Option<ControlSchedule>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u_unavailable: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// Samples of the drive per constant-θ phase.
    pub samples_per_phase: usize,
    pub tol: Tolerance,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            samples_per_phase: 2000,
            tol: Tolerance {
                rtol: 1e-12,
                atol: 1e-14,
            },
        }
    }
}

/// `arctan(r_x/R)` extended to `R = 0` by `sgn(r_x)·π/2` (0 at the origin).
fn axis_angle(r_x: f64, r_yz: f64) -> f64 {
    if r_yz > 0.0 {
        (r_x / r_yz).atan()
    } else if r_x == 0.0 {
        0.0
    } else {
        r_x.signum() * FRAC_PI_2
    }
}

/// `sgn` with `sgn(0) = 0`.
fn sgn(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// Build the plan from `r0` to `r1`. Missing endpoint angles default to
/// those of [`bloch_to_cyl`].
pub fn plan(
    r0: &BlochState,
    r1: &BlochState,
    theta0: Option<f64>,
    theta1: Option<f64>,
    params: &PhysParams,
) -> Result<ProtocolPlan> {
    params.validate()?;
    r0.validate()?;
    r1.validate()?;
    let c0 = bloch_to_cyl(r0);
    let c1 = bloch_to_cyl(r1);
    let mu0 = r0.norm().min(1.0);
    let mu1 = r1.norm().min(1.0);
    if mu1 >= 1.0 {
        return Err(Error::NoFiniteTime { mu0, mu1 });
    }
    let cap = params.feasibility_cap();
    if mu1 > cap {
        return Err(Error::InfeasibleTarget { mu1, cap });
    }
    let theta0 = theta0.unwrap_or(c0.theta);
    let theta1 = theta1.unwrap_or(c1.theta);
    let omega = params.omega;
    let gamma = params.gamma;

    let a0 = axis_angle(c0.r_x, c0.r_yz);
    let a1 = axis_angle(c1.r_x, c1.r_yz);
    let tau0 = a0.abs() / omega;
    let tau1 = a1.abs() / omega;
    let tilde_r0 = mu0 * (-0.5 * gamma * tau0).exp();
    let tilde_r1 = mu1 * (0.5 * gamma * tau1).exp();
    let tilde_sigma = sign_tie_plus(tilde_r1 - tilde_r0);
    let tau_half = if tilde_r0 == tilde_r1 {
        0.0
    } else {
        (((1.0 - tilde_sigma * tilde_r0) / (1.0 - tilde_sigma * tilde_r1)).ln() / gamma).max(0.0)
    };
    let total_time = tau0 + tau_half + tau1;

    let theta_a = FRAC_PI_2 * (1.0 - sgn(a0));
    let theta_b = FRAC_PI_2 * tilde_sigma;
    let theta_c = FRAC_PI_2 * (1.0 + sgn(a1));

    let raw = [
        (0.0, theta_a - theta0),
        (tau0, theta_b - theta_a),
        (tau0 + tau_half, theta_c - theta_b),
        (total_time, theta1 - theta_c),
    ];
    // Coincident jumps (empty phases) merge into one.
    let slack = 1e-12 * total_time.max(1.0);
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (t, d) in raw {
        match merged.last_mut() {
            Some(last) if t - last.0 <= slack => last.1 += d,
            _ => merged.push((t, d)),
        }
    }
    let v_impulses = merged
        .into_iter()
        .map(|(t, raw)| PlanImpulse {
            t: t.min(total_time),
            raw,
            reduced: wrap_angle(raw),
        })
        .filter(|i| i.reduced != 0.0)
        .collect();

    Ok(ProtocolPlan {
        r0: *r0,
        r1: *r1,
        theta0,
        theta1,
        tau0,
        tau_half,
        tau1,
        total_time,
        theta_pieces: [theta_a, theta_b, theta_c],
        tilde_r0,
        tilde_r1,
        tilde_sigma,
        v_impulses,
    })
}

impl ProtocolPlan {
    /// Piecewise-constant θ on `[0, T̃]`; empty phases are dropped.
    pub fn theta_schedule(&self) -> ControlSchedule {
        let [a, b, c] = self.theta_pieces;
        let mut s = ControlSchedule::piecewise_theta(&[(self.tau0, a), (self.tau_half, b), (self.tau1, c)]);
        s.horizon = self.total_time;
        if let Some(last) = s.smooth.last_mut() {
            last.t1 = self.total_time;
        }
        s
    }

    /// Impulsive v (zero between the jumps).
    pub fn v_schedule(&self) -> ControlSchedule {
        let mut s = ControlSchedule::new(Signal::V, self.total_time);
        s.impulses = self
            .v_impulses
            .iter()
            .map(|i| Impulse {
                t: i.t,
                dtheta: i.reduced,
            })
            .collect();
        s
    }

    /// Start of the auxiliary motion, `(r_x⁰, R⁰, θ⁰)`.
    pub fn start(&self) -> CylState {
        let c = bloch_to_cyl(&self.r0);
        CylState::new(c.r_x, c.r_yz, self.theta0)
    }

    pub fn target(&self) -> CylState {
        let c = bloch_to_cyl(&self.r1);
        CylState::new(c.r_x, c.r_yz, self.theta1)
    }
}

/// Plan plus θ, v and u schedules.
pub fn synthesize(
    r0: &BlochState,
    r1: &BlochState,
    theta0: Option<f64>,
    theta1: Option<f64>,
    params: &PhysParams,
    opts: &SynthesisOptions,
) -> Result<Protocol> {
    let plan = plan(r0, r1, theta0, theta1, params)?;
    let theta = plan.theta_schedule();
    let v = plan.v_schedule();
    let (u, u_unavailable) = match drive(&plan, &theta, params, opts) {
        Ok(u) => (Some(u), None),
        Err(e @ Error::SingularControl { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(Protocol {
        plan,
        theta,
        v,
        u,
        u_unavailable,
    })
}

fn drive(
    plan: &ProtocolPlan,
    theta: &ControlSchedule,
    params: &PhysParams,
    opts: &SynthesisOptions,
) -> Result<ControlSchedule> {
    let iopts = IntegrateOptions::per_segment(opts.samples_per_phase.max(4)).with_tol(opts.tol);
    let traj = integrate_aux(theta, &plan.start(), params, &iopts)?;
    let mut u = reconstruct_u(&traj, plan.theta0, plan.theta1, params)?;
    for imp in &mut u.impulses {
        imp.dtheta = wrap_angle(imp.dtheta);
    }
    u.impulses.retain(|i| i.dtheta != 0.0);
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Largest accepted endpoint error.
    pub tol: f64,
    pub integration: Tolerance,
    pub synthesis: SynthesisOptions,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            integration: Tolerance {
                rtol: 1e-11,
                atol: 1e-13,
            },
            synthesis: SynthesisOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `|(r_x, R)(T̃) − (r_x¹, R¹)|` under the θ schedule.
    pub aux_endpoint_error: f64,
    /// `|r(T̃) − r¹|` under the u schedule in the Bloch equations.
    pub bloch_endpoint_error: Option<f64>,
    pub endpoint_error: f64,
    pub elapsed: f64,
    pub total_time: f64,
    pub bounds: TimeBounds,
    /// `lower − 1e−9 ≤ T̃ ≤ upper + 1e−9`.
    pub within_bounds: bool,
    /// Largest `|r_x|` during the middle phase.
    pub middle_rx_max: f64,
    pub v_impulse_count: usize,
    pub u_impulse_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Simulate the θ schedule in the planar system and the u schedule in the
/// Bloch equations and compare both endpoints with the target.
pub fn validate(protocol: &Protocol, params: &PhysParams, opts: &ValidationOptions) -> Result<ValidationReport> {
    let plan = &protocol.plan;
    let bounds = two_point_bounds(&plan.r0, &plan.r1, params)?;
    let iopts = IntegrateOptions::default().with_tol(opts.integration);
    let aux = integrate_aux(&protocol.theta, &plan.start(), params, &iopts)?;
    let target = plan.target();
    let aux_endpoint_error = aux.final_phase().distance(&target.phase());

    let t_mid0 = plan.tau0;
    let t_mid1 = plan.tau0 + plan.tau_half;
    let middle_rx_max = aux
        .times
        .iter()
        .zip(&aux.states)
        .filter(|(t, _)| plan.tau_half > 0.0 && **t >= t_mid0 && **t <= t_mid1)
        .map(|(_, s)| s[0].abs())
        .fold(0.0, f64::max);

    let (bloch_endpoint_error, elapsed_bloch) = match &protocol.u {
        Some(u) => {
            let traj = integrate_bloch(u, &plan.r0, params, &iopts)?;
            let end = BlochState::from_array(traj.final_state());
            (Some(end.distance(&plan.r1)), Some(traj.final_time()))
        }
        None => (None, None),
    };
    let endpoint_error = bloch_endpoint_error.map_or(aux_endpoint_error, |e| e.max(aux_endpoint_error));
    let elapsed = aux.final_time();
    let total_time = plan.total_time;
    if elapsed != total_time || elapsed_bloch.is_some_and(|t| t != total_time) {
        return Err(Error::ValidationFailed {
            endpoint_error,
            tol: opts.tol,
            diagnostics: format!("simulated horizon {elapsed} differs from T̃ = {total_time}"),
        });
    }
    let within_bounds = total_time >= bounds.lower - 1e-9
        && bounds.upper.map_or(true, |u| total_time <= u + 1e-9);
    let report = ValidationReport {
        aux_endpoint_error,
        bloch_endpoint_error,
        endpoint_error,
        elapsed,
        total_time,
        bounds,
        within_bounds,
        middle_rx_max,
        v_impulse_count: protocol.v.impulse_count(),
        u_impulse_count: protocol.u.as_ref().map(|u| u.impulse_count()),
        note: protocol.u_unavailable.clone(),
    };
    if !(endpoint_error <= opts.tol) {
        return Err(Error::ValidationFailed {
            endpoint_error,
            tol: opts.tol,
            diagnostics: serde_json::to_string(&report).unwrap_or_default(),
        });
    }
    Ok(report)
}

/// Synthesize and validate every pair.
pub fn validate_batch(
    pairs: &[(BlochState, BlochState)],
    params: &PhysParams,
    opts: &ValidationOptions,
    exec: Execution,
) -> Vec<Result<ValidationReport>> {
    par::map(exec, pairs, |(r0, r1)| {
        let p = synthesize(r0, r1, None, None, params, &opts.synthesis)?;
        validate(&p, params, opts)
    })
}
