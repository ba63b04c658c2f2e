//! Maximum-principle extremals of the planar system and a shooting solver
//! for its two-point minimum-time problem.
//!
//! With covector `(p, q)` the Pontryagin function is
//! `H = p ṙ_x + q Ṙ`. As a function of θ it reads
//!
//! ```text
//! H/ω = a cos θ + b sin θ + c sin²θ + (θ-independent terms)
//! a = q r_x − p R,   b = (γ/ω) q,   c = −(γ/2ω) q R
//! ```
//!
//! which has a unique maximizer `θ_M` whenever `R² + q² ≠ 0`. Along an
//! extremal `ṗ = −∂H/∂r_x`, `q̇ = −∂H/∂R` evaluated at `θ_M`.

use std::f64::consts::{PI, TAU};
use std::io::{self, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::bloch::{CylState, PhasePoint, PhysParams};
use crate::bounds::bounds_from_radii;
use crate::dynamics::{rhs_aux, Coordinates, Trajectory};
use crate::error::{Error, Result};
use crate::ode::{rk4_step, Dopri5, Tolerance};
use crate::par::{self, Execution};

/// Phase point with its covector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtremalState {
    pub r_x: f64,
    pub r_yz: f64,
    pub p: f64,
    pub q: f64,
}

impl ExtremalState {
    pub const fn new(r_x: f64, r_yz: f64, p: f64, q: f64) -> Self {
        Self { r_x, r_yz, p, q }
    }

    pub const fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.r_x, self.r_yz, self.p, self.q]
    }

    pub fn phase(&self) -> PhasePoint {
        PhasePoint::new(self.r_x, self.r_yz)
    }
}

/// `∂/∂θ` of the velocity `(ṙ_x, Ṙ)/ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentPair {
    pub xi: f64,
    pub eta: f64,
}

/// `ξ = R sin θ`, `η = (γ/ω) cos θ (1 − R sin θ) − r_x sin θ`.
pub fn tangent(s: &CylState, params: &PhysParams) -> TangentPair {
    let (sin, cos) = s.theta.sin_cos();
    TangentPair {
        xi: s.r_yz * sin,
        eta: params.ratio() * cos * (1.0 - s.r_yz * sin) - s.r_x * sin,
    }
}

/// `H = p ṙ_x + q Ṙ` at control angle θ.
pub fn hamiltonian(s: &ExtremalState, theta: f64, params: &PhysParams) -> f64 {
    let [vx, vr] = rhs_aux(s.r_x, s.r_yz, theta, params);
    s.p * vx + s.q * vr
}

/// `∂H/∂θ = ω (p ξ + q η)`.
pub fn hamiltonian_dtheta(s: &ExtremalState, theta: f64, params: &PhysParams) -> f64 {
    let t = tangent(&CylState::new(s.r_x, s.r_yz, theta), params);
    params.omega * (s.p * t.xi + s.q * t.eta)
}

/// Coefficients `(a, b, c)` of the θ-dependent part of `H/ω`.
fn coefficients(s: &ExtremalState, params: &PhysParams) -> (f64, f64, f64) {
    let ratio = params.ratio();
    (
        s.q * s.r_x - s.p * s.r_yz,
        ratio * s.q,
        -0.5 * ratio * s.q * s.r_yz,
    )
}

const GRID: usize = 256;

fn table() -> &'static [(f64, f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..GRID)
            .map(|k| {
                let th = TAU * k as f64 / GRID as f64;
                let (s, c) = th.sin_cos();
                (c, s, s * s)
            })
            .collect()
    })
}

/// Global maximizer of `H` over θ, in `[0, 2π)`.
pub fn theta_max(s: &ExtremalState, params: &PhysParams) -> Result<f64> {
    if s.r_yz == 0.0 && s.q == 0.0 {
        return Err(Error::DegenerateCovector);
    }
    if !(s.r_x.is_finite() && s.r_yz.is_finite() && s.p.is_finite() && s.q.is_finite()) {
        return Err(Error::InvalidState(format!("non-finite extremal state {s:?}")));
    }
    let (a, b, c) = coefficients(s, params);
    if c == 0.0 {
        // A single sinusoid a cos θ + b sin θ.
        if a == 0.0 && b == 0.0 {
            return Err(Error::DegenerateCovector);
        }
        return Ok(b.atan2(a).rem_euclid(TAU));
    }
    // With f = A cos(θ − θ₀) + c sin²θ and A > 4|c| the maximum lies within
    // asin(|c|/A) of θ₀ = atan2(b, a), where f' changes sign exactly once.
    let amp = a.hypot(b);
    if amp > 4.0 * c.abs() {
        let center = b.atan2(a);
        let half = (c.abs() / amp).asin() + 1e-9;
        return Ok(bracketed_max(a, b, c, center - half, center + half, center).rem_euclid(TAU));
    }
    let (mut best, mut best_val) = (0, f64::NEG_INFINITY);
    for (k, &(cs, sn, s2)) in table().iter().enumerate() {
        let v = a * cs + b * sn + c * s2;
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    let h = TAU / GRID as f64;
    let th = refine_max(a, b, c, h * best as f64, h);
    Ok(th.rem_euclid(TAU))
}

/// Safeguarded Newton for the zero of `f'` in `[lo, hi]`, where
/// `f'(lo) > 0 > f'(hi)`.
fn bracketed_max(a: f64, b: f64, c: f64, mut lo: f64, mut hi: f64, start: f64) -> f64 {
    let d = |t: f64| -a * t.sin() + b * t.cos() + c * (2.0 * t).sin();
    let dd = |t: f64| -a * t.cos() - b * t.sin() + 2.0 * c * (2.0 * t).cos();
    let scale = a.abs() + b.abs() + c.abs();
    let mut t = start;
    for _ in 0..100 {
        let g = d(t);
        if g.abs() <= 1e-15 * scale {
            break;
        }
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let curv = dd(t);
        let mut next = t - g / curv;
        if !(curv < 0.0 && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - t).abs() <= 1e-16 * t.abs().max(1.0) || hi - lo <= 1e-15;
        t = next;
        if done {
            break;
        }
    }
    t
}

fn refine_max(a: f64, b: f64, c: f64, start: f64, h: f64) -> f64 {
    let f = |t: f64| a * t.cos() + b * t.sin() + c * t.sin().powi(2);
    let d = |t: f64| -a * t.sin() + b * t.cos() + c * (2.0 * t).sin();
    let dd = |t: f64| -a * t.cos() - b * t.sin() + 2.0 * c * (2.0 * t).cos();
    let scale = a.abs() + b.abs() + c.abs();
    let (mut lo, mut hi) = (start - h, start + h);
    let bracketed = d(lo) >= 0.0 && d(hi) <= 0.0;
    let mut t = start;
    for _ in 0..100 {
        let g = d(t);
        if g.abs() <= 1e-15 * scale {
            break;
        }
        if bracketed {
            if g > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
        }
        let curv = dd(t);
        let mut next = if curv < 0.0 { t - g / curv } else { f64::NAN };
        if bracketed && !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if !next.is_finite() {
            break;
        }
        let done = (next - t).abs() <= 1e-16 * t.abs().max(1.0);
        t = next;
        if done || (bracketed && hi - lo <= 1e-15) {
            break;
        }
    }
    if f(t) >= f(start) {
        t
    } else {
        start
    }
}

/// `ξ′η − ξη′` (derivatives in θ) in closed form and by finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    /// `(γ/ω) R (1 − R sin³θ)`.
    pub closed_form: f64,
    pub finite_difference: f64,
}

pub fn curvature(s: &CylState, params: &PhysParams) -> Curvature {
    let closed_form = params.ratio() * s.r_yz * (1.0 - s.r_yz * s.theta.sin().powi(3));
    let at = |dt: f64| tangent(&CylState::new(s.r_x, s.r_yz, s.theta + dt), params);
    let h = 1e-3;
    // Fourth-order central differences.
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    let dxi = (8.0 * (p1.xi - m1.xi) - (p2.xi - m2.xi)) / (12.0 * h);
    let deta = (8.0 * (p1.eta - m1.eta) - (p2.eta - m2.eta)) / (12.0 * h);
    let t0 = at(0.0);
    Curvature {
        closed_form,
        finite_difference: dxi * t0.eta - t0.xi * deta,
    }
}

/// `(ṙ_x, Ṙ, ṗ, q̇)` at `θ = θ_M`, together with `θ_M`.
///
/// `ṗ = (γ/2) p − ω q cos θ`, `q̇ = ω p cos θ + (γ/2) q (1 + sin²θ)`.
pub fn extremal_rhs(s: &ExtremalState, params: &PhysParams) -> Result<([f64; 4], f64)> {
    let th = theta_max(s, params)?;
    Ok((rhs_at(s, th, params), th))
}

fn rhs_at(s: &ExtremalState, th: f64, params: &PhysParams) -> [f64; 4] {
    let (sin, cos) = th.sin_cos();
    let [vx, vr] = rhs_aux(s.r_x, s.r_yz, th, params);
    let half_gamma = 0.5 * params.gamma;
    [
        vx,
        vr,
        half_gamma * s.p - params.omega * s.q * cos,
        params.omega * s.p * cos + half_gamma * s.q * (1.0 + sin * sin),
    ]
}

/// RHS for the integrators; a degenerate covector yields NaN, which the
/// integrators reject.
fn flow(params: &PhysParams) -> impl Fn(f64, &[f64; 4]) -> [f64; 4] + '_ {
    move |_t, y| {
        let s = ExtremalState::from_array(*y);
        match extremal_rhs(&s, params) {
            Ok((v, _)) => v,
            Err(_) => [f64::NAN; 4],
        }
    }
}

/// Sampled extremal.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ExtremalState>,
    pub theta_m: Vec<f64>,
}

impl ExtremalTrajectory {
    pub fn final_state(&self) -> ExtremalState {
        *self.states.last().expect("nonempty")
    }

    pub fn hamiltonians(&self, params: &PhysParams) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.theta_m)
            .map(|(s, th)| hamiltonian(s, *th, params))
            .collect()
    }

    /// `min R² + q²` over the samples.
    pub fn min_r2_q2(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.r_yz * s.r_yz + s.q * s.q)
            .fold(f64::INFINITY, f64::min)
    }

    /// `(r_x, R, θ_M)` with θ_M unwrapped to be continuous.
    pub fn to_trajectory(&self) -> Trajectory {
        let mut prev: Option<f64> = None;
        let states = self
            .states
            .iter()
            .zip(&self.theta_m)
            .map(|(s, &th)| {
                let th = match prev {
                    Some(p) => p + crate::bloch::wrap_angle(th - p),
                    None => th,
                };
                prev = Some(th);
                [s.r_x, s.r_yz, th]
            })
            .collect();
        Trajectory::from_samples(Coordinates::Cylindrical, self.times.clone(), states)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,r_x,R,p,q,theta_M")?;
        for ((t, s), th) in self.times.iter().zip(&self.states).zip(&self.theta_m) {
            writeln!(w, "{},{},{},{},{},{}", t, s.r_x, s.r_yz, s.p, s.q, th)?;
        }
        Ok(())
    }
}

/// Integrate the extremal flow from `s0` over `[0, t]`, recording every
/// accepted step (or only the endpoints when `record` is false).
pub fn integrate_extremal(
    s0: &ExtremalState,
    t: f64,
    params: &PhysParams,
    tol: Tolerance,
    record: bool,
) -> Result<ExtremalTrajectory> {
    let th0 = theta_max(s0, params)?;
    let mut out = ExtremalTrajectory {
        times: vec![0.0],
        states: vec![*s0],
        theta_m: vec![th0],
    };
    let sys = flow(params);
    let solver = Dopri5::new(tol);
    let mut samples = Vec::new();
    let (y, _) = solver.integrate(&sys, 0.0, s0.to_array(), t, None, |ts, y| {
        if record {
            samples.push((ts, *y));
        }
    })?;
    if !record || (samples.last().map(|s| s.0) != Some(t) && t > 0.0) {
        samples.push((t, y));
    }
    for (ts, y) in samples {
        let s = ExtremalState::from_array(y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateCovector);
        }
        out.times.push(ts);
        out.theta_m.push(theta_max(&s, params)?);
        out.states.push(s);
    }
    Ok(out)
}

/// Sign changes of R strictly inside the time span.
pub fn count_sign_changes(values: &[f64]) -> usize {
    let mut count = 0;
    let mut last = 0.0f64;
    for &v in values {
        if v != 0.0 {
            if last != 0.0 && v.signum() != last.signum() {
                count += 1;
            }
            last = v;
        }
    }
    count
}

/// Number of sign changes of `R(t)` on `(0, T)`; Bloch trajectories have `R ≥ 0`.
#[allow(non_snake_case)]
pub fn count_R_zeros(traj: &Trajectory) -> usize {
    match traj.coords {
        Coordinates::Bloch => 0,
        Coordinates::Cylindrical => {
            let r: Vec<f64> = traj.states.iter().map(|s| s[1]).collect();
            count_sign_changes(&r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootConfig {
    /// Initial covector directions in the coarse scan (0 disables the scan).
    pub n_angles: usize,
    /// Fixed RK4 steps per unit of `ωt` in the coarse scan.
    pub steps_per_radian: f64,
    /// Scan horizon; defaults to 1.05 × the upper bound (or a fallback).
    pub t_max: Option<f64>,
    /// Largest accepted defect of the shooting equations.
    pub tol: f64,
    /// Coarse-scan minima farther than this from the target are discarded.
    pub candidate_radius: f64,
    pub max_candidates: usize,
    /// Length of one shooting segment, in units of `1/ω`.
    pub segment_radians: f64,
    pub newton_iters: usize,
    /// Seed the solver with the explicit three-phase protocol.
    pub protocol_seed: bool,
    pub rtol: f64,
    pub atol: f64,
    pub execution: Execution,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self {
            n_angles: 720,
            steps_per_radian: 4.0,
            t_max: None,
            tol: 1e-9,
            candidate_radius: 0.1,
            max_candidates: 16,
            segment_radians: 3.0,
            newton_iters: 60,
            protocol_seed: true,
            rtol: 1e-11,
            atol: 1e-13,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootResult {
    pub t_star: f64,
    pub phi0: f64,
    pub residual: f64,
    pub n_evals: usize,
    pub trajectory: ExtremalTrajectory,
}

/// The JSON report of a shooting run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootReport {
    #[serde(rename = "T_star")]
    pub t_star: f64,
    pub phi0: f64,
    pub residual: f64,
    pub n_evals: usize,
}

impl ShootResult {
    pub fn report(&self) -> ShootReport {
        ShootReport {
            t_star: self.t_star,
            phi0: self.phi0,
            residual: self.residual,
            n_evals: self.n_evals,
        }
    }
}

fn covector_start(s0: &PhasePoint, phi: f64) -> ExtremalState {
    let (q, p) = phi.sin_cos();
    ExtremalState::new(s0.r_x, s0.r_yz, p, q)
}

/// Initial guess for the shooting equations: a horizon and `(r_x, R, ψ)` at
/// the node times `T·i/M`, `i < M`, where `(cos ψ, sin ψ)` is the covector
/// direction.
#[derive(Debug, Clone)]
struct Seed {
    horizon: f64,
    nodes: Vec<[f64; 3]>,
}

fn n_segments(horizon: f64, params: &PhysParams, cfg: &ShootConfig) -> usize {
    ((params.omega * horizon / cfg.segment_radians).ceil() as usize).max(1)
}

/// Covector direction making θ a maximizer at `(r_x, R)`: normal to the
/// tangent `(ξ, η)`, oriented so that `∂²H/∂θ² < 0`.
fn normal_covector(s: &CylState, params: &PhysParams) -> Option<f64> {
    let t = tangent(s, params);
    let n = t.xi.hypot(t.eta);
    if n < 1e-9 {
        return None;
    }
    let (p, q) = (t.eta / n, -t.xi / n);
    let (a, b, c) = coefficients(&ExtremalState::new(s.r_x, s.r_yz, p, q), params);
    let (sin, cos) = s.theta.sin_cos();
    let curv = -a * cos - b * sin + 2.0 * c * (2.0 * s.theta).cos();
    Some(if curv <= 0.0 { q.atan2(p) } else { (-q).atan2(-p) })
}

/// Closed-form state of the three-phase protocol at time t.
fn protocol_state(plan: &crate::protocol::ProtocolPlan, start: &PhasePoint, t: f64, params: &PhysParams) -> CylState {
    let [th_a, th_b, th_c] = plan.theta_pieces;
    let g = params.gamma;
    let spiral = |x: f64, r: f64, dir: f64, s: f64| {
        // d(x + iR)/dt = (−γ/2 + i·dir·ω)(x + iR)
        let decay = (-0.5 * g * s).exp();
        let (sn, cs) = (dir * params.omega * s).sin_cos();
        (decay * (x * cs - r * sn), decay * (x * sn + r * cs))
    };
    let dir_of = |th: f64| if th.cos() >= 0.0 { 1.0 } else { -1.0 };
    if t < plan.tau0 {
        let (x, r) = spiral(start.r_x, start.r_yz, dir_of(th_a), t);
        return CylState::new(x, r, th_a);
    }
    let t_mid = plan.tau0 + plan.tau_half;
    if t < t_mid || plan.tau1 == 0.0 {
        let s = (t - plan.tau0).min(plan.tau_half);
        let e = (-g * s).exp();
        let r = plan.tilde_r0 * e + plan.tilde_sigma * (1.0 - e);
        return CylState::new(0.0, r, th_b);
    }
    let (x, r) = spiral(0.0, plan.tilde_r1, dir_of(th_c), t - t_mid);
    CylState::new(x, r, th_c)
}

fn protocol_seed(start: &PhasePoint, target: &PhasePoint, params: &PhysParams, cfg: &ShootConfig) -> Option<Seed> {
    if start.r_yz < 0.0 || target.r_yz < 0.0 {
        return None;
    }
    let r0 = crate::bloch::BlochState::from_array([start.r_x, start.r_yz, 0.0]);
    let r1 = crate::bloch::BlochState::from_array([target.r_x, target.r_yz, 0.0]);
    let plan = crate::protocol::plan(&r0, &r1, None, None, params).ok()?;
    let horizon = plan.total_time;
    if horizon <= 0.0 {
        return None;
    }
    let m = n_segments(horizon, params, cfg);
    let nodes = (0..m)
        .map(|i| {
            let t = horizon * i as f64 / m as f64;
            let mut eps = 0.0;
            loop {
                let s = protocol_state(&plan, start, (t + eps).min(horizon), params);
                if let Some(psi) = normal_covector(&s, params) {
                    let s0 = protocol_state(&plan, start, t, params);
                    return Some([s0.r_x, s0.r_yz, psi]);
                }
                eps = if eps == 0.0 { 1e-6 * horizon } else { 10.0 * eps };
                if eps > 0.1 * horizon {
                    return None;
                }
            }
        })
        .collect::<Option<Vec<_>>>()?;
    Some(Seed { horizon, nodes })
}

/// Node guesses along a coarse RK4 extremal from direction `phi`.
fn scan_seed(start: &PhasePoint, phi: f64, horizon: f64, h: f64, params: &PhysParams, cfg: &ShootConfig) -> Seed {
    let m = n_segments(horizon, params, cfg);
    let sys = flow(params);
    let tau = horizon / m as f64;
    let k = ((tau / h).ceil() as usize).max(1);
    let dt = tau / k as f64;
    let mut y = covector_start(start, phi).to_array();
    let mut nodes = Vec::with_capacity(m);
    for i in 0..m {
        nodes.push([y[0], y[1], y[3].atan2(y[2])]);
        if i + 1 < m {
            for j in 0..k {
                y = rk4_step(&sys, j as f64 * dt, &y, dt);
            }
        }
    }
    nodes[0][2] = phi;
    Seed { horizon, nodes }
}

/// Multiple-shooting equations for a fixed number of segments.
///
/// Unknowns: `[φ₀, T, (r_x, R, ψ)₁, …, (r_x, R, ψ)_{M−1}]`. Each segment
/// carries a unit covector from its node over `T/M`; its end must match the
/// next node in position and covector direction (the flow is homogeneous in
/// the covector, so a direction match makes the segments glue after
/// rescaling), and the last end must hit the target.
struct Shooting<'a> {
    start: PhasePoint,
    target: PhasePoint,
    params: &'a PhysParams,
    m: usize,
    solver: Dopri5,
    exec: Execution,
}

impl Shooting<'_> {
    fn dim(&self) -> usize {
        3 * self.m - 1
    }

    fn node(&self, z: &[f64], i: usize) -> [f64; 3] {
        if i == 0 {
            [self.start.r_x, self.start.r_yz, z[0]]
        } else {
            let k = 2 + 3 * (i - 1);
            [z[k], z[k + 1], z[k + 2]]
        }
    }

    fn end(&self, node: [f64; 3], tau: f64) -> Option<[f64; 4]> {
        let (q, p) = node[2].sin_cos();
        let sys = flow(self.params);
        let (y, _) = self
            .solver
            .integrate(&sys, 0.0, [node[0], node[1], p, q], tau, None, |_, _| {})
            .ok()?;
        y.iter().all(|v| v.is_finite()).then_some(y)
    }

    fn defect(&self, e: &[f64; 4]) -> [f64; 3] {
        [e[0], e[1], e[3].atan2(e[2])]
    }

    /// Rows of segment i given its end point.
    fn rows(&self, z: &[f64], i: usize, e: &[f64; 4]) -> Vec<f64> {
        let g = self.defect(e);
        if i + 1 < self.m {
            let nx = self.node(z, i + 1);
            vec![g[0] - nx[0], g[1] - nx[1], crate::bloch::wrap_angle(g[2] - nx[2])]
        } else {
            vec![g[0] - self.target.r_x, g[1] - self.target.r_yz]
        }
    }

    fn residual(&self, z: &[f64]) -> Option<(Vec<f64>, usize)> {
        let tau = z[1] / self.m as f64;
        let ends = par::map_range(self.exec, self.m, |i| self.end(self.node(z, i), tau));
        let mut f = Vec::with_capacity(self.dim());
        for (i, e) in ends.iter().enumerate() {
            f.extend(self.rows(z, i, e.as_ref()?));
        }
        Some((f, self.m))
    }

    fn jacobian(&self, z: &[f64]) -> Option<(nalgebra::DMatrix<f64>, usize)> {
        let n = self.dim();
        let m = self.m;
        let tau = z[1] / m as f64;
        let delta = 1e-6;
        // Per segment: derivatives of (x, R, angle) at the end with respect
        // to the free entries of its start node, plus the end point itself.
        type Block = (Vec<[f64; 3]>, [f64; 4]);
        let blocks: Vec<Option<Block>> = par::map_range(self.exec, m, |i| {
            let node = self.node(z, i);
            let free: &[usize] = if i == 0 { &[2] } else { &[0, 1, 2] };
            let mut cols = Vec::with_capacity(free.len());
            for &k in free {
                let (mut a, mut b) = (node, node);
                a[k] += delta;
                b[k] -= delta;
                let (ga, gb) = (self.defect(&self.end(a, tau)?), self.defect(&self.end(b, tau)?));
                cols.push([
                    (ga[0] - gb[0]) / (2.0 * delta),
                    (ga[1] - gb[1]) / (2.0 * delta),
                    crate::bloch::wrap_angle(ga[2] - gb[2]) / (2.0 * delta),
                ]);
            }
            Some((cols, self.end(node, tau)?))
        });
        let mut j = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut evals = 0;
        for (i, blk) in blocks.into_iter().enumerate() {
            let (cols, e) = blk?;
            evals += 1 + 2 * cols.len();
            let row0 = 3 * i;
            let nrows = if i + 1 < m { 3 } else { 2 };
            let col_idx: Vec<usize> = if i == 0 {
                vec![0]
            } else {
                let k = 2 + 3 * (i - 1);
                vec![k, k + 1, k + 2]
            };
            for (c, col) in col_idx.iter().zip(&cols) {
                for r in 0..nrows {
                    j[(row0 + r, *c)] = col[r];
                }
            }
            // ∂/∂T through the segment length T/M.
            let (v, _) = extremal_rhs(&ExtremalState::from_array(e), self.params).ok()?;
            let dang = (e[2] * v[3] - e[3] * v[2]) / (e[2] * e[2] + e[3] * e[3]);
            let dt = [v[0], v[1], dang];
            for r in 0..nrows {
                j[(row0 + r, 1)] = dt[r] / m as f64;
            }
            if i + 1 < m {
                let k = 2 + 3 * i;
                for r in 0..3 {
                    j[(row0 + r, k + r)] = -1.0;
                }
            }
        }
        Some((j, evals))
    }

    /// Damped Newton from `z`. Returns the final iterate, its defect norm
    /// and the number of flow integrations.
    fn solve(&self, mut z: Vec<f64>, tol: f64, iters: usize) -> (Vec<f64>, f64, usize) {
        let norm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inf = |f: &[f64]| f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut evals = 0;
        let Some((mut f, e)) = self.residual(&z) else {
            return (z, f64::INFINITY, self.m);
        };
        evals += e;
        for _ in 0..iters {
            if inf(&f) <= tol {
                break;
            }
            let Some((j, e)) = self.jacobian(&z) else { break };
            evals += e;
            let rhs = nalgebra::DVector::from_iterator(f.len(), f.iter().map(|v| -v));
            let Some(step) = j.lu().solve(&rhs) else { break };
            let f0 = norm(&f);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..16 {
                let zn: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
                if zn[1] > 0.0 {
                    if let Some((fn_, e)) = self.residual(&zn) {
                        evals += e;
                        if norm(&fn_) < (1.0 - 1e-4 * lambda) * f0 {
                            z = zn;
                            f = fn_;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let r = inf(&f);
        (z, r, evals)
    }

    fn initial(&self, seed: &Seed) -> Vec<f64> {
        let mut z = vec![seed.nodes[0][2], seed.horizon];
        for node in &seed.nodes[1..] {
            z.extend_from_slice(node);
        }
        z
    }

    /// `(r_x, R, ψ)` of the solution `z` at each of `times`, continuing the
    /// last segment past `T` where needed.
    fn sample(&self, z: &[f64], times: &[f64]) -> Option<Vec<[f64; 3]>> {
        let tau = z[1] / self.m as f64;
        par::map(self.exec, times, |&t| {
            let i = ((t / tau).floor() as usize).min(self.m - 1);
            let e = self.end(self.node(z, i), t - tau * i as f64)?;
            Some(self.defect(&e))
        })
        .into_iter()
        .collect()
    }

    /// Glue the segments of a solution into one extremal.
    fn assemble(&self, z: &[f64], tol: Tolerance) -> Result<ExtremalTrajectory> {
        let tau = z[1] / self.m as f64;
        let mut out: Option<ExtremalTrajectory> = None;
        let mut scale = 1.0;
        for i in 0..self.m {
            let node = self.node(z, i);
            let (q, p) = node[2].sin_cos();
            let s = ExtremalState::new(node[0], node[1], scale * p, scale * q);
            let seg = integrate_extremal(&s, tau, self.params, tol, true)?;
            let t0 = tau * i as f64;
            let end = seg.final_state();
            match &mut out {
                None => {
                    out = Some(ExtremalTrajectory {
                        times: seg.times.iter().map(|t| t + t0).collect(),
                        ..seg
                    })
                }
                Some(o) => {
                    for k in 1..seg.times.len() {
                        o.times.push(seg.times[k] + t0);
                        o.states.push(seg.states[k]);
                        o.theta_m.push(seg.theta_m[k]);
                    }
                }
            }
            scale = end.p.hypot(end.q);
        }
        let mut o = out.expect("at least one segment");
        if let Some(t) = o.times.last_mut() {
            *t = z[1];
        }
        Ok(o)
    }
}

/// Minimum-time extremal from `start` to `target` in the `(r_x, R)` plane.
///
/// Extremals are exponentially sensitive to the initial covector (the
/// endpoint map grows roughly like `e^{ωt}`), so the two-point problem is
/// solved by multiple shooting on segments of length `segment_radians/ω`.
/// Initial guesses come from the explicit three-phase protocol (covector
/// normal to the admissible velocity curve at the protocol's control) and
/// from a coarse scan of `n_angles` covector directions with fixed RK4
/// steps, whose local minima of endpoint distance over `(φ, t)` are kept.
/// Among the converged solutions with `H ≥ 0` the earliest arrival wins.
pub fn shoot(
    start: &PhasePoint,
    target: &PhasePoint,
    params: &PhysParams,
    cfg: &ShootConfig,
) -> Result<ShootResult> {
    params.validate()?;
    for (name, pt) in [("start", start), ("target", target)] {
        CylState::new(pt.r_x, pt.r_yz, 0.0)
            .validate()
            .map_err(|_| Error::InvalidState(format!("{name} lies outside the unit disk")))?;
    }
    if target.norm() >= 1.0 && start.norm() < 1.0 {
        return Err(Error::NoFiniteTime {
            mu0: start.norm(),
            mu1: target.norm(),
        });
    }
    let tol = Tolerance {
        rtol: cfg.rtol,
        atol: cfg.atol,
    };
    let d0 = start.distance(target);
    if d0 <= cfg.tol {
        let phi = 0.25 * PI;
        let s = covector_start(start, phi);
        let trajectory = integrate_extremal(&s, 0.0, params, tol, false)?;
        return Ok(ShootResult {
            t_star: 0.0,
            phi0: phi,
            residual: d0,
            n_evals: 0,
            trajectory,
        });
    }

    let mut seeds = Vec::new();
    if cfg.protocol_seed {
        seeds.extend(protocol_seed(start, target, params, cfg));
    }
    let protocol_seeded = !seeds.is_empty();
    let mut n_evals = 0;
    if cfg.n_angles > 0 {
        let (cands, h, evals) = coarse_scan(start, target, params, cfg);
        n_evals += evals;
        seeds.extend(cands.iter().map(|c| scan_seed(start, c.phi, c.t, h, params, cfg)));
    }

    // A segment spans a few radians; runaway step counts mean θ_M is
    // jumping between competing maxima and the seed is hopeless.
    let solver = Dopri5 {
        max_steps: 20_000,
        ..Dopri5::new(tol)
    };
    let run = |seed: &Seed| {
        let sh = Shooting {
            start: *start,
            target: *target,
            params,
            m: seed.nodes.len(),
            solver,
            exec: cfg.execution,
        };
        let (z, r, e) = sh.solve(sh.initial(seed), cfg.tol, cfg.newton_iters);
        (z, r, e, sh.m)
    };
    // The protocol seed usually lands on the optimum; scan seeds are then
    // only worth polishing if they promise an earlier arrival.
    let mut outcomes = Vec::new();
    let mut rest = &seeds[..];
    if protocol_seeded {
        let first = run(&seeds[0]);
        rest = &seeds[1..];
        outcomes.push(first);
    }
    let protocol_time = if protocol_seeded { seeds[0].horizon } else { f64::INFINITY };
    let cutoff = outcomes
        .iter()
        .filter(|o| o.1 <= cfg.tol && o.0[1] <= protocol_time)
        .map(|o| o.0[1])
        .fold(f64::INFINITY, f64::min);
    let mut cutoff = cutoff;
    if !(cutoff.is_finite()) {
        if let Some((z, r, e, m)) = continuation(start, target, params, cfg, solver) {
            cutoff = z[1];
            outcomes.push((z, r, e, m));
        }
    }
    let rest: Vec<Seed> = rest.iter().filter(|s| s.horizon < cutoff).cloned().collect();
    outcomes.extend(par::map(cfg.execution, &rest, run));

    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut best_residual = f64::INFINITY;
    for (z, r, e, m) in outcomes {
        n_evals += e;
        best_residual = best_residual.min(r);
        if !(r <= cfg.tol) {
            continue;
        }
        let s0 = covector_start(start, z[0]);
        let h0 = theta_max(&s0, params).map(|th| hamiltonian(&s0, th, params));
        if !h0.is_ok_and(|h| h >= -1e-9) {
            continue;
        }
        if best.as_ref().map_or(true, |b| z[1] < b.0[1]) {
            best = Some((z, r, m));
        }
    }
    let Some((z, residual, m)) = best else {
        return Err(Error::NotFound {
            best_residual,
            n_evals,
        });
    };
    let sh = Shooting {
        start: *start,
        target: *target,
        params,
        m,
        solver,
        exec: cfg.execution,
    };
    let trajectory = sh.assemble(&z, tol)?;
    n_evals += m;
    Ok(ShootResult {
        t_star: z[1],
        phi0: z[0].rem_euclid(TAU),
        residual,
        n_evals,
        trajectory,
    })
}

/// Solve a sequence of problems whose targets move along the protocol path
/// from near the start to `target`, seeding each from the previous extremal.
/// Every intermediate target is reachable by construction.
fn continuation(
    start: &PhasePoint,
    target: &PhasePoint,
    params: &PhysParams,
    cfg: &ShootConfig,
    solver: Dopri5,
) -> Option<(Vec<f64>, f64, usize, usize)> {
    if start.r_yz < 0.0 || target.r_yz < 0.0 {
        return None;
    }
    let r0 = crate::bloch::BlochState::from_array([start.r_x, start.r_yz, 0.0]);
    let r1 = crate::bloch::BlochState::from_array([target.r_x, target.r_yz, 0.0]);
    let plan = crate::protocol::plan(&r0, &r1, None, None, params).ok()?;
    let total = plan.total_time;
    let point = |s: f64| {
        if s >= total {
            *target
        } else {
            let c = protocol_state(&plan, start, s, params);
            PhasePoint::new(c.r_x, c.r_yz)
        }
    };
    let problem = |goal: PhasePoint, m: usize| Shooting {
        start: *start,
        target: goal,
        params,
        m,
        solver,
        exec: cfg.execution,
    };
    let seg = cfg.segment_radians / params.omega;
    let mut evals = 0;

    // First leg: one segment, seeded by the protocol or a short scan.
    let mut s = total.min(0.5 * seg);
    let mut current = None;
    while current.is_none() && s > 1e-6 * total {
        let goal = point(s);
        let mut seeds: Vec<Seed> = protocol_seed(start, &goal, params, cfg).into_iter().collect();
        let short = ShootConfig {
            t_max: Some(2.0 * s),
            max_candidates: 4,
            ..*cfg
        };
        let (cands, h, e) = coarse_scan(start, &goal, params, &short);
        evals += e;
        seeds.extend(cands.iter().map(|c| scan_seed(start, c.phi, c.t, h, params, cfg)));
        for seed in &seeds {
            let sh = problem(goal, seed.nodes.len());
            let (z, r, e) = sh.solve(sh.initial(seed), cfg.tol, cfg.newton_iters);
            evals += e;
            let better = current.as_ref().map_or(true, |c: &(Vec<f64>, usize)| z[1] < c.0[1]);
            if r <= cfg.tol && z[1] <= s + 1e-9 && better {
                current = Some((z, sh.m));
            }
        }
        if current.is_none() {
            s *= 0.5;
        }
    }
    let (mut z, mut m) = current?;
    let mut ds = seg;
    let mut residual = 0.0;
    while s < total {
        let next = (s + ds).min(total);
        if ds < 1e-6 * total {
            return None;
        }
        let horizon = z[1] + (next - s);
        let m_new = n_segments(horizon, params, cfg);
        let times: Vec<f64> = (0..m_new).map(|i| horizon * i as f64 / m_new as f64).collect();
        let nodes = problem(point(s), m).sample(&z, &times)?;
        evals += m_new;
        let sh = problem(point(next), m_new);
        let (zn, r, e) = sh.solve(sh.initial(&Seed { horizon, nodes }), cfg.tol, cfg.newton_iters);
        evals += e;
        // The protocol itself reaches point(next) at time next, so a longer
        // solution has jumped to a non-minimizing branch.
        if r <= cfg.tol && zn[1] <= next + 1e-9 {
            z = zn;
            m = m_new;
            s = next;
            residual = r;
            ds *= 1.5;
        } else {
            ds *= 0.5;
        }
    }
    Some((z, residual, evals, m))
}

struct Candidate {
    phi: f64,
    t: f64,
    dist: f64,
}

/// Fixed-step scan over covector directions. Returns the candidates, the
/// step used and the number of integrations.
fn coarse_scan(
    start: &PhasePoint,
    target: &PhasePoint,
    params: &PhysParams,
    cfg: &ShootConfig,
) -> (Vec<Candidate>, f64, usize) {
    let t_max = cfg.t_max.unwrap_or_else(|| {
        match bounds_from_radii(start.norm(), target.norm(), params) {
            Ok(b) => 1.05 * b.upper.unwrap_or(b.lower + crate::bounds::upper_margin(params)),
            Err(_) => 10.0 / params.gamma,
        }
    });
    let n_steps = ((params.omega * t_max * cfg.steps_per_radian).ceil() as usize).max(16);
    let h = t_max / n_steps as f64;
    let n = cfg.n_angles.max(3);
    let phis: Vec<f64> = (0..n).map(|k| TAU * (k as f64 + 0.5) / n as f64).collect();
    let sys = flow(params);

    // Row k: distance to the target at t_j = j h, or None for directions
    // with H < 0 (not time-minimizing) or a degenerate start.
    let scan: Vec<Option<Vec<f64>>> = par::map(cfg.execution, &phis, |&phi| {
        let s = covector_start(start, phi);
        let th = theta_max(&s, params).ok()?;
        if hamiltonian(&s, th, params) < 0.0 {
            return None;
        }
        let mut y = s.to_array();
        let mut d = Vec::with_capacity(n_steps + 1);
        d.push(start.distance(target));
        for j in 0..n_steps {
            y = rk4_step(&sys, j as f64 * h, &y, h);
            if y.iter().any(|v| !v.is_finite()) {
                break;
            }
            d.push(PhasePoint::new(y[0], y[1]).distance(target));
        }
        Some(d)
    });

    let mut cands = Vec::new();
    for k in 0..n {
        let Some(row) = &scan[k] else { continue };
        let prev = scan[(k + n - 1) % n].as_ref();
        let next = scan[(k + 1) % n].as_ref();
        for j in 1..row.len() {
            let v = row[j];
            if v > cfg.candidate_radius {
                continue;
            }
            let is_min = [prev, Some(row), next].iter().all(|nb| {
                (j - 1..=j + 1).all(|jj| nb.and_then(|r| r.get(jj)).map_or(true, |&w| w >= v))
            });
            if is_min {
                cands.push(Candidate {
                    phi: phis[k],
                    t: j as f64 * h,
                    dist: v,
                });
            }
        }
    }
    cands.sort_by(|a, b| a.dist.total_cmp(&b.dist));
    cands.truncate(cfg.max_candidates);
    (cands, h, n)
}
