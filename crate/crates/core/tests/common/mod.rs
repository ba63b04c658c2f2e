#![allow(dead_code)]

use qtmin_core::{BlochState, PhasePoint, PhysParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn params() -> PhysParams {
    PhysParams::new(20.0, 1.0, 1.0).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point of the ball of radius `rmax`.
pub fn ball(rng: &mut ChaCha8Rng, rmax: f64) -> BlochState {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n <= 1.0 {
            return BlochState::from_array(v.map(|c| c * rmax));
        }
    }
}

/// Uniform point of the upper half-disk of radius `rmax`.
pub fn half_disk(rng: &mut ChaCha8Rng, rmax: f64) -> PhasePoint {
    loop {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let r: f64 = rng.gen_range(0.0..1.0);
        if x.hypot(r) <= 1.0 {
            return PhasePoint::new(x * rmax, r * rmax);
        }
    }
}

/// Central finite difference of sampled values at interior index `i`.
pub fn central_diff(t: &[f64], v: &[f64], i: usize) -> f64 {
    (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1])
}

use qtmin_core::dynamics::{
    integrate_aux, integrate_bloch, reconstruct_u, Coordinates, IntegrateOptions, Output, Trajectory,
};
use qtmin_core::ode::Tolerance;
use qtmin_core::{bloch::cyl_to_bloch, ControlSchedule, CylState, SmoothPiece};

/// Worst violations of the radius identities along a trajectory.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityCheck {
    /// Relative error of the fourth-order finite-difference `d|r|²/dt`
    /// against `γ(1 − |r|² − (1 − R sin θ)²)`.
    pub purity_rate: f64,
    /// Excess of `ż` over `[−γ(z + 1), γ(1 − z)]`.
    pub z_bound: f64,
    /// Shortfall of `1 − |r|²` below `(1 − |r₀|²) e^{−γt}`.
    pub ball: f64,
    pub checked: usize,
}

impl IdentityCheck {
    pub fn merge(self, o: IdentityCheck) -> IdentityCheck {
        IdentityCheck {
            purity_rate: self.purity_rate.max(o.purity_rate),
            z_bound: self.z_bound.max(o.z_bound),
            ball: self.ball.max(o.ball),
            checked: self.checked + o.checked,
        }
    }
}

/// `(|r|², R sin θ)` of a sample in either coordinate system.
fn radius_terms(coords: Coordinates, s: &[f64; 3]) -> (f64, f64) {
    match coords {
        Coordinates::Bloch => (s[0] * s[0] + s[1] * s[1] + s[2] * s[2], s[2]),
        Coordinates::Cylindrical => (s[0] * s[0] + s[1] * s[1], s[1] * s[2].sin()),
    }
}

pub fn identity_check(traj: &Trajectory, params: &PhysParams) -> IdentityCheck {
    let g = params.gamma;
    let rate = |s: &[f64; 3]| {
        let (n2, rs) = radius_terms(traj.coords, s);
        g * (1.0 - n2 - (1.0 - rs) * (1.0 - rs))
    };
    let mut out = IdentityCheck::default();
    let (n0, _) = radius_terms(traj.coords, &traj.states[0]);
    let t0 = traj.times[0];
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let (n2, _) = radius_terms(traj.coords, s);
        let z = n2.sqrt();
        if z > 1e-9 {
            let zdot = rate(s) / (2.0 * z);
            out.z_bound = out.z_bound.max(-g * (z + 1.0) - zdot).max(zdot - g * (1.0 - z));
        }
        let floor = (1.0 - n0) * (-g * (t - t0)).exp();
        out.ball = out.ball.max(floor - (1.0 - n2));
    }
    for run in traj.continuous_runs() {
        let t = &traj.times[run.clone()];
        let s = &traj.states[run];
        if t.len() < 5 {
            continue;
        }
        let h = t[1] - t[0];
        if t.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
            continue;
        }
        let n2: Vec<f64> = s.iter().map(|s| radius_terms(traj.coords, s).0).collect();
        for i in 2..t.len() - 2 {
            let fd = (8.0 * (n2[i + 1] - n2[i - 1]) - (n2[i + 2] - n2[i - 2])) / (12.0 * h);
            let exact = rate(&s[i]);
            out.purity_rate = out.purity_rate.max((fd - exact).abs() / exact.abs().max(1.0));
            out.checked += 1;
        }
    }
    out
}

pub fn fine_tol() -> Tolerance {
    Tolerance {
        rtol: 1e-12,
        atol: 1e-14,
    }
}

/// A smooth θ schedule `θ₀ + a sin(bt) + ct` on `[0, T]` from a start with
/// `R > 0`, redrawn until R stays above 0.05.
pub fn smooth_theta_case(rng: &mut ChaCha8Rng, params: &PhysParams) -> (CylState, ControlSchedule) {
    loop {
        let p = half_disk(rng, 0.8);
        if p.r_yz < 0.1 {
            continue;
        }
        let th0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(1.0..20.0), rng.gen_range(-5.0..5.0));
        let horizon = rng.gen_range(0.05..0.3);
        let n = 400;
        let t: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        let v: Vec<f64> = t.iter().map(|&t| th0 + a * (b * t).sin() + c * t).collect();
        let sched = ControlSchedule::new(qtmin_core::Signal::Theta, horizon)
            .with_piece(SmoothPiece::sampled(t, v).unwrap());
        let start = CylState::new(p.r_x, p.r_yz, th0);
        let opts = IntegrateOptions::uniform(horizon / 200.0);
        let Ok(traj) = integrate_aux(&sched, &start, params, &opts) else { continue };
        if traj.states.iter().all(|s| s[1] > 0.05) {
            return (start, sched);
        }
    }
}

/// Max `(r_x, R)` deviation between the planar flow under θ and the Bloch
/// flow under the reconstructed u, sampled on a common grid.
pub fn reconstruction_deviation(
    start: &CylState,
    theta: &ControlSchedule,
    params: &PhysParams,
) -> qtmin_core::Result<f64> {
    let dense = IntegrateOptions::per_segment(4000).with_tol(fine_tol());
    let aux = integrate_aux(theta, start, params, &dense)?;
    let th1 = aux.final_state()[2];
    let u = reconstruct_u(&aux, start.theta, th1, params)?;
    let grid = IntegrateOptions {
        output: Output::Uniform { dt: theta.horizon / 100.0 },
        ..IntegrateOptions::default().with_tol(fine_tol())
    };
    let a = integrate_aux(theta, start, params, &grid)?;
    let b = integrate_bloch(&u, &cyl_to_bloch(start), params, &grid)?;
    let pb = b.phase_points();
    let mut worst: f64 = 0.0;
    let mut matched = 0;
    for (i, t) in a.times.iter().enumerate() {
        if let Some(j) = b.times.iter().position(|s| (s - t).abs() <= 1e-12) {
            worst = worst.max(a.phase_of(&a.states[i]).distance(&pb[j]));
            matched += 1;
        }
    }
    assert!(matched >= 2, "no common sample times");
    Ok(worst.max(a.final_phase().distance(&b.final_phase())))
}
