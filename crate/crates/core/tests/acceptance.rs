//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero on any FAIL.

mod common;

use std::f64::consts::{E, LN_2, PI, TAU};
use std::time::{Duration, Instant};

use common::*;
use qtmin_core::bounds::*;
use qtmin_core::dynamics::*;
use qtmin_core::extremal::*;
use qtmin_core::oracle::*;
use qtmin_core::protocol::*;
use qtmin_core::{BlochState, CylState, Execution, PhasePoint, PhysParams};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

/// Trajectories collected along the way for the identity checks.
#[derive(Default)]
struct Collected {
    trajectories: Vec<Trajectory>,
}

fn purity_motion(p: &PhysParams, seen: &mut Collected) -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng(101);
    let (mut dr, mut dx) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let mu0 = rng.gen_range(0.0..0.99);
        let mu1 = rng.gen_range(0.0..0.99);
        let pt = purity_transfer_time(mu0, mu1, p.gamma).unwrap();
        let opts = IntegrateOptions::uniform(pt.time.max(1e-3) / 200.0).with_tol(fine_tol());
        let traj = integrate_aux(&pt.schedule(), &pt.start(), p, &opts).unwrap();
        let [x, r, _] = traj.final_state();
        dr = dr.max((r - mu1).abs());
        dx = dx.max(x.abs());
        seen.trajectories.push(traj);
    }
    let el = t0.elapsed();
    outcome(
        dr <= 1e-6 && dx <= 1e-9 && within(el, Duration::from_secs(5)),
        format!("max |R(T)-mu1| = {dr:.2e}, max |r_x(T)| = {dx:.2e}, {:.2} s", el.as_secs_f64()),
    )
}

fn bound_values(p: &PhysParams) -> Outcome {
    let b = bounds_from_radii(0.0, 0.5, p).unwrap();
    let e_lower = (b.lower - LN_2).abs();
    let e_upper = (b.upper.unwrap() - (PI / 20.0 + E + LN_2)).abs();
    let mut rng = rng(102);
    let cap = p.feasibility_cap();
    let margin = PI / p.omega + E / p.gamma;
    let mut gap: f64 = 0.0;
    for _ in 0..1000 {
        let b = bounds_from_radii(rng.gen_range(0.0..1.0), rng.gen_range(0.0..=cap), p).unwrap();
        gap = gap.max((b.gap().unwrap() - margin).abs());
    }
    outcome(
        e_lower <= 1e-12 && e_upper <= 1e-12 && gap <= 1e-12,
        format!("|lower-ln2| = {e_lower:.1e}, |upper-ref| = {e_upper:.1e}, max gap deviation = {gap:.1e}"),
    )
}

fn protocol_validity(p: &PhysParams, seen: &mut Collected) -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng(103);
    let cap = p.feasibility_cap();
    let pairs: Vec<(BlochState, BlochState)> = (0..100).map(|_| (ball(&mut rng, 1.0), ball(&mut rng, cap))).collect();
    let opts = ValidationOptions::default();
    let mut worst_aux: f64 = 0.0;
    let mut worst_bloch: f64 = 0.0;
    let mut missing_u = 0;
    let mut bounds_ok = true;
    let mut max_impulses = 0;
    let mut failures = 0;
    for (r0, r1) in &pairs {
        let res = synthesize(r0, r1, None, None, p, &opts.synthesis).and_then(|pr| {
            let rep = validate(&pr, p, &opts)?;
            Ok((pr, rep))
        });
        let Ok((pr, rep)) = res else {
            failures += 1;
            continue;
        };
        worst_aux = worst_aux.max(rep.aux_endpoint_error);
        match rep.bloch_endpoint_error {
            Some(e) => worst_bloch = worst_bloch.max(e),
            None => missing_u += 1,
        }
        let b = rep.bounds;
        bounds_ok &= rep.total_time >= b.lower - 1e-9 && b.upper.is_some_and(|u| rep.total_time <= u + 1e-9);
        max_impulses = max_impulses.max(rep.v_impulse_count);
        let io = IntegrateOptions::uniform(rep.total_time.max(1e-3) / 300.0).with_tol(fine_tol());
        if let Ok(t) = integrate_aux(&pr.theta, &pr.plan.start(), p, &io) {
            seen.trajectories.push(t);
        }
        if let Some(u) = &pr.u {
            if let Ok(t) = integrate_bloch(u, r0, p, &io) {
                seen.trajectories.push(t);
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        failures == 0
            && missing_u == 0
            && worst_aux <= 1e-6
            && worst_bloch <= 1e-6
            && bounds_ok
            && max_impulses <= 4
            && within(el, Duration::from_secs(60)),
        format!(
            "aux error {worst_aux:.1e}, 3D error {worst_bloch:.1e}, failures {failures}, u absent {missing_u}, \
             within bounds {bounds_ok}, max v impulses {max_impulses}, {:.2} s",
            el.as_secs_f64()
        ),
    )
}

fn reconstruction(p: &PhysParams, seen: &mut Collected) -> Outcome {
    let mut rng = rng(104);
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for _ in 0..20 {
        let (start, theta) = smooth_theta_case(&mut rng, p);
        match reconstruction_deviation(&start, &theta, p) {
            Ok(d) => worst = worst.max(d),
            Err(_) => errors += 1,
        }
        let io = IntegrateOptions::uniform(theta.horizon / 300.0).with_tol(fine_tol());
        seen.trajectories.push(integrate_aux(&theta, &start, p, &io).unwrap());
    }
    outcome(
        errors == 0 && worst <= 1e-5,
        format!("max (r_x, R) deviation {worst:.2e} over 20 schedules, {errors} errors"),
    )
}

fn theta_max_correctness(p: &PhysParams) -> Outcome {
    let mut rng = rng(105);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut n = 0;
    while n < 1000 {
        let pt = half_disk(&mut rng, 1.0);
        let r = if rng.gen_bool(0.5) { pt.r_yz } else { -pt.r_yz };
        let s = ExtremalState::new(pt.r_x, r, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        if s.r_yz * s.r_yz + s.q * s.q < 1e-6 {
            continue;
        }
        n += 1;
        let h = hamiltonian(&s, theta_max(&s, p).unwrap(), p);
        let grid = (0..10_000)
            .map(|k| hamiltonian(&s, TAU * k as f64 / 10_000.0, p))
            .fold(f64::NEG_INFINITY, f64::max);
        // Positive when the grid finds a larger value than θ_M.
        worst_gap = worst_gap.max(grid - h);
    }
    let g = p.ratio();
    let mut worst_axis: f64 = 0.0;
    for _ in 0..1000 {
        let x = rng.gen_range(-1.0..1.0);
        let q: f64 = rng.gen_range(-3.0..3.0);
        if q == 0.0 {
            continue;
        }
        let th = theta_max(&ExtremalState::new(x, 0.0, rng.gen_range(-3.0..3.0), q), p).unwrap();
        worst_axis = worst_axis.max((th.cos() - q.signum() * x / x.hypot(g)).abs());
    }
    outcome(
        worst_gap <= 1e-8 && worst_axis <= 1e-9,
        format!("grid max exceeds H(θ_M) by at most {worst_gap:.1e}; axis closed form error {worst_axis:.1e}"),
    )
}

fn identities(p: &PhysParams, seen: &Collected) -> Outcome {
    let mut rng = rng(106);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let pt = half_disk(&mut rng, 1.0);
        let s = CylState::new(pt.r_x, pt.r_yz, rng.gen_range(-PI..PI));
        let c = curvature(&s, p);
        if c.closed_form != 0.0 {
            worst = worst.max((c.finite_difference - c.closed_form).abs() / c.closed_form.abs());
        }
    }
    let total = seen
        .trajectories
        .iter()
        .map(|t| identity_check(t, p))
        .fold(IdentityCheck::default(), IdentityCheck::merge);
    outcome(
        worst <= 1e-6 && total.purity_rate <= 1e-6 && total.z_bound <= 1e-6 && total.ball <= 1e-6,
        format!(
            "curvature rel. error {worst:.1e}; over {} trajectories: purity-rate error {:.1e} ({} points), \
             ż excess {:.1e}, ball shortfall {:.1e}",
            seen.trajectories.len(),
            total.purity_rate,
            total.checked,
            total.z_bound,
            total.ball
        ),
    )
}

struct Shot {
    start: PhasePoint,
    target: PhasePoint,
    result: qtmin_core::Result<ShootResult>,
    protocol_time: f64,
}

fn shots(p: &PhysParams) -> Vec<Shot> {
    let cfg = ShootConfig::default();
    let mut out = Vec::new();
    let a = PhasePoint::new(0.0, 0.0);
    let b = PhasePoint::new(0.0, 0.5);
    out.push(Shot {
        start: a,
        target: b,
        result: shoot(&a, &b, p, &cfg),
        protocol_time: f64::INFINITY,
    });
    let mut rng = rng(109);
    let cap = p.feasibility_cap();
    for _ in 0..10 {
        let a = half_disk(&mut rng, 1.0);
        let b = half_disk(&mut rng, cap);
        let pl = plan(
            &BlochState::from_array([a.r_x, a.r_yz, 0.0]),
            &BlochState::from_array([b.r_x, b.r_yz, 0.0]),
            None,
            None,
            p,
        )
        .unwrap();
        out.push(Shot {
            start: a,
            target: b,
            result: shoot(&a, &b, p, &cfg),
            protocol_time: pl.total_time,
        });
    }
    out
}

fn extremal_structure(p: &PhysParams, shots: &[Shot], seen: &mut Collected) -> Outcome {
    let mut h_drift: f64 = 0.0;
    let mut min_rq = f64::INFINITY;
    let mut zeros = 0;
    let mut missing = 0;
    for s in shots {
        let Ok(r) = &s.result else {
            missing += 1;
            continue;
        };
        let hs = r.trajectory.hamiltonians(p);
        let h0 = hs[0];
        for h in &hs {
            h_drift = h_drift.max((h - h0).abs() / h0.abs());
        }
        min_rq = min_rq.min(r.trajectory.min_r2_q2());
        let traj = r.trajectory.to_trajectory();
        if s.start.r_yz >= 0.0 && s.target.r_yz >= 0.0 {
            zeros = zeros.max(count_R_zeros(&traj));
        }
        seen.trajectories.push(traj);
    }
    outcome(
        missing == 0 && h_drift <= 1e-7 && min_rq > 0.0 && zeros == 0,
        format!(
            "{} extremals ({missing} not found): H rel. drift {h_drift:.1e}, min R²+q² {min_rq:.2e}, max R-zeros {zeros}",
            shots.len()
        ),
    )
}

fn oracle_sandwich(p: &PhysParams) -> Outcome {
    let t0 = Instant::now();
    let a = PhasePoint::new(0.0, 0.0);
    let goal = Goal::Purity { mu: 0.5 };
    let ladder = [GridSpec::new(100), GridSpec::new(200), GridSpec::new(400)];
    let study = match refine_study(&a, &goal, p, &ladder, Execution::default()) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("oracle failed: {e}")),
    };
    let fine = study.rows.last().unwrap();
    let lower = bounds_from_radii(0.0, 0.5, p).unwrap().lower;
    let rel = (fine.estimate - LN_2).abs() / LN_2;
    let above = study.rows.iter().all(|r| r.estimate >= lower - r.slack);
    let el = t0.elapsed();
    outcome(
        rel <= 0.15 && above && study.antitone && within(el, Duration::from_secs(300)),
        format!(
            "400×400/64: estimate {:.6} (ln 2 {:+.2}%), slack {:.4}; ladder {:?} antitone {}; {:.2} s",
            fine.estimate,
            100.0 * (fine.estimate - LN_2) / LN_2,
            fine.slack,
            study.rows.iter().map(|r| (r.resolution, (r.estimate * 1e6).round() / 1e6)).collect::<Vec<_>>(),
            study.antitone,
            el.as_secs_f64()
        ),
    )
}

fn shooting_sandwich(p: &PhysParams, shots: &[Shot]) -> Outcome {
    let purity = match &shots[0].result {
        Ok(r) => (r.t_star - LN_2).abs(),
        Err(_) => f64::INFINITY,
    };
    let mut inside = 0;
    let mut worst = String::new();
    for s in &shots[1..] {
        let lower = bounds_from_radii(s.start.norm(), s.target.norm(), p).unwrap().lower;
        match &s.result {
            Ok(r) if r.t_star >= lower - 1e-6 && r.t_star <= s.protocol_time + 1e-6 => inside += 1,
            Ok(r) => worst = format!("; outside: {:.6} ∉ [{lower:.6}, {:.6}]", r.t_star, s.protocol_time),
            Err(e) => worst = format!("; error: {e}"),
        }
    }
    outcome(
        purity <= 1e-5 && inside == shots.len() - 1,
        format!("purity |T*-ln2| = {purity:.1e}; {inside}/{} pairs within [lower, T̃]{worst}", shots.len() - 1),
    )
}

fn figure1(p: &PhysParams) -> Outcome {
    let g = figure1_grid(p.gamma, p.omega, 41, Execution::default()).unwrap();
    let mut monotone = true;
    for i0 in 0..g.n {
        for i1 in 1..g.n {
            let (a, b) = (g.at(i0, i1 - 1), g.at(i0, i1));
            if a.mu1 >= a.mu0 {
                monotone &= b.lower >= a.lower && b.upper >= a.upper;
            }
        }
    }
    let diff = g
        .rows
        .iter()
        .map(|r| (r.upper - r.upper_neglect_pi_over_omega - PI / p.omega).abs())
        .fold(0.0, f64::max);
    outcome(
        monotone && diff <= 1e-12,
        format!("{}×{} grid monotone {monotone}; max |Δ − π/ω| = {diff:.1e}", g.n, g.n),
    )
}

fn main() {
    let p = params();
    let mut seen = Collected::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "closed-form purity motion vs simulation", purity_motion(&p, &mut seen)));
    results.push((2, "time-bound evaluation", bound_values(&p)));
    results.push((3, "protocol validity on 100 random pairs", protocol_validity(&p, &mut seen)));
    results.push((4, "reconstruction round trip", reconstruction(&p, &mut seen)));
    results.push((5, "θ_M correctness", theta_max_correctness(&p)));
    let shot = shots(&p);
    let seventh = extremal_structure(&p, &shot, &mut seen);
    results.push((6, "curvature and radius identities", identities(&p, &seen)));
    results.push((7, "extremal conservation and structure", seventh));
    results.push((8, "oracle sandwich", oracle_sandwich(&p)));
    results.push((9, "shooting vs closed form and protocol", shooting_sandwich(&p, &shot)));
    results.push((10, "figure grid properties", figure1(&p)));

    let mut failed = 0;
    for (k, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{k:>2}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
