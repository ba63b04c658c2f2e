//! Controlled Bloch dynamics, the cylindrical reduction, and trajectory
//! integration with exact impulse rotations.
//!
//! In Bloch coordinates the controlled GKSL equation reads
//! `ṙ = ω f₀(r) + κ f₁(r) u` with
//!
//! ```text
//! f₀(r) = (-r_y, r_x, 0) - (γ/ω)(r_x/2, r_y/2, r_z) + (γ/ω)(0, 0, 1)
//! f₁(r) = (0, -r_z, r_y)
//! ```
//!
//! Writing `r_y = R cos θ`, `r_z = R sin θ`, the pair `(r_x, R)` obeys a
//! planar system in which θ enters as a control, and the drive only appears
//! in `θ̇`.

use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::bloch::{BlochState, CylState, PhasePoint, PhysParams};
use crate::error::{Error, Result};
use crate::ode::{Dopri5, Stats, Tolerance};
use crate::schedule::{ControlSchedule, Segment, Signal, SmoothPiece};

/// Slack on `|r| <= 1` during integration.
pub const INTEGRATION_SLACK: f64 = 1e-8;

/// `ω f₀(r) + κ f₁(r) u`.
#[inline]
pub fn rhs_3d(r: &[f64; 3], u: f64, params: &PhysParams) -> [f64; 3] {
    let PhysParams {
        omega,
        kappa,
        gamma,
    } = *params;
    let [x, y, z] = *r;
    let ku = kappa * u;
    [
        -omega * y - 0.5 * gamma * x,
        omega * x - 0.5 * gamma * y - ku * z,
        gamma * (1.0 - z) + ku * y,
    ]
}

/// Velocity `(ṙ_x, Ṙ)` of the planar system at angle θ.
#[inline]
pub fn rhs_aux(r_x: f64, r_yz: f64, theta: f64, params: &PhysParams) -> [f64; 2] {
    let (sin, cos) = theta.sin_cos();
    let PhysParams { omega, gamma, .. } = *params;
    [
        -0.5 * gamma * r_x - omega * cos * r_yz,
        omega * cos * r_x - 0.5 * gamma * (1.0 + sin * sin) * r_yz + gamma * sin,
    ]
}

pub fn rhs_aux_state(s: &CylState, params: &PhysParams) -> [f64; 2] {
    rhs_aux(s.r_x, s.r_yz, s.theta, params)
}

/// `(γ/4ω) sin 2θ + (1/R)(r_x sin θ − (γ/ω) cos θ)`, the drift of θ in units of ω.
fn theta_drift(s: &CylState, params: &PhysParams) -> Result<f64> {
    if s.r_yz == 0.0 {
        return Err(Error::DegenerateSubstitution);
    }
    let ratio = params.ratio();
    let (sin, cos) = s.theta.sin_cos();
    Ok(0.25 * ratio * (2.0 * s.theta).sin() + (s.r_x * sin - ratio * cos) / s.r_yz)
}

/// `θ̇ = κu − ω[(γ/4ω) sin 2θ + (1/R)(r_x sin θ − (γ/ω) cos θ)]`.
pub fn rhs_cyl_theta(s: &CylState, u: f64, params: &PhysParams) -> Result<f64> {
    Ok(params.kappa * u - params.omega * theta_drift(s, params)?)
}

/// `u = (ω/κ)[v + (γ/4ω) sin 2θ + (1/R)(r_x sin θ − (γ/ω) cos θ)]`.
pub fn u_from_v_pointwise(v: f64, s: &CylState, params: &PhysParams) -> Result<f64> {
    Ok(params.omega / params.kappa * (v + theta_drift(s, params)?))
}

/// Inverse of [`u_from_v_pointwise`].
pub fn v_from_u_pointwise(u: f64, s: &CylState, params: &PhysParams) -> Result<f64> {
    Ok(params.kappa / params.omega * u - theta_drift(s, params)?)
}

/// Exact rotation of `(r_y, r_z)` by `dtheta` about the x axis.
pub fn apply_impulse(r: &BlochState, dtheta: f64) -> BlochState {
    let (sin, cos) = dtheta.sin_cos();
    BlochState {
        r_x: r.r_x,
        r_y: cos * r.r_y - sin * r.r_z,
        r_z: sin * r.r_y + cos * r.r_z,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// Three-dimensional Bloch equations driven by a u schedule.
    Bloch,
    /// The planar `(r_x, R)` system driven by a θ or v schedule.
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    /// Rows are `(r_x, r_y, r_z)`.
    Bloch,
    /// Rows are `(r_x, R, θ)`.
    Cylindrical,
}

/// Where samples are recorded inside each smooth segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    /// Every accepted integrator step.
    Steps,
    /// Equal subintervals no longer than `dt`.
    Uniform { dt: f64 },
    /// `n` equal subintervals per segment.
    PerSegment(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    pub max_step: Option<f64>,
    pub output: Output,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: Tolerance::default(),
            max_step: None,
            output: Output::Steps,
        }
    }
}

impl IntegrateOptions {
    pub fn uniform(dt: f64) -> Self {
        Self {
            output: Output::Uniform { dt },
            ..Self::default()
        }
    }

    pub fn per_segment(n: usize) -> Self {
        Self {
            output: Output::PerSegment(n),
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    fn solver(&self) -> Dopri5 {
        let mut s = Dopri5::new(self.tol);
        if let Some(h) = self.max_step {
            s = s.with_max_step(h);
        }
        s
    }

    fn grid(&self, t0: f64, t1: f64) -> Vec<f64> {
        let n = match self.output {
            Output::Steps => return vec![t0, t1],
            Output::Uniform { dt } => ((t1 - t0) / dt).ceil().max(1.0) as usize,
            Output::PerSegment(n) => n.max(1),
        };
        let mut g: Vec<f64> = (0..=n)
            .map(|i| t0 + (t1 - t0) * i as f64 / n as f64)
            .collect();
        g[n] = t1;
        g
    }
}

/// Sampled solution. Times are nondecreasing; a repeated time marks the
/// left/right limits around an impulse or a jump of θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub coords: Coordinates,
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub tol: Tolerance,
    pub stats: Stats,
}

impl Trajectory {
    fn new(coords: Coordinates, tol: Tolerance) -> Self {
        Self {
            coords,
            times: Vec::new(),
            states: Vec::new(),
            tol,
            stats: Stats::default(),
        }
    }

    pub(crate) fn from_samples(coords: Coordinates, times: Vec<f64>, states: Vec<[f64; 3]>) -> Self {
        Self {
            coords,
            times,
            states,
            tol: Tolerance::default(),
            stats: Stats::default(),
        }
    }

    fn push(&mut self, t: f64, s: [f64; 3]) {
        self.times.push(t);
        self.states.push(s);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    pub fn first_state(&self) -> [f64; 3] {
        self.states[0]
    }

    pub fn final_state(&self) -> [f64; 3] {
        *self.states.last().expect("trajectory has samples")
    }

    /// `(r_x, R)` of every row; Bloch rows are projected with `R = √(r_y² + r_z²)`.
    pub fn phase_points(&self) -> Vec<PhasePoint> {
        self.states.iter().map(|s| self.phase_of(s)).collect()
    }

    pub fn phase_of(&self, s: &[f64; 3]) -> PhasePoint {
        match self.coords {
            Coordinates::Cylindrical => PhasePoint::new(s[0], s[1]),
            Coordinates::Bloch => PhasePoint::new(s[0], s[1].hypot(s[2])),
        }
    }

    pub fn final_phase(&self) -> PhasePoint {
        self.phase_of(&self.final_state())
    }

    pub fn cyl_state(&self, i: usize) -> CylState {
        assert_eq!(self.coords, Coordinates::Cylindrical);
        let [a, b, c] = self.states[i];
        CylState::new(a, b, c)
    }

    /// Index ranges of maximal runs with strictly increasing times.
    pub fn continuous_runs(&self) -> Vec<Range<usize>> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..self.times.len() {
            if self.times[i] <= self.times[i - 1] {
                runs.push(start..i);
                start = i;
            }
        }
        if !self.times.is_empty() {
            runs.push(start..self.times.len());
        }
        runs
    }

    pub fn header(&self) -> &'static str {
        match self.coords {
            Coordinates::Bloch => "t,r_x,r_y,r_z",
            Coordinates::Cylindrical => "t,r_x,R,theta",
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header())?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{},{},{},{}", t, s[0], s[1], s[2])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

fn check_ball(t: f64, x: f64, r: f64, extra: f64) -> Result<()> {
    let n = (x * x + r * r + extra * extra).sqrt();
    if !n.is_finite() || n > 1.0 + INTEGRATION_SLACK {
        return Err(Error::InvariantViolation { t, norm: n });
    }
    Ok(())
}

/// Integrate `system` under `schedule` from `s0`.
///
/// For [`System::Auxiliary`] the start is reduced to `(r_x, R, θ)` with
/// [`crate::bloch::bloch_to_cyl`]; a θ schedule overrides the start angle.
pub fn integrate(
    system: System,
    schedule: &ControlSchedule,
    s0: &BlochState,
    params: &PhysParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    match system {
        System::Bloch => integrate_bloch(schedule, s0, params, opts),
        System::Auxiliary => integrate_aux(schedule, &crate::bloch::bloch_to_cyl(s0), params, opts),
    }
}

/// Integrate the Bloch equations under a u schedule; impulses rotate exactly.
pub fn integrate_bloch(
    schedule: &ControlSchedule,
    r0: &BlochState,
    params: &PhysParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    params.validate()?;
    schedule.validate()?;
    r0.validate()?;
    if schedule.signal != Signal::U {
        return Err(Error::InvalidSchedule(format!(
            "the Bloch system is driven by u, got a {:?} schedule",
            schedule.signal
        )));
    }
    let solver = opts.solver();
    let mut traj = Trajectory::new(Coordinates::Bloch, opts.tol);
    let mut y = r0.to_array();
    traj.push(0.0, y);
    let mut h = None;
    let segments = schedule.segments();

    let kick = |t: f64, y: &mut [f64; 3], traj: &mut Trajectory| {
        let mut any = false;
        for imp in schedule.impulses_at(t) {
            *y = apply_impulse(&BlochState::from_array(*y), imp.dtheta).to_array();
            any = true;
        }
        if any {
            traj.push(t, *y);
        }
    };
    kick(0.0, &mut y, &mut traj);

    for seg in &segments {
        let Segment { t0, t1, piece } = *seg;
        let sys = |t: f64, r: &[f64; 3]| rhs_3d(r, schedule.smooth_value(piece, t), params);
        let grid = opts.grid(t0, t1);
        for w in grid.windows(2) {
            let mut fail = None;
            let (y1, stats) = solver.integrate(&sys, w[0], y, w[1], h, |t, s| {
                if fail.is_none() {
                    if let Err(e) = check_ball(t, s[0], s[1], s[2]) {
                        fail = Some(e);
                    }
                }
                if opts.output == Output::Steps && t < w[1] {
                    traj.times.push(t);
                    traj.states.push(*s);
                }
            })?;
            if let Some(e) = fail {
                return Err(e);
            }
            traj.stats.merge(&stats);
            h = Some(stats.h_next).filter(|h| *h > 0.0);
            y = y1;
            traj.push(w[1], y);
        }
        kick(t1, &mut y, &mut traj);
    }
    Ok(traj)
}

/// Integrate the planar system under a θ or v schedule.
///
/// Rows are `(r_x, R, θ)`. With a θ schedule the angle follows the pieces and
/// a change of value at a piece boundary is recorded as a left/right pair;
/// with a v schedule `θ̇ = ωv` and impulses shift θ.
pub fn integrate_aux(
    schedule: &ControlSchedule,
    s0: &CylState,
    params: &PhysParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    params.validate()?;
    schedule.validate()?;
    s0.validate()?;
    match schedule.signal {
        Signal::Theta => integrate_aux_theta(schedule, s0, params, opts),
        Signal::V => integrate_aux_v(schedule, s0, params, opts),
        Signal::U => Err(Error::InvalidSchedule(
            "the auxiliary system is driven by θ or v, got a u schedule".into(),
        )),
    }
}

fn integrate_aux_theta(
    schedule: &ControlSchedule,
    s0: &CylState,
    params: &PhysParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let solver = opts.solver();
    let mut traj = Trajectory::new(Coordinates::Cylindrical, opts.tol);
    let segments = schedule.segments();
    let theta_at = |piece: Option<usize>, t: f64| -> f64 {
        // validate() guarantees coverage when horizon > 0
        piece.map_or(s0.theta, |i| schedule.smooth[i].value(t))
    };
    let mut y = [s0.r_x, s0.r_yz];
    let theta_start = segments
        .first()
        .map_or(s0.theta, |s| theta_at(s.piece, 0.0));
    traj.push(0.0, [y[0], y[1], theta_start]);
    let mut h = None;

    for (k, seg) in segments.iter().enumerate() {
        let Segment { t0, t1, piece } = *seg;
        let theta_in = theta_at(piece, t0);
        if k > 0 {
            let last = traj.final_state();
            if theta_in != last[2] {
                traj.push(t0, [y[0], y[1], theta_in]);
            }
        }
        let sys = |t: f64, s: &[f64; 2]| rhs_aux(s[0], s[1], theta_at(piece, t), params);
        let grid = opts.grid(t0, t1);
        for w in grid.windows(2) {
            let mut fail = None;
            let (y1, stats) = solver.integrate(&sys, w[0], y, w[1], h, |t, s| {
                if fail.is_none() {
                    if let Err(e) = check_ball(t, s[0], s[1], 0.0) {
                        fail = Some(e);
                    }
                }
                if opts.output == Output::Steps && t < w[1] {
                    traj.times.push(t);
                    traj.states.push([s[0], s[1], theta_at(piece, t)]);
                }
            })?;
            if let Some(e) = fail {
                return Err(e);
            }
            traj.stats.merge(&stats);
            h = Some(stats.h_next).filter(|h| *h > 0.0);
            y = y1;
            traj.push(w[1], [y[0], y[1], theta_at(piece, w[1])]);
        }
    }
    Ok(traj)
}

fn integrate_aux_v(
    schedule: &ControlSchedule,
    s0: &CylState,
    params: &PhysParams,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let solver = opts.solver();
    let mut traj = Trajectory::new(Coordinates::Cylindrical, opts.tol);
    let mut y = [s0.r_x, s0.r_yz, s0.theta];
    traj.push(0.0, y);
    let mut h = None;
    let kick = |t: f64, y: &mut [f64; 3], traj: &mut Trajectory| {
        let mut any = false;
        for imp in schedule.impulses_at(t) {
            y[2] += imp.dtheta;
            any = true;
        }
        if any {
            traj.push(t, *y);
        }
    };
    kick(0.0, &mut y, &mut traj);
    for seg in schedule.segments() {
        let Segment { t0, t1, piece } = seg;
        let sys = |t: f64, s: &[f64; 3]| {
            let [a, b] = rhs_aux(s[0], s[1], s[2], params);
            [a, b, params.omega * schedule.smooth_value(piece, t)]
        };
        let grid = opts.grid(t0, t1);
        for w in grid.windows(2) {
            let mut fail = None;
            let (y1, stats) = solver.integrate(&sys, w[0], y, w[1], h, |t, s| {
                if fail.is_none() {
                    if let Err(e) = check_ball(t, s[0], s[1], 0.0) {
                        fail = Some(e);
                    }
                }
                if opts.output == Output::Steps && t < w[1] {
                    traj.times.push(t);
                    traj.states.push(*s);
                }
            })?;
            if let Some(e) = fail {
                return Err(e);
            }
            traj.stats.merge(&stats);
            h = Some(stats.h_next).filter(|h| *h > 0.0);
            y = y1;
            traj.push(w[1], y);
        }
        kick(t1, &mut y, &mut traj);
    }
    Ok(traj)
}

/// Radii at most this large count as `R = 0` at segment endpoints.
const ENDPOINT_ZERO: f64 = 1e-12;

/// Recover the drive u from a cylindrical trajectory of the planar system.
///
/// Within each continuous run of samples θ is interpolated by a cubic spline
/// and `κu = θ̇ + ω[(γ/4ω) sin 2θ + (1/R)(r_x sin θ − (γ/ω) cos θ)]` is
/// sampled at the knots. Jumps of θ between runs become impulses, and the
/// endpoint impulses `θ̂(0) − θ₀` at `t = 0` and `θ₁ − θ̂(T)` at `t = T`
/// connect the prescribed angles. Zero impulses are dropped.
///
/// At a run endpoint with `R = 0` the bracket is replaced by its limit
/// `ṙ_x sin θ / Ṙ + θ̇ / ω`, which exists when
/// `r_x sin θ = (γ/ω) cos θ` there (equivalently `cos θ = ω r_x/Ṙ`,
/// `sin θ = γ/Ṙ`). Otherwise the drive is not integrable and
/// [`Error::SingularControl`] is returned. A zero of R strictly inside a run
/// gives [`Error::InteriorZero`].
pub fn reconstruct_u(
    traj: &Trajectory,
    theta0: f64,
    theta1: f64,
    params: &PhysParams,
) -> Result<ControlSchedule> {
    if traj.coords != Coordinates::Cylindrical {
        return Err(Error::InvalidSchedule(
            "reconstruction needs a cylindrical trajectory".into(),
        ));
    }
    if traj.is_empty() {
        return Err(Error::InvalidSchedule("empty trajectory".into()));
    }
    let t_start = traj.times[0];
    let horizon = traj.final_time() - t_start;
    let mut out = ControlSchedule::new(Signal::U, horizon);
    let significant = |d: f64| d.abs() > 1e-14;

    let first = traj.first_state();
    let d0 = first[2] - theta0;
    if significant(d0) {
        out.impulses.push(crate::schedule::Impulse { t: 0.0, dtheta: d0 });
    }

    let runs = traj.continuous_runs();
    for (k, run) in runs.iter().enumerate() {
        if k > 0 {
            let before = traj.states[run.start - 1][2];
            let after = traj.states[run.start][2];
            if significant(after - before) {
                out.impulses.push(crate::schedule::Impulse {
                    t: traj.times[run.start] - t_start,
                    dtheta: after - before,
                });
            }
        }
        if run.len() < 2 {
            continue;
        }
        let times: Vec<f64> = traj.times[run.clone()].iter().map(|t| t - t_start).collect();
        let thetas: Vec<f64> = traj.states[run.clone()].iter().map(|s| s[2]).collect();
        let spline = crate::spline::CubicSpline::new(times.clone(), thetas)
            .map_err(Error::InvalidSchedule)?;

        let n = run.len();
        // Interior sign changes or zeros of R.
        for j in 0..n {
            let r = traj.states[run.start + j][1];
            let interior = j > 0 && j + 1 < n;
            if interior && r == 0.0 {
                return Err(Error::InteriorZero { t: times[j] });
            }
            if j + 1 < n {
                let r_next = traj.states[run.start + j + 1][1];
                if r * r_next < 0.0 {
                    let tz = times[j] + (times[j + 1] - times[j]) * r / (r - r_next);
                    return Err(Error::InteriorZero { t: tz });
                }
            }
        }

        let mut u = Vec::with_capacity(n);
        for j in 0..n {
            let [x, r, th] = traj.states[run.start + j];
            let t = times[j];
            let theta_dot = spline.derivative(t);
            let ratio = params.ratio();
            let (sin, cos) = th.sin_cos();
            let bracket = if r.abs() <= ENDPOINT_ZERO {
                let numer = x * sin - ratio * cos;
                let [xd, rd] = rhs_aux(x, r, th, params);
                if numer.abs() > 1e-9 || rd == 0.0 {
                    return Err(Error::SingularControl {
                        t,
                        reason: format!(
                            "R = 0 but r_x sin θ − (γ/ω) cos θ = {numer:e}; the drive has a 1/R singularity"
                        ),
                    });
                }
                xd * sin / rd + theta_dot / params.omega
            } else {
                (x * sin - ratio * cos) / r
            };
            let drift = 0.25 * ratio * (2.0 * th).sin() + bracket;
            u.push((theta_dot + params.omega * drift) / params.kappa);
        }
        out.smooth.push(SmoothPiece::sampled(times, u)?);
    }

    let last = traj.final_state();
    let d1 = theta1 - last[2];
    if significant(d1) {
        out.impulses.push(crate::schedule::Impulse {
            t: horizon,
            dtheta: d1,
        });
    }
    out.validate()?;
    Ok(out)
}
