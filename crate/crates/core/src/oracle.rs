//! Brute-force minimum-time estimates on the auxiliary `(r_x, R)` problem.
//!
//! The disk is covered by an `n × n` grid and searched Dijkstra-style. An
//! edge follows one of `n_theta` constant control angles with fixed RK4
//! steps until the state leaves its cell. Each cell keeps the exact
//! continuous state of its earliest arrival rather than snapping to the
//! cell centre, so every path the search reports is a genuine trajectory and
//! its time can only overestimate the true minimum. The discretization
//! error is in the pruning (one representative per cell) and is reported as
//! `slack`.
//!
//! The search runs on the full disk; `R < 0` is the mirror image of the
//! physical half-disk under `(R, θ) ↦ (−R, θ + π)`, and point goals accept
//! either image.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::bloch::{PhasePoint, PhysParams};
use crate::dynamics::rhs_aux;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::schedule::ControlSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Cells per side over `[−1, 1]²`.
    pub n: usize,
    pub n_theta: usize,
    /// RK4 step; by default the largest step that cannot skip a cell.
    pub dt: Option<f64>,
    /// Edges still inside their cell after this many steps are dropped.
    pub max_substeps: usize,
    /// Search cap on arrival time; defaults from the time bounds.
    pub horizon: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 200,
            n_theta: 64,
            dt: None,
            max_substeps: 512,
            horizon: None,
        }
    }
}

impl GridSpec {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn cell(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn diameter(&self) -> f64 {
        self.cell() * std::f64::consts::SQRT_2
    }

    pub fn step(&self, params: &PhysParams) -> f64 {
        self.dt.unwrap_or_else(|| self.cell() / max_speed(params))
    }

    pub fn validate(&self, params: &PhysParams) -> Result<()> {
        if self.n < 2 || self.n > 1 << 15 {
            return Err(Error::InvalidGrid(format!("n = {} must lie in [2, 32768]", self.n)));
        }
        if self.n_theta < 2 || self.n_theta > u16::MAX as usize {
            return Err(Error::InvalidGrid(format!("n_theta = {} must be at least 2", self.n_theta)));
        }
        if self.max_substeps == 0 {
            return Err(Error::InvalidGrid("max_substeps must be positive".into()));
        }
        let dt = self.step(params);
        if !(dt > 0.0) || dt * max_speed(params) > self.cell() * (1.0 + 1e-12) {
            return Err(Error::InvalidGrid(format!(
                "dt = {dt} violates dt·v_max ≤ cell = {}",
                self.cell()
            )));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::InvalidGrid(format!("horizon = {h} must be positive")));
            }
        }
        Ok(())
    }
}

/// Bound on `|(ṙ_x, Ṙ)|` over the unit disk and all θ: the rotation part is
/// at most `ω|r|` and the dissipative part at most `γ(|r| + 1)`.
pub fn max_speed(params: &PhysParams) -> f64 {
    params.omega + 2.0 * params.gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Goal {
    /// A ball around `target` (or its mirror image); the radius defaults to
    /// one cell diameter.
    Point { target: PhasePoint, tol: Option<f64> },
    /// The sphere `|r| = mu`, approached from the start's side.
    Purity { mu: f64 },
}

/// Goal test with the start-dependent data resolved.
#[derive(Debug, Clone, Copy)]
enum GoalSet {
    Ball { x: f64, r: f64, tol: f64 },
    Outside(f64),
    Inside(f64),
}

impl GoalSet {
    fn contains(&self, y: [f64; 2]) -> bool {
        match *self {
            GoalSet::Ball { x, r, tol } => {
                let dx = y[0] - x;
                dx.hypot(y[1] - r) <= tol || dx.hypot(y[1] + r) <= tol
            }
            GoalSet::Outside(mu) => y[0].hypot(y[1]) >= mu,
            GoalSet::Inside(mu) => y[0].hypot(y[1]) <= mu,
        }
    }
}

impl Goal {
    fn resolve(&self, start: &PhasePoint, spec: &GridSpec) -> Result<GoalSet> {
        match *self {
            Goal::Point { target, tol } => {
                let tol = tol.unwrap_or_else(|| spec.diameter());
                if !(tol >= 0.0) {
                    return Err(Error::InvalidGrid(format!("goal tolerance {tol} must be non-negative")));
                }
                if target.norm() > 1.0 + 1e-12 {
                    return Err(Error::InvalidState("goal lies outside the unit disk".into()));
                }
                if !crate::bounds::reachable(start.norm(), target.norm()) && start.distance(&target) > tol {
                    return Err(Error::NoFiniteTime {
                        mu0: start.norm(),
                        mu1: target.norm(),
                    });
                }
                Ok(GoalSet::Ball {
                    x: target.r_x,
                    r: target.r_yz,
                    tol,
                })
            }
            Goal::Purity { mu } => {
                if !(0.0..=1.0).contains(&mu) {
                    return Err(Error::InvalidState(format!("goal radius {mu} outside [0, 1]")));
                }
                let mu0 = start.norm();
                if !crate::bounds::reachable(mu0, mu) {
                    return Err(Error::NoFiniteTime { mu0, mu1: mu });
                }
                Ok(if mu >= mu0 { GoalSet::Outside(mu) } else { GoalSet::Inside(mu) })
            }
        }
    }

    fn radius(&self) -> f64 {
        match *self {
            Goal::Point { target, .. } => target.norm(),
            Goal::Purity { mu } => mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub estimate: f64,
    pub slack: f64,
    pub n: usize,
    pub n_theta: usize,
    pub dt: f64,
    /// Cells settled before the goal was reached.
    pub explored: usize,
    /// Best path as `(θ, duration)` pieces.
    pub path: Vec<(f64, f64)>,
    pub arrival: PhasePoint,
}

impl OracleResult {
    /// The best path as a piecewise-constant θ schedule.
    pub fn schedule(&self) -> ControlSchedule {
        ControlSchedule::piecewise_theta(&self.path.iter().map(|&(th, d)| (d, th)).collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy)]
struct Parent {
    cell: u32,
    control: u16,
    steps: u32,
}

/// Heap entry ordered by earliest label, then lowest cell index.
#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

enum Edge {
    Dropped,
    Move { cell: usize, steps: u32, state: [f64; 2] },
    Arrive { steps: u32, state: [f64; 2] },
}

struct Grid<'a> {
    spec: &'a GridSpec,
    params: &'a PhysParams,
    dt: f64,
    controls: Vec<f64>,
}

impl Grid<'_> {
    fn cell_of(&self, y: [f64; 2]) -> Option<usize> {
        if y[0].hypot(y[1]) > 1.0 + 1e-9 {
            return None;
        }
        let n = self.spec.n;
        let h = self.spec.cell();
        let idx = |v: f64| (((v + 1.0) / h).floor() as isize).clamp(0, n as isize - 1) as usize;
        Some(idx(y[1]) * n + idx(y[0]))
    }

    fn rk4(&self, y: [f64; 2], theta: f64) -> [f64; 2] {
        let f = |y: [f64; 2]| rhs_aux(y[0], y[1], theta, self.params);
        let h = self.dt;
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    fn edge(&self, cell: usize, y0: [f64; 2], control: usize, goal: &GoalSet) -> Edge {
        let theta = self.controls[control];
        let mut y = y0;
        for s in 1..=self.spec.max_substeps as u32 {
            y = self.rk4(y, theta);
            if !(y[0].is_finite() && y[1].is_finite()) {
                return Edge::Dropped;
            }
            if goal.contains(y) {
                return Edge::Arrive { steps: s, state: y };
            }
            match self.cell_of(y) {
                None => return Edge::Dropped,
                Some(c) if c != cell => return Edge::Move { cell: c, steps: s, state: y },
                Some(_) => {}
            }
        }
        Edge::Dropped
    }
}

fn default_horizon(start: &PhasePoint, goal: &Goal, params: &PhysParams) -> f64 {
    let mu1 = goal.radius();
    match crate::bounds::bounds_from_radii(start.norm(), mu1, params) {
        Ok(b) => 2.0 * b.upper.unwrap_or(b.lower + crate::bounds::upper_margin(params)),
        Err(_) => 10.0 / params.gamma,
    }
}

/// Earliest arrival in the goal set found by the grid search.
pub fn min_time_grid(
    start: &PhasePoint,
    goal: &Goal,
    spec: &GridSpec,
    params: &PhysParams,
    exec: Execution,
) -> Result<OracleResult> {
    params.validate()?;
    spec.validate(params)?;
    if !(start.norm() <= 1.0 + 1e-12) || !start.r_x.is_finite() || !start.r_yz.is_finite() {
        return Err(Error::InvalidState("start lies outside the unit disk".into()));
    }
    let goal_set = goal.resolve(start, spec)?;
    let dt = spec.step(params);
    let grid = Grid {
        spec,
        params,
        dt,
        controls: (0..spec.n_theta).map(|k| TAU * k as f64 / spec.n_theta as f64).collect(),
    };
    let mut result = OracleResult {
        estimate: 0.0,
        slack: 0.0,
        n: spec.n,
        n_theta: spec.n_theta,
        dt,
        explored: 0,
        path: Vec::new(),
        arrival: *start,
    };
    let y0 = [start.r_x, start.r_yz];
    if goal_set.contains(y0) {
        return Ok(result);
    }
    let horizon = spec.horizon.unwrap_or_else(|| default_horizon(start, goal, params));

    let n_cells = spec.n * spec.n;
    let mut label = vec![f64::INFINITY; n_cells];
    let mut state = vec![[0.0; 2]; n_cells];
    let mut parent: Vec<Option<Parent>> = vec![None; n_cells];
    let mut settled = vec![false; n_cells];
    let first = grid.cell_of(y0).expect("start is inside the disk");
    label[first] = 0.0;
    state[first] = y0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, first));

    // (time, source cell, control, steps, state)
    let mut best: Option<(f64, usize, usize, u32, [f64; 2])> = None;
    let mut explored = 0;
    let mut max_radius = start.norm();

    while let Some(Entry(lead, c)) = heap.pop() {
        if settled[c] || lead > label[c] {
            continue;
        }
        if best.is_some_and(|b| lead >= b.0) || lead > horizon {
            break;
        }
        // Every edge costs at least dt, so labels below lead + dt are final
        // and the whole batch can be expanded independently.
        let mut batch = vec![c];
        settled[c] = true;
        while let Some(Entry(l, c2)) = heap.peek() {
            if *l >= lead + dt {
                break;
            }
            let (l, c2) = (*l, *c2);
            heap.pop();
            if !settled[c2] && l <= label[c2] {
                settled[c2] = true;
                batch.push(c2);
            }
        }
        batch.sort_unstable();
        explored += batch.len();
        for &b in &batch {
            max_radius = max_radius.max(state[b][0].hypot(state[b][1]));
        }

        let edges = par::map(exec, &batch, |&b| {
            (0..spec.n_theta)
                .map(|k| grid.edge(b, state[b], k, &goal_set))
                .collect::<Vec<_>>()
        });
        for (&b, out) in batch.iter().zip(edges) {
            for (k, e) in out.into_iter().enumerate() {
                match e {
                    Edge::Dropped => {}
                    Edge::Arrive { steps, state: y } => {
                        let t = label[b] + steps as f64 * dt;
                        if best.map_or(true, |x| t < x.0) {
                            best = Some((t, b, k, steps, y));
                        }
                    }
                    Edge::Move { cell, steps, state: y } => {
                        let t = label[b] + steps as f64 * dt;
                        if !settled[cell] && t < label[cell] {
                            label[cell] = t;
                            state[cell] = y;
                            parent[cell] = Some(Parent {
                                cell: b as u32,
                                control: k as u16,
                                steps,
                            });
                            heap.push(Entry(t, cell));
                        }
                    }
                }
            }
        }
    }

    let Some((t, cell, control, steps, y)) = best else {
        return Err(Error::Unreached {
            horizon,
            explored,
            max_radius,
        });
    };
    if t > horizon {
        return Err(Error::Unreached {
            horizon,
            explored,
            max_radius,
        });
    }

    // Walk the parent chain back to the start.
    let mut legs = vec![(control, steps, state[cell])];
    let mut c = cell;
    while let Some(p) = parent[c] {
        legs.push((p.control as usize, p.steps, state[p.cell as usize]));
        c = p.cell as usize;
    }
    legs.reverse();
    let mut path: Vec<(f64, f64)> = Vec::new();
    let mut v_min = f64::INFINITY;
    for &(k, s, from) in &legs {
        let th = grid.controls[k];
        let f = rhs_aux(from[0], from[1], th, params);
        v_min = v_min.min(f[0].hypot(f[1]));
        let d = s as f64 * dt;
        match path.last_mut() {
            Some(last) if last.0 == th => last.1 += d,
            _ => path.push((th, d)),
        }
    }
    result.estimate = t;
    // Pruning within a cell, plus crossing the goal ball for point goals.
    let ball = match goal_set {
        GoalSet::Ball { tol, .. } => tol,
        _ => 0.0,
    };
    result.slack = dt + (spec.diameter() + ball) / v_min;
    result.explored = explored;
    result.path = path;
    result.arrival = PhasePoint::new(y[0], y[1]);
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub resolution: usize,
    pub estimate: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub rows: Vec<RefinementRow>,
    /// Each finer estimate is at most the coarser one plus its slack.
    pub antitone: bool,
    /// First-order Richardson extrapolation in the cell size from the two
    /// finest rungs.
    pub extrapolated: f64,
    pub converged: bool,
}

impl RefinementStudy {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "resolution,estimate,slack")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.resolution, r.estimate, r.slack)?;
        }
        Ok(())
    }
}

/// Run the search on each rung of `ladder` (coarse to fine).
pub fn refine_study(
    start: &PhasePoint,
    goal: &Goal,
    params: &PhysParams,
    ladder: &[GridSpec],
    exec: Execution,
) -> Result<RefinementStudy> {
    if ladder.len() < 3 {
        return Err(Error::InvalidGrid(format!(
            "a refinement ladder needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    if ladder.windows(2).any(|w| w[1].n <= w[0].n) {
        return Err(Error::InvalidGrid("ladder resolutions must increase".into()));
    }
    let mut rows = Vec::with_capacity(ladder.len());
    for spec in ladder {
        let r = min_time_grid(start, goal, spec, params, exec)?;
        rows.push(RefinementRow {
            resolution: spec.n,
            estimate: r.estimate,
            slack: r.slack,
        });
    }
    let antitone = rows
        .windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + w[0].slack);
    let [.., c, f] = rows[..] else { unreachable!() };
    let (hc, hf) = (1.0 / c.resolution as f64, 1.0 / f.resolution as f64);
    let extrapolated = f.estimate + (f.estimate - c.estimate) * hf / (hc - hf);
    let converged = antitone && (c.estimate - f.estimate).abs() <= c.slack + f.slack;
    Ok(RefinementStudy {
        rows,
        antitone,
        extrapolated,
        converged,
    })
}
