use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qtmin_core::bloch::{mu_of_purity, purity_of_mu};
use qtmin_core::bounds::{bounds_from_radii, figure1_grid, TimeBounds};
use qtmin_core::dynamics::{integrate, Coordinates, IntegrateOptions, System};
use qtmin_core::extremal::{shoot, ShootReport};
use qtmin_core::ode::Tolerance;
use qtmin_core::oracle::{
    min_time_grid, refine_study, Goal, OracleResult, RefinementRow, RefinementStudy,
};
use qtmin_core::protocol::{
    synthesize, validate, validate_batch, ProtocolPlan, SynthesisOptions, ValidationOptions,
    ValidationReport,
};
use qtmin_core::{BlochState, ControlSchedule, Error, PhasePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_UNREACHABLE: u8 = 3;
pub const EXIT_ERROR: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn error(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_ERROR,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoFiniteTime { .. } => EXIT_UNREACHABLE,
            Error::InfeasibleTarget { .. } => EXIT_PARTIAL,
            _ => EXIT_ERROR,
        };
        let message = match e {
            Error::NoFiniteTime { .. } => format!("target is unreachable in finite time: {e}"),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Self::error(message)
    }
}

/// A command's JSON report, the files it wants written and its exit code.
pub struct Outcome {
    pub report: String,
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub code: u8,
}

impl Outcome {
    fn new<T: Serialize>(report: &T) -> Self {
        Self {
            report: serde_json::to_string_pretty(report).expect("reports serialize"),
            files: Vec::new(),
            code: 0,
        }
    }

    fn file(mut self, name: &'static str, bytes: Vec<u8>) -> Self {
        self.files.push((name, bytes));
        self
    }

    fn code(mut self, code: u8) -> Self {
        self.code = code;
        self
    }
}

fn tolerance(cfg: &RunConfig) -> Tolerance {
    Tolerance {
        rtol: cfg.tolerances.rtol,
        atol: cfg.tolerances.atol,
    }
}

fn csv(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory");
    buf
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("reports serialize");
    s.push(b'\n');
    s
}

pub fn bounds(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let mu0 = cfg.problem.start()?.radius()?;
    let mu1 = cfg.problem.target()?.radius()?;
    let b = bounds_from_radii(mu0, mu1, &cfg.params)?;
    let out = Outcome::new(&b);
    Ok(if b.feasible_upper {
        out
    } else {
        out.code(EXIT_PARTIAL)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolReport {
    pub bounds: TimeBounds,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan: Option<ProtocolPlan>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairOutcome {
    pub r0: BlochState,
    pub r1: BlochState,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub total_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub endpoint_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchReport {
    pub seed: u64,
    pub pairs: usize,
    pub passed: usize,
    pub max_endpoint_error: f64,
    pub results: Vec<PairOutcome>,
}

fn validation_options(cfg: &RunConfig) -> ValidationOptions {
    ValidationOptions {
        tol: cfg.tolerances.endpoint,
        integration: tolerance(cfg),
        synthesis: SynthesisOptions {
            samples_per_phase: cfg.protocol.samples_per_phase,
            ..SynthesisOptions::default()
        },
    }
}

/// Uniform point of the ball of radius `rmax`.
fn ball_point(rng: &mut ChaCha8Rng, rmax: f64) -> BlochState {
    loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 <= 1.0 {
            return BlochState::from_array(v.map(|c| c * rmax));
        }
    }
}

pub fn protocol(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let opts = validation_options(cfg);
    if cfg.protocol.random_pairs > 0 {
        return protocol_batch(cfg, &opts);
    }
    let r0 = full_state(cfg, "start")?;
    let r1 = full_state(cfg, "target")?;
    let b = bounds_from_radii(r0.norm(), r1.norm(), &cfg.params)?;
    if !b.feasible_upper {
        let report = ProtocolReport {
            bounds: b,
            plan: None,
            validation: None,
        };
        return Ok(Outcome::new(&report).code(EXIT_PARTIAL));
    }
    let p = synthesize(
        &r0,
        &r1,
        cfg.problem.theta0,
        cfg.problem.theta1,
        &cfg.params,
        &opts.synthesis,
    )?;
    let v = validate(&p, &cfg.params, &opts)?;
    let report = ProtocolReport {
        bounds: b,
        plan: Some(p.plan.clone()),
        validation: Some(v),
    };
    let mut out = Outcome::new(&report)
        .file("theta_schedule.json", json(&p.theta))
        .file("v_schedule.json", json(&p.v));
    if let Some(u) = &p.u {
        out = out.file("u_schedule.json", json(u));
    }
    Ok(out)
}

fn protocol_batch(cfg: &RunConfig, opts: &ValidationOptions) -> Result<Outcome, Failure> {
    let cap = cfg.params.feasibility_cap();
    if cap <= 0.0 {
        return Err(Error::InfeasibleTarget { mu1: 0.0, cap }.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<_> = (0..cfg.protocol.random_pairs)
        .map(|_| (ball_point(&mut rng, 1.0), ball_point(&mut rng, cap)))
        .collect();
    let reports = validate_batch(&pairs, &cfg.params, opts, cfg.execution);
    let results: Vec<PairOutcome> = pairs
        .iter()
        .zip(reports)
        .map(|(&(r0, r1), r)| match r {
            Ok(v) => PairOutcome {
                r0,
                r1,
                total_time: Some(v.total_time),
                endpoint_error: Some(v.endpoint_error),
                error: None,
            },
            Err(e) => PairOutcome {
                r0,
                r1,
                total_time: None,
                endpoint_error: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let passed = results.iter().filter(|r| r.error.is_none()).count();
    let report = BatchReport {
        seed: cfg.seed,
        pairs: results.len(),
        passed,
        max_endpoint_error: results
            .iter()
            .filter_map(|r| r.endpoint_error)
            .fold(0.0, f64::max),
        results,
    };
    let out = Outcome::new(&report);
    Ok(if passed == report.pairs {
        out
    } else {
        out.code(EXIT_ERROR)
    })
}

fn full_state(cfg: &RunConfig, which: &str) -> Result<BlochState, Failure> {
    let spec = if which == "start" {
        cfg.problem.start()?
    } else {
        cfg.problem.target()?
    };
    spec.bloch()?.ok_or_else(|| {
        Failure::error(format!(
            "problem.{which} must be a Bloch vector or density matrix"
        ))
    })
}

/// `(r_x, R)` of a state; a bare radius is placed on the axis `r_x = 0`.
fn phase_point(cfg: &RunConfig, which: &str) -> Result<PhasePoint, Failure> {
    let spec = if which == "start" {
        cfg.problem.start()?
    } else {
        cfg.problem.target()?
    };
    Ok(match spec.phase()? {
        Some(p) => p,
        None => PhasePoint::new(0.0, spec.radius()?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateReport {
    pub system: System,
    pub coords: Coordinates,
    pub samples: usize,
    pub final_time: f64,
    pub final_state: [f64; 3],
    pub final_radius: f64,
    pub final_purity: f64,
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let path = cfg
        .simulate
        .schedule
        .as_ref()
        .ok_or_else(|| Failure::error("simulate.schedule is required"))?;
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let schedule: ControlSchedule = serde_json::from_str(&text)
        .map_err(|e| format!("invalid schedule {}: {e}", path.display()))?;
    let r0 = full_state(cfg, "start")?;
    let mut opts = match cfg.simulate.dt {
        Some(dt) if dt > 0.0 => IntegrateOptions::uniform(dt),
        Some(dt) => {
            return Err(Failure::error(format!(
                "simulate.dt = {dt} must be positive"
            )))
        }
        None => IntegrateOptions::default(),
    };
    opts.tol = tolerance(cfg);
    let traj = integrate(cfg.simulate.system, &schedule, &r0, &cfg.params, &opts)?;
    let fin = traj.final_state();
    let radius = match traj.coords {
        Coordinates::Bloch => (fin[0] * fin[0] + fin[1] * fin[1] + fin[2] * fin[2]).sqrt(),
        Coordinates::Cylindrical => fin[0].hypot(fin[1]),
    };
    let report = SimulateReport {
        system: cfg.simulate.system,
        coords: traj.coords,
        samples: traj.len(),
        final_time: traj.final_time(),
        final_state: fin,
        final_radius: radius,
        final_purity: purity_of_mu(radius.min(1.0)),
    };
    Ok(Outcome::new(&report).file("trajectory.csv", csv(|w| traj.write_csv(w))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtremalReport {
    pub start: PhasePoint,
    pub target: PhasePoint,
    pub bounds: TimeBounds,
    pub shot: ShootReport,
}

pub fn extremal(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let start = phase_point(cfg, "start")?;
    let target = phase_point(cfg, "target")?;
    let b = bounds_from_radii(start.norm().min(1.0), target.norm().min(1.0), &cfg.params)?;
    let res = shoot(&start, &target, &cfg.params, &cfg.extremal)?;
    let report = ExtremalReport {
        start,
        target,
        bounds: b,
        shot: res.report(),
    };
    Ok(Outcome::new(&report).file("extremal.csv", csv(|w| res.trajectory.write_csv(w))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleReport {
    pub start: PhasePoint,
    pub goal: Goal,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub study: Option<RefinementStudy>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub result: Option<OracleResult>,
}

pub fn oracle(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let start = phase_point(cfg, "start")?;
    let target = cfg.problem.target()?;
    let goal = match target.phase()? {
        Some(p) => Goal::Point {
            target: p,
            tol: cfg.oracle.goal_tol,
        },
        None => Goal::Purity {
            mu: target.radius()?,
        },
    };
    let ladder = &cfg.oracle.ladder;
    let report = match ladder.len() {
        0 => return Err(Failure::error("oracle.ladder must not be empty")),
        1 => {
            let r = min_time_grid(&start, &goal, &ladder[0], &cfg.params, cfg.execution)?;
            OracleReport {
                start,
                goal,
                study: None,
                result: Some(r),
            }
        }
        2 => {
            return Err(Failure::error(
                "oracle.ladder needs one rung or at least three",
            ))
        }
        _ => OracleReport {
            start,
            goal,
            study: Some(refine_study(
                &start,
                &goal,
                &cfg.params,
                ladder,
                cfg.execution,
            )?),
            result: None,
        },
    };
    let bytes = match (&report.study, &report.result) {
        (Some(s), _) => csv(|w| s.write_csv(w)),
        (None, Some(r)) => {
            let study = RefinementStudy {
                rows: vec![RefinementRow {
                    resolution: r.n,
                    estimate: r.estimate,
                    slack: r.slack,
                }],
                antitone: true,
                extrapolated: r.estimate,
                converged: false,
            };
            csv(|w| study.write_csv(w))
        }
        (None, None) => unreachable!(),
    };
    Ok(Outcome::new(&report).file("oracle.csv", bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure1Report {
    pub n: usize,
    pub p_max: f64,
    pub mu_max: f64,
    /// Largest lower bound on the grid.
    pub max_lower: f64,
    pub max_upper: f64,
}

pub fn figure1(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let g = figure1_grid(
        cfg.params.gamma,
        cfg.params.omega,
        cfg.figure1.n,
        cfg.execution,
    )?;
    let report = Figure1Report {
        n: g.n,
        p_max: g.p_max,
        mu_max: mu_of_purity(g.p_max).map_err(Failure::from)?,
        max_lower: g.rows.iter().map(|r| r.lower).fold(0.0, f64::max),
        max_upper: g.rows.iter().map(|r| r.upper).fold(0.0, f64::max),
    };
    Ok(Outcome::new(&report).file("figure1.csv", csv(|w| g.write_csv(w))))
}

/// Write `bytes` to `dir/name` through a temporary file and a rename, so a
/// reader never sees a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    if let Err(e) = fs::rename(&tmp, &target) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    Ok(target)
}
