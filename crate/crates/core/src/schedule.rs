//! Control schedules: finitely many impulses plus a piecewise-smooth part.
//!
//! The same container describes the angle control θ(t) of the
//! two-dimensional system, the rate control v(t) with `θ̇ = ω v`, and the
//! physical drive u(t). Impulses are always stored as the rotation angle Δθ
//! they produce, independent of the signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    /// θ(t) itself; jumps are implied by piece boundaries.
    Theta,
    /// v(t) with `θ̇ = ω v`.
    V,
    /// The physical control u(t).
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Impulse {
    pub t: f64,
    pub dtheta: f64,
}

/// Samples of an analytic signal, interpolated with a clamped cubic spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampledRepr", into = "SampledRepr")]
pub struct Sampled {
    spline: CubicSpline,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampledRepr {
    t: Vec<f64>,
    values: Vec<f64>,
    #[serde(default = "cubic")]
    interpolation: String,
}

fn cubic() -> String {
    "cubic".into()
}

impl TryFrom<SampledRepr> for Sampled {
    type Error = String;

    fn try_from(r: SampledRepr) -> std::result::Result<Self, String> {
        if r.interpolation != "cubic" {
            return Err(format!("unsupported interpolation '{}'", r.interpolation));
        }
        Ok(Self {
            spline: CubicSpline::new(r.t, r.values)?,
        })
    }
}

impl From<Sampled> for SampledRepr {
    fn from(s: Sampled) -> Self {
        SampledRepr {
            t: s.spline.times().to_vec(),
            values: s.spline.values().to_vec(),
            interpolation: cubic(),
        }
    }
}

impl Sampled {
    pub fn new(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            spline: CubicSpline::new(t, values).map_err(Error::InvalidSchedule)?,
        })
    }

    pub fn spline(&self) -> &CubicSpline {
        &self.spline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PieceKind {
    Constant(f64),
    Sampled(Sampled),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PieceRepr", into = "PieceRepr")]
pub struct SmoothPiece {
    pub t0: f64,
    pub t1: f64,
    pub kind: PieceKind,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Constant,
    Sampled,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceRepr {
    t0: f64,
    t1: f64,
    kind: KindTag,
    data: serde_json::Value,
}

impl TryFrom<PieceRepr> for SmoothPiece {
    type Error = String;

    fn try_from(r: PieceRepr) -> std::result::Result<Self, String> {
        let kind = match r.kind {
            KindTag::Constant => PieceKind::Constant(
                r.data
                    .as_f64()
                    .ok_or_else(|| "constant piece needs a numeric 'data'".to_string())?,
            ),
            KindTag::Sampled => PieceKind::Sampled(
                serde_json::from_value(r.data).map_err(|e| e.to_string())?,
            ),
        };
        Ok(SmoothPiece {
            t0: r.t0,
            t1: r.t1,
            kind,
        })
    }
}

impl From<SmoothPiece> for PieceRepr {
    fn from(p: SmoothPiece) -> Self {
        let (kind, data) = match p.kind {
            PieceKind::Constant(c) => (KindTag::Constant, serde_json::json!(c)),
            PieceKind::Sampled(s) => (
                KindTag::Sampled,
                serde_json::to_value(s).expect("sampled piece serializes"),
            ),
        };
        PieceRepr {
            t0: p.t0,
            t1: p.t1,
            kind,
            data,
        }
    }
}

impl SmoothPiece {
    pub fn constant(t0: f64, t1: f64, value: f64) -> Self {
        Self {
            t0,
            t1,
            kind: PieceKind::Constant(value),
        }
    }

    pub fn sampled(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Sampled::new(t, values)?;
        Ok(Self {
            t0: s.spline.start(),
            t1: s.spline.end(),
            kind: PieceKind::Sampled(s),
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        match &self.kind {
            PieceKind::Constant(c) => *c,
            PieceKind::Sampled(s) => s.spline.eval(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match &self.kind {
            PieceKind::Constant(_) => 0.0,
            PieceKind::Sampled(s) => s.spline.derivative(t),
        }
    }
}

/// Impulses and smooth pieces on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSchedule {
    pub signal: Signal,
    pub horizon: f64,
    #[serde(default)]
    pub impulses: Vec<Impulse>,
    #[serde(default)]
    pub smooth: Vec<SmoothPiece>,
}

/// A maximal interval on which the smooth control is one fixed piece (or absent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub piece: Option<usize>,
}

impl ControlSchedule {
    pub fn new(signal: Signal, horizon: f64) -> Self {
        Self {
            signal,
            horizon,
            impulses: Vec::new(),
            smooth: Vec::new(),
        }
    }

    /// θ(t) ≡ value on `[0, horizon]`.
    pub fn constant_theta(value: f64, horizon: f64) -> Self {
        let mut s = Self::new(Signal::Theta, horizon);
        if horizon > 0.0 {
            s.smooth.push(SmoothPiece::constant(0.0, horizon, value));
        }
        s
    }

    /// Piecewise-constant θ from consecutive `(duration, value)` pairs.
    /// Zero-length pieces are dropped.
    pub fn piecewise_theta(pieces: &[(f64, f64)]) -> Self {
        let mut t = 0.0;
        let mut smooth = Vec::new();
        for &(dur, value) in pieces {
            if dur > 0.0 {
                smooth.push(SmoothPiece::constant(t, t + dur, value));
                t += dur;
            }
        }
        Self {
            signal: Signal::Theta,
            horizon: t,
            impulses: Vec::new(),
            smooth,
        }
    }

    pub fn with_impulse(mut self, t: f64, dtheta: f64) -> Self {
        self.impulses.push(Impulse { t, dtheta });
        self
    }

    pub fn with_piece(mut self, piece: SmoothPiece) -> Self {
        self.smooth.push(piece);
        self
    }

    fn time_slack(&self) -> f64 {
        1e-12 * self.horizon.max(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon {} must be finite and >= 0", self.horizon));
        }
        let eps = self.time_slack();
        let mut prev = 0.0;
        for imp in &self.impulses {
            if !(imp.t.is_finite() && imp.dtheta.is_finite()) {
                return bad("non-finite impulse".into());
            }
            if imp.t < -eps || imp.t > self.horizon + eps {
                return bad(format!("impulse at t = {} outside [0, {}]", imp.t, self.horizon));
            }
            if imp.t < prev {
                return bad("impulse times must be nondecreasing".into());
            }
            prev = imp.t;
        }
        let mut prev_end = 0.0;
        for (i, p) in self.smooth.iter().enumerate() {
            if !(p.t0.is_finite() && p.t1.is_finite()) || p.t1 < p.t0 {
                return bad(format!("piece {i} has invalid interval [{}, {}]", p.t0, p.t1));
            }
            if p.t0 < -eps || p.t1 > self.horizon + eps {
                return bad(format!("piece {i} leaves [0, {}]", self.horizon));
            }
            if p.t0 < prev_end - eps {
                return bad(format!("piece {i} overlaps its predecessor"));
            }
            match &p.kind {
                PieceKind::Constant(c) if !c.is_finite() => {
                    return bad(format!("piece {i} has a non-finite value"));
                }
                PieceKind::Sampled(s) => {
                    let sp = s.spline();
                    if sp.start() > p.t0 + eps || sp.end() < p.t1 - eps {
                        return bad(format!("samples of piece {i} do not cover its interval"));
                    }
                }
                _ => {}
            }
            prev_end = p.t1;
        }
        if self.signal == Signal::Theta {
            if !self.impulses.is_empty() {
                return bad("θ schedules encode jumps through their pieces, not impulses".into());
            }
            if self.horizon > 0.0 {
                let mut t = 0.0;
                for p in &self.smooth {
                    if (p.t0 - t).abs() > eps {
                        return bad(format!("θ undefined on ({t}, {})", p.t0));
                    }
                    t = p.t1;
                }
                if (t - self.horizon).abs() > eps {
                    return bad(format!("θ undefined on ({t}, {})", self.horizon));
                }
            }
        }
        Ok(())
    }

    /// Sorted distinct times at which the control may be non-smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, self.horizon];
        pts.extend(self.impulses.iter().map(|i| i.t.clamp(0.0, self.horizon)));
        for p in &self.smooth {
            pts.push(p.t0.clamp(0.0, self.horizon));
            pts.push(p.t1.clamp(0.0, self.horizon));
        }
        pts.sort_by(f64::total_cmp);
        let eps = self.time_slack();
        let mut out: Vec<f64> = Vec::with_capacity(pts.len());
        for t in pts {
            match out.last() {
                Some(&last) if t - last <= eps => {}
                _ => out.push(t),
            }
        }
        if let Some(last) = out.last_mut() {
            *last = self.horizon;
        }
        out
    }

    /// Partition of `[0, horizon]` at the breakpoints, each tagged with the
    /// smooth piece active on it.
    pub fn segments(&self) -> Vec<Segment> {
        let pts = self.breakpoints();
        pts.windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let piece = self.smooth.iter().position(|p| p.t0 <= mid && mid <= p.t1);
                Segment {
                    t0: w[0],
                    t1: w[1],
                    piece,
                }
            })
            .collect()
    }

    /// Impulses at time `t` (within slack), in stored order.
    pub fn impulses_at(&self, t: f64) -> impl Iterator<Item = &Impulse> {
        let eps = self.time_slack();
        self.impulses
            .iter()
            .filter(move |i| (i.t.clamp(0.0, self.horizon) - t).abs() <= eps)
    }

    /// Smooth value of piece `idx` at `t`, or 0 when no piece is active.
    pub fn smooth_value(&self, piece: Option<usize>, t: f64) -> f64 {
        piece.map_or(0.0, |i| self.smooth[i].value(t))
    }

    pub fn impulse_count(&self) -> usize {
        self.impulses.len()
    }
}
