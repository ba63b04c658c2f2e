//! Qubit state representations and the conversions between them.
//!
//! A density matrix `ρ = ½(I + r·σ)` is identified with its Bloch vector
//! `r`. Because the coherent drive rotates `(r_y, r_z)` about the x axis,
//! most of the crate works in cylindrical coordinates `(r_x, R, θ)` with
//! `r_y = R cos θ`, `r_z = R sin θ`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Slack allowed on state-validity checks (ball membership, trace, eigenvalues).
pub const STATE_TOL: f64 = 1e-12;

/// Physical constants of the driven qubit (ħ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParams {
    /// Transition frequency ω.
    pub omega: f64,
    /// Coupling κ of the coherent control.
    pub kappa: f64,
    /// Decay rate γ.
    pub gamma: f64,
}

impl PhysParams {
    pub fn new(omega: f64, kappa: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            omega,
            kappa,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega", self.omega),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.ratio().is_finite() {
            return Err(Error::InvalidParams("gamma/omega is not finite".into()));
        }
        Ok(())
    }

    /// γ/ω.
    pub fn ratio(&self) -> f64 {
        self.gamma / self.omega
    }

    /// Largest target radius for which the explicit protocol is guaranteed,
    /// `1 - (π/2)(γ/ω)`.
    pub fn feasibility_cap(&self) -> f64 {
        1.0 - 0.5 * PI * self.ratio()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlochState {
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
}

impl BlochState {
    /// Checked constructor: rejects non-finite input and vectors outside the ball.
    pub fn new(r_x: f64, r_y: f64, r_z: f64) -> Result<Self> {
        let s = Self { r_x, r_y, r_z };
        s.validate()?;
        Ok(s)
    }

    pub const fn from_array(r: [f64; 3]) -> Self {
        Self {
            r_x: r[0],
            r_y: r[1],
            r_z: r[2],
        }
    }

    pub const fn to_array(self) -> [f64; 3] {
        [self.r_x, self.r_y, self.r_z]
    }

    pub fn validate(&self) -> Result<()> {
        let [x, y, z] = self.to_array();
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite Bloch vector {self:?}")));
        }
        let n = self.norm();
        if n > 1.0 + STATE_TOL {
            return Err(Error::InvalidState(format!("|r| = {n} lies outside the Bloch ball")));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        (self.r_x * self.r_x + self.r_y * self.r_y + self.r_z * self.r_z).sqrt()
    }

    /// tr ρ² = (1 + |r|²)/2.
    pub fn purity(&self) -> f64 {
        purity(self)
    }

    pub fn distance(&self, other: &BlochState) -> f64 {
        let d = [
            self.r_x - other.r_x,
            self.r_y - other.r_y,
            self.r_z - other.r_z,
        ];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// Cylindrical image `(r_x, R, θ)` of a Bloch vector about the x axis.
///
/// `r_yz` is the signed cylindrical radius R. Canonical states have
/// `r_yz >= 0`; integration of the two-dimensional system may produce
/// negative values, which represent the same Bloch vector as
/// `(-R, θ + π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylState {
    pub r_x: f64,
    pub r_yz: f64,
    pub theta: f64,
}

impl CylState {
    pub const fn new(r_x: f64, r_yz: f64, theta: f64) -> Self {
        Self { r_x, r_yz, theta }
    }

    pub fn phase(&self) -> PhasePoint {
        PhasePoint::new(self.r_x, self.r_yz)
    }

    /// The reflection `(R, θ) ↦ (-R, θ + π)`; an involution up to 2π in θ.
    pub fn reflect(&self) -> Self {
        Self::new(self.r_x, -self.r_yz, self.theta + PI)
    }

    /// Map to `R >= 0`, reflecting if needed.
    pub fn canonical(&self) -> Self {
        if self.r_yz < 0.0 {
            self.reflect()
        } else {
            *self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_x.is_finite() && self.r_yz.is_finite() && self.theta.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite cylindrical state {self:?}")));
        }
        let n2 = self.r_x * self.r_x + self.r_yz * self.r_yz;
        if n2 > 1.0 + STATE_TOL {
            return Err(Error::InvalidState(format!(
                "r_x² + R² = {n2} lies outside the unit disk"
            )));
        }
        Ok(())
    }
}

/// A point `(r_x, R)` of the two-dimensional phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePoint {
    pub r_x: f64,
    pub r_yz: f64,
}

impl PhasePoint {
    pub const fn new(r_x: f64, r_yz: f64) -> Self {
        Self { r_x, r_yz }
    }

    pub fn norm(&self) -> f64 {
        self.r_x.hypot(self.r_yz)
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        (self.r_x - other.r_x).hypot(self.r_yz - other.r_yz)
    }

    pub const fn to_array(self) -> [f64; 2] {
        [self.r_x, self.r_yz]
    }

    pub const fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// 2×2 Hermitian unit-trace matrix stored as its two diagonal entries and
/// the upper off-diagonal element `ρ₀₁ = re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityMatrix {
    pub rho00: f64,
    pub rho11: f64,
    pub rho01_re: f64,
    pub rho01_im: f64,
}

impl DensityMatrix {
    pub fn new(rho00: f64, rho11: f64, rho01_re: f64, rho01_im: f64) -> Result<Self> {
        let m = Self {
            rho00,
            rho11,
            rho01_re,
            rho01_im,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn trace(&self) -> f64 {
        self.rho00 + self.rho11
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.rho00 + self.rho11);
        let half_gap = (0.5 * (self.rho00 - self.rho11))
            .hypot(self.rho01_re.hypot(self.rho01_im));
        [mean - half_gap, mean + half_gap]
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.rho00, self.rho11, self.rho01_re, self.rho01_im];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite entry".into()));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} != 1")));
        }
        let lo = self.eigenvalues()[0];
        if lo < -STATE_TOL {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {lo}")));
        }
        Ok(())
    }
}

/// `r_i = tr(ρ σ_i)`.
pub fn density_to_bloch(rho: &DensityMatrix) -> Result<BlochState> {
    rho.validate()?;
    Ok(BlochState {
        r_x: 2.0 * rho.rho01_re,
        r_y: -2.0 * rho.rho01_im,
        r_z: rho.rho00 - rho.rho11,
    })
}

/// `ρ = ½(I + r·σ)`.
pub fn bloch_to_density(r: &BlochState) -> DensityMatrix {
    DensityMatrix {
        rho00: 0.5 * (1.0 + r.r_z),
        rho11: 0.5 * (1.0 - r.r_z),
        rho01_re: 0.5 * r.r_x,
        rho01_im: -0.5 * r.r_y,
    }
}

/// `R = √(r_y² + r_z²)`, `θ = atan2(r_z, r_y)`; on the axis θ is set to 0.
pub fn bloch_to_cyl(r: &BlochState) -> CylState {
    let big_r = r.r_y.hypot(r.r_z);
    let theta = if big_r == 0.0 {
        0.0
    } else {
        r.r_z.atan2(r.r_y)
    };
    CylState::new(r.r_x, big_r, theta)
}

pub fn cyl_to_bloch(s: &CylState) -> BlochState {
    let (sin, cos) = s.theta.sin_cos();
    BlochState {
        r_x: s.r_x,
        r_y: s.r_yz * cos,
        r_z: s.r_yz * sin,
    }
}

pub fn purity(r: &BlochState) -> f64 {
    let n = r.norm();
    0.5 * (1.0 + n * n)
}

/// Bloch radius of the purity level `P`, `√(2P − 1)`.
pub fn mu_of_purity(p: f64) -> Result<f64> {
    if !(p.is_finite() && p >= 0.5 - STATE_TOL && p <= 1.0 + STATE_TOL) {
        return Err(Error::PurityOutOfRange(p));
    }
    Ok((2.0 * p - 1.0).clamp(0.0, 1.0).sqrt())
}

/// Inverse of [`mu_of_purity`].
pub fn purity_of_mu(mu: f64) -> f64 {
    0.5 * (1.0 + mu * mu)
}

/// Reduce an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

/// `sgn` with the convention `sgn(0) = +1`.
pub fn sign_tie_plus(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}
