//! Entailment cones on the hyperboloid.
//!
//! The cone of a point `x` is the set of points whose exterior angle at `x`
//! (measured against the geodesic from the origin through `x`) does not
//! exceed the half-aperture of `x`. Cones narrow as `x` moves away from the
//! origin.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{dot, Curvature, LorentzPoint};

/// Added under the square root of the exterior-angle denominator.
pub const DENOM_EPS: f64 = 1e-15;

/// Pairs with `|(c<x,y>)^2 - 1|` at or below this are treated as coincident.
pub const COINCIDENT_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    /// Angular-extent constant.
    pub k: f64,
    pub curvature: Curvature,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig {
            k: 0.1,
            curvature: Curvature::default(),
        }
    }
}

impl ConeConfig {
    pub fn new(k: f64, curvature: Curvature) -> Result<Self> {
        if !k.is_finite() || k <= 0.0 {
            return Err(Error::invalid(format!("cone constant must be positive, got {k}")));
        }
        Ok(ConeConfig { k, curvature })
    }
}

/// Half-aperture `asin(min(1, 2K / (sqrt(c) |x_space|)))`.
pub fn half_aperture(x: &LorentzPoint, cfg: &ConeConfig) -> Result<f64> {
    x.validate(cfg.curvature)?;
    aperture_of_norm(x.space_norm(), cfg)
}

pub(crate) fn aperture_of_norm(space_norm: f64, cfg: &ConeConfig) -> Result<f64> {
    if space_norm == 0.0 {
        return Err(Error::DegenerateApex);
    }
    let s = 2.0 * cfg.k / (cfg.curvature.sqrt() * space_norm);
    Ok(if s >= 1.0 { FRAC_PI_2 } else { s.asin() })
}

/// Exterior angle `pi - angle(o, x, y)` at apex `x`.
pub fn exterior_angle(x: &LorentzPoint, y: &LorentzPoint, cfg: &ConeConfig) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            what: "exterior_angle",
            expected: x.dim(),
            got: y.dim(),
        });
    }
    x.validate(cfg.curvature)?;
    y.validate(cfg.curvature)?;
    exterior_angle_unchecked(x, y, cfg.curvature)
}

pub(crate) fn exterior_angle_unchecked(x: &LorentzPoint, y: &LorentzPoint, c: Curvature) -> Result<f64> {
    let x_norm = x.space_norm();
    if x_norm == 0.0 {
        return Err(Error::DegenerateApex);
    }
    let q = c.get() * (dot(x.space(), y.space()) - x.time() * y.time());
    let gap = q * q - 1.0;
    if gap.abs() <= COINCIDENT_GAP {
        return Err(Error::DegeneratePair { gap });
    }
    let numer = y.time() + x.time() * q;
    let denom = x_norm * (gap.max(0.0) + DENOM_EPS).sqrt();
    Ok((numer / denom).clamp(-1.0, 1.0).acos())
}

/// Hinge penalty `max(0, ext(x, y) - aper(x))`.
pub fn cone_violation(x: &LorentzPoint, y: &LorentzPoint, cfg: &ConeConfig) -> Result<f64> {
    let ext = exterior_angle(x, y, cfg)?;
    let aper = aperture_of_norm(x.space_norm(), cfg)?;
    Ok((ext - aper).max(0.0))
}

/// Whether `y` lies inside (or on the boundary of) the cone of `x`.
pub fn cone_contains(x: &LorentzPoint, y: &LorentzPoint, cfg: &ConeConfig) -> Result<bool> {
    Ok(cone_violation(x, y, cfg)? == 0.0)
}
