//! Lorentz model of hyperbolic space.
//!
//! Points live on the upper sheet of the hyperboloid `<x, x>_L = -1/c` in
//! `R^{d+1}`. Ambient vectors are stored as `(space, time)` with the time
//! coordinate last. All geometry is evaluated in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which the exponential map switches to its Taylor expansion.
pub const SMALL_NORM: f64 = 1e-6;

/// Tolerance on `|c<x,x>_L + 1|`, relative to `max(1, c * time^2)`, used to
/// accept externally supplied points.
pub const MANIFOLD_TOL: f64 = 1e-6;

/// Positive curvature magnitude `c`; the space has sectional curvature `-c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::invalid(format!(
                "curvature must be positive and finite, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;

    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// A point on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    space: Vec<f64>,
    time: f64,
}

impl LorentzPoint {
    /// Builds a point from explicit coordinates, checking the hyperboloid
    /// constraint.
    pub fn new(space: Vec<f64>, time: f64, c: Curvature) -> Result<Self> {
        if !time.is_finite() || space.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lorentz point"));
        }
        let p = LorentzPoint { space, time };
        p.validate(c)?;
        Ok(p)
    }

    /// The base point `o = (0, 1/sqrt(c))`.
    pub fn origin(dim: usize, c: Curvature) -> Self {
        LorentzPoint {
            space: vec![0.0; dim],
            time: 1.0 / c.sqrt(),
        }
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(space: Vec<f64>, time: f64) -> Self {
        LorentzPoint { space, time }
    }

    #[inline]
    pub fn space(&self) -> &[f64] {
        &self.space
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Spatial dimension `d`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn space_norm(&self) -> f64 {
        euclidean_norm(&self.space)
    }

    /// Ambient `(d+1)`-vector, time last.
    pub fn to_ambient(&self) -> Vec<f64> {
        let mut v = self.space.clone();
        v.push(self.time);
        v
    }

    /// `|c<x,x>_L + 1|` evaluated with compensated arithmetic, so the result
    /// reflects the stored coordinates rather than evaluation round-off.
    pub fn residual(&self, c: Curvature) -> f64 {
        let mut acc = CompensatedSum::default();
        for &s in &self.space {
            acc.add_product(s, s);
        }
        acc.add_product(-self.time, self.time);
        let (hi, lo) = acc.parts();
        // c * (hi + lo) + 1, keeping the low part
        let scaled = c.get().mul_add(hi, 1.0);
        (scaled + c.get() * lo).abs()
    }

    pub fn validate(&self, c: Curvature) -> Result<()> {
        if self.time <= 0.0 {
            return Err(Error::OffManifold {
                residual: f64::INFINITY,
            });
        }
        let residual = self.residual(c);
        let scale = (c.get() * self.time * self.time).max(1.0);
        if residual > MANIFOLD_TOL * scale {
            return Err(Error::OffManifold { residual });
        }
        Ok(())
    }
}

/// A tangent vector at the origin. Its time component is identically zero,
/// so only the spatial part is stored and the induced norm is Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentAtOrigin {
    space: Vec<f64>,
}

impl TangentAtOrigin {
    pub fn new(space: Vec<f64>) -> Result<Self> {
        if space.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tangent vector"));
        }
        Ok(TangentAtOrigin { space })
    }

    pub fn zeros(dim: usize) -> Self {
        TangentAtOrigin { space: vec![0.0; dim] }
    }

    #[inline]
    pub fn space(&self) -> &[f64] {
        &self.space
    }

    pub fn into_space(self) -> Vec<f64> {
        self.space
    }

    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.space)
    }

    pub fn scaled(&self, k: f64) -> TangentAtOrigin {
        TangentAtOrigin {
            space: self.space.iter().map(|v| v * k).collect(),
        }
    }
}

/// Lorentzian inner product of two ambient vectors (time last):
/// `<x_space, y_space> - x_time * y_time`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "lorentz_inner",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Empty("ambient vector"));
    }
    let d = x.len() - 1;
    Ok(dot(&x[..d], &y[..d]) - x[d] * y[d])
}

/// Inner product of two hyperboloid points.
pub fn point_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_same_dim(x, y)?;
    Ok(dot(&x.space, &y.space) - x.time * y.time)
}

/// Completes a spatial vector to the hyperboloid: `time = sqrt(1/c + |space|^2)`.
pub fn lift_spatial(space: Vec<f64>, c: Curvature) -> Result<LorentzPoint> {
    if space.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spatial vector"));
    }
    let n = euclidean_norm(&space);
    let time = (1.0 / c.get() + n * n).sqrt();
    if !time.is_finite() {
        return Err(Error::NonFinite("lifted time coordinate"));
    }
    Ok(LorentzPoint { space, time })
}

/// Exponential map at the origin.
pub fn exp_map_origin(v: &TangentAtOrigin, c: Curvature) -> Result<LorentzPoint> {
    let sqrt_c = c.sqrt();
    let norm = v.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("tangent vector"));
    }
    let z = sqrt_c * norm;
    let (cosh_z, sinhc_z) = if norm < SMALL_NORM {
        let z2 = z * z;
        (1.0 + 0.5 * z2, 1.0 + z2 / 6.0)
    } else {
        (z.cosh(), z.sinh() / z)
    };
    let time = cosh_z / sqrt_c;
    let space: Vec<f64> = v.space.iter().map(|s| sinhc_z * s).collect();
    if !time.is_finite() || space.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("exponential map output"));
    }
    Ok(LorentzPoint { space, time })
}

/// Logarithmic map at the origin (inverse of [`exp_map_origin`]).
pub fn log_map_origin(x: &LorentzPoint, c: Curvature) -> Result<TangentAtOrigin> {
    let r = radial_distance(x, c)?;
    let n = x.space_norm();
    if n == 0.0 {
        return Ok(TangentAtOrigin::zeros(x.dim()));
    }
    let k = r / n;
    Ok(TangentAtOrigin {
        space: x.space.iter().map(|s| s * k).collect(),
    })
}

/// Geodesic distance `(1/sqrt(c)) * acosh(-c<x,y>_L)`.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint, c: Curvature) -> Result<f64> {
    check_same_dim(x, y)?;
    x.validate(c)?;
    y.validate(c)?;
    Ok(distance_unchecked(x, y, c))
}

/// Distance without re-validating the points. Both must be on the
/// hyperboloid for `c` and share a dimension.
pub(crate) fn distance_unchecked(x: &LorentzPoint, y: &LorentzPoint, c: Curvature) -> f64 {
    let inner = dot(&x.space, &y.space) - x.time * y.time;
    acosh_clamped(-c.get() * inner) / c.sqrt()
}

/// Distance from the origin, `(1/sqrt(c)) * acosh(sqrt(c) * x_time)`.
pub fn radial_distance(x: &LorentzPoint, c: Curvature) -> Result<f64> {
    x.validate(c)?;
    Ok(acosh_clamped(c.sqrt() * x.time) / c.sqrt())
}

/// Point at fraction `t` along the geodesic from the origin to `target`.
pub fn geodesic_point_from_origin(target: &LorentzPoint, t: f64, c: Curvature) -> Result<LorentzPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "geodesic parameter must lie in [0, 1], got {t}"
        )));
    }
    let v = log_map_origin(target, c)?;
    exp_map_origin(&v.scaled(t), c)
}

#[inline]
pub(crate) fn acosh_clamped(a: f64) -> f64 {
    a.max(1.0).acosh()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm that neither underflows nor overflows for extreme inputs.
pub fn euclidean_norm(v: &[f64]) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    if sq.is_finite() && sq > 1e-280 {
        return sq.sqrt();
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

fn check_same_dim(x: &LorentzPoint, y: &LorentzPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            what: "lorentz point",
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Error-free accumulation of products (TwoProduct + TwoSum).
#[derive(Default)]
struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let s = self.hi + p;
        let bp = s - self.hi;
        let s_err = (self.hi - (s - bp)) + (p - bp);
        self.hi = s;
        self.lo += p_err + s_err;
    }

    fn parts(&self) -> (f64, f64) {
        (self.hi, self.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    fn tangent(v: &[f64]) -> TangentAtOrigin {
        TangentAtOrigin::new(v.to_vec()).unwrap()
    }

    #[test]
    fn curvature_rejects_nonpositive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
    }

    #[test]
    fn inner_product_at_origin() {
        let o = LorentzPoint::origin(3, c1());
        assert_eq!(lorentz_inner(&o.to_ambient(), &o.to_ambient()).unwrap(), -1.0);
    }

    #[test]
    fn inner_product_unit_geodesic_point() {
        let x = [1.1752012, 1.5430806];
        let v = lorentz_inner(&x, &x).unwrap();
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn inner_product_dimension_mismatch() {
        assert!(matches!(
            lorentz_inner(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lift_examples() {
        let o = lift_spatial(vec![0.0], c1()).unwrap();
        assert_eq!(o.time(), 1.0);
        let p = lift_spatial(vec![3.0, 4.0], c1()).unwrap();
        assert_abs_diff_eq!(p.time(), 26f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.time(), 5.0990195, epsilon = 1e-7);
        let q = lift_spatial(vec![0.6], Curvature::new(4.0).unwrap()).unwrap();
        assert_abs_diff_eq!(q.time(), 0.781025, epsilon = 1e-6);
        assert!(q.validate(Curvature::new(4.0).unwrap()).is_ok());
        assert!(lift_spatial(vec![f64::NAN], c1()).is_err());
    }

    #[test]
    fn exp_map_of_zero_is_origin() {
        let x = exp_map_origin(&TangentAtOrigin::zeros(4), c1()).unwrap();
        assert_eq!(x, LorentzPoint::origin(4, c1()));
        let c4 = Curvature::new(4.0).unwrap();
        assert_eq!(
            exp_map_origin(&TangentAtOrigin::zeros(2), c4).unwrap(),
            LorentzPoint::origin(2, c4)
        );
    }

    #[test]
    fn exp_map_unit_vector() {
        let x = exp_map_origin(&tangent(&[1.0, 0.0]), c1()).unwrap();
        assert_abs_diff_eq!(x.space()[0], 1f64.sinh(), epsilon = 1e-15);
        assert_abs_diff_eq!(x.space()[0], 1.1752012, epsilon = 1e-7);
        assert_eq!(x.space()[1], 0.0);
        assert_abs_diff_eq!(x.time(), 1.5430806, epsilon = 1e-7);
    }

    #[test]
    fn exp_map_preserves_radius() {
        let x = exp_map_origin(&tangent(&[0.3, 0.4]), c1()).unwrap();
        assert_abs_diff_eq!(radial_distance(&x, c1()).unwrap(), 0.5, epsilon = 1e-9);
        let o = LorentzPoint::origin(2, c1());
        assert_abs_diff_eq!(geodesic_distance(&o, &x, c1()).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn distance_examples() {
        let o = LorentzPoint::origin(2, c1());
        assert_eq!(geodesic_distance(&o, &o, c1()).unwrap(), 0.0);
        let x = exp_map_origin(&tangent(&[1.0, 0.0]), c1()).unwrap();
        assert_abs_diff_eq!(geodesic_distance(&o, &x, c1()).unwrap(), 1.0, epsilon = 1e-9);

        let c4 = Curvature::new(4.0).unwrap();
        let o4 = LorentzPoint::origin(2, c4);
        let y = exp_map_origin(&tangent(&[0.15, 0.2]), c4).unwrap();
        assert_abs_diff_eq!(geodesic_distance(&o4, &y, c4).unwrap(), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn distance_rejects_off_manifold_points() {
        let good = LorentzPoint::origin(1, c1());
        let bad = LorentzPoint::from_parts_unchecked(vec![1.0], 1.0);
        assert!(matches!(
            geodesic_distance(&good, &bad, c1()),
            Err(Error::OffManifold { .. })
        ));
        assert!(LorentzPoint::new(vec![1.0], 1.0, c1()).is_err());
    }

    #[test]
    fn radial_distance_examples() {
        let o = LorentzPoint::origin(1, c1());
        assert_eq!(radial_distance(&o, c1()).unwrap(), 0.0);
        let x = LorentzPoint::new(vec![1.1752012], 1.5430806, c1()).unwrap();
        // the coordinates above are rounded to 7 digits, so the point itself
        // is only accurate to ~1e-7
        assert_abs_diff_eq!(radial_distance(&x, c1()).unwrap(), 1.0, epsilon = 1e-6);
        let exact = LorentzPoint::new(vec![1f64.sinh()], 1f64.cosh(), c1()).unwrap();
        assert_abs_diff_eq!(radial_distance(&exact, c1()).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn radial_distance_is_monotone() {
        let mut prev = -1.0;
        for k in 0..50 {
            let p = lift_spatial(vec![0.1 * k as f64, 0.0], c1()).unwrap();
            let r = radial_distance(&p, c1()).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn geodesic_point_endpoints_and_midpoint() {
        let target = exp_map_origin(&tangent(&[1.0, 0.0]), c1()).unwrap();
        let start = geodesic_point_from_origin(&target, 0.0, c1()).unwrap();
        assert_eq!(start, LorentzPoint::origin(2, c1()));
        let end = geodesic_point_from_origin(&target, 1.0, c1()).unwrap();
        for (a, b) in end.to_ambient().iter().zip(target.to_ambient()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        let far = exp_map_origin(&tangent(&[0.0, 2.0]), c1()).unwrap();
        let mid = geodesic_point_from_origin(&far, 0.5, c1()).unwrap();
        assert_abs_diff_eq!(radial_distance(&mid, c1()).unwrap(), 1.0, epsilon = 1e-6);
        assert!(geodesic_point_from_origin(&far, 1.5, c1()).is_err());
        assert!(geodesic_point_from_origin(&far, -0.1, c1()).is_err());
    }

    #[test]
    fn tiny_tangents_do_not_produce_nan() {
        let mut eps = 1e-1;
        while eps > 1e-300 {
            let x = exp_map_origin(&tangent(&[eps, -eps]), c1()).unwrap();
            assert!(x.time().is_finite());
            let gap: f64 = x
                .to_ambient()
                .iter()
                .zip(LorentzPoint::origin(2, c1()).to_ambient())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(gap <= 4.0 * eps);
            eps *= 1e-3;
        }
    }

    #[test]
    fn norm_survives_extreme_scales() {
        assert_eq!(euclidean_norm(&[3e-300, 4e-300]), 5e-300);
        assert_abs_diff_eq!(euclidean_norm(&[3e200, 4e200]) / 5e200, 1.0, epsilon = 1e-15);
    }

    fn arb_tangent(max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
        (prop::collection::vec(-1.0f64..1.0, 4), 0.0..max_norm).prop_map(|(dir, r)| {
            let n = euclidean_norm(&dir).max(1e-12);
            dir.iter().map(|x| x / n * r).collect()
        })
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in arb_tangent(5.0), b in arb_tangent(5.0)) {
            let x = exp_map_origin(&tangent(&a), c1()).unwrap();
            let y = exp_map_origin(&tangent(&b), c1()).unwrap();
            let dxy = geodesic_distance(&x, &y, c1()).unwrap();
            let dyx = geodesic_distance(&y, &x, c1()).unwrap();
            prop_assert_eq!(dxy.to_bits(), dyx.to_bits());
        }

        #[test]
        fn inner_product_is_symmetric(a in prop::collection::vec(-10.0f64..10.0, 5), b in prop::collection::vec(-10.0f64..10.0, 5)) {
            prop_assert_eq!(lorentz_inner(&a, &b).unwrap().to_bits(), lorentz_inner(&b, &a).unwrap().to_bits());
        }

        #[test]
        fn log_inverts_exp(a in arb_tangent(6.0)) {
            let x = exp_map_origin(&tangent(&a), c1()).unwrap();
            let back = log_map_origin(&x, c1()).unwrap();
            for (u, v) in a.iter().zip(back.space()) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }
    }
}
