//! Lorentz (hyperboloid) model of hyperbolic space with curvature -1.
//!
//! Points live on the upper sheet of the hyperboloid embedded in (d+1)-dimensional
//! Minkowski space:
//!
//! ```text
//! H^d = { x in R^{d+1} : <x,x>_L = -1, x_0 > 0 },   <x,y>_L = -x_0 y_0 + sum_i x_i y_i
//! ```
//!
//! The module provides the Minkowski inner product, exponential/logarithmic maps at the
//! origin and at arbitrary points, intrinsic distance, parallel transport from the
//! origin, the Lorentzian centroid, and the derived Mobius-style operations `madd`
//! (hyperbolic addition) and `smul` (hyperbolic scalar multiplication).
//!
//! All computations are in `f64`. Hyperbolic trig arguments are capped at
//! [`ARG_CAP`] and arcosh arguments are clamped to `[1, inf)` so that extreme inputs
//! saturate instead of producing non-finite values.

use crate::error::{GgcfError, Result};

/// Cap on sinh/cosh arguments; larger radii saturate at this value.
pub const ARG_CAP: f64 = 50.0;

/// Absolute tolerance on `|<x,x>_L + 1|` for points produced by this module,
/// scaled by the squared Euclidean norm of the point for far-out points.
pub const MANIFOLD_TOL: f64 = 1e-9;

/// Tolerance on `|<x,u>_L|` when checking that `u` is tangent at `x`.
pub const TANGENCY_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Raw kernels over slices. These skip validation and are shared with the
// model/training hot paths; the typed API below wraps them.
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn k_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn k_norm(a: &[f64]) -> f64 {
    k_dot(a, a).sqrt()
}

#[inline]
pub(crate) fn k_linner(x: &[f64], y: &[f64]) -> f64 {
    let mut s = -x[0] * y[0];
    for i in 1..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[inline]
pub(crate) fn k_lnorm_abs(v: &[f64]) -> f64 {
    k_linner(v, v).abs().sqrt()
}

/// Recompute the time coordinate from the spatial part: x_0 = sqrt(1 + |x_s|^2).
#[inline]
pub(crate) fn k_project(x: &mut [f64]) {
    let s2 = k_dot(&x[1..], &x[1..]);
    x[0] = (1.0 + s2).sqrt();
}

/// exp at the origin: v are spatial tangent coordinates, out has length d+1.
pub(crate) fn k_exp0(v: &[f64], out: &mut [f64]) {
    let r = k_norm(v);
    if r == 0.0 {
        out[0] = 1.0;
        out[1..].fill(0.0);
        return;
    }
    let rc = r.min(ARG_CAP);
    let scale = rc.sinh() / r;
    out[0] = rc.cosh();
    for i in 0..v.len() {
        out[i + 1] = scale * v[i];
    }
}

/// log at the origin: out are spatial tangent coordinates (length d).
///
/// On the manifold arcosh(x_0) = asinh(|x_s|); the asinh form is numerically
/// stable near the origin and is used here.
pub(crate) fn k_log0(x: &[f64], out: &mut [f64]) {
    let xs = &x[1..];
    let s = k_norm(xs);
    if s < 1e-300 {
        out.fill(0.0);
        return;
    }
    let scale = s.asinh() / s;
    for i in 0..xs.len() {
        out[i] = scale * xs[i];
    }
}

/// Intrinsic distance d(x, y) = arcosh(max(-<x,y>_L, 1)).
///
/// Evaluated through the cancellation-free identity
/// `-<x,y>_L - 1 = (|x_s - y_s|^2 - (x_0 - y_0)^2) / 2` (valid on the manifold)
/// and `arcosh(1 + delta) = ln1p(delta + sqrt(delta (delta + 2)))`, which keeps
/// full precision for nearby points where the naive form loses half its digits.
#[inline]
pub(crate) fn k_dist(x: &[f64], y: &[f64]) -> f64 {
    acosh1p(k_dist_delta(x, y).max(0.0))
}

/// `-<x,y>_L - 1` via the difference form; negative values are rounding artifacts.
#[inline]
pub(crate) fn k_dist_delta(x: &[f64], y: &[f64]) -> f64 {
    let dt = x[0] - y[0];
    let mut q = -dt * dt;
    for i in 1..x.len() {
        let t = x[i] - y[i];
        q += t * t;
    }
    0.5 * q
}

/// arcosh(1 + delta) for delta >= 0, stable for small delta.
#[inline]
pub(crate) fn acosh1p(delta: f64) -> f64 {
    (delta + (delta * (delta + 2.0)).sqrt()).ln_1p()
}

/// Parallel transport of the origin-tangent (0, v) to the tangent space at x:
///
/// ```text
/// P_{0->x}(v) = (k, v + k/(1+x_0) * x_s),   k = x_s . v
/// ```
pub(crate) fn k_transport_from_origin(x: &[f64], v: &[f64], out: &mut [f64]) {
    let x0 = x[0];
    let xs = &x[1..];
    let k = k_dot(xs, v);
    let b = k / (1.0 + x0);
    out[0] = k;
    for i in 0..v.len() {
        out[i + 1] = v[i] + b * xs[i];
    }
}

/// exp at x of an ambient tangent u: cosh(r) x + sinh(r)/r * u with r = |u|_L.
pub(crate) fn k_exp_at(x: &[f64], u: &[f64], out: &mut [f64]) {
    let r = k_lnorm_abs(u);
    if r == 0.0 {
        out.copy_from_slice(x);
        return;
    }
    let rc = r.min(ARG_CAP);
    let c = rc.cosh();
    let scale = rc.sinh() / r;
    for i in 0..x.len() {
        out[i] = c * x[i] + scale * u[i];
    }
}

/// log at x of y: d(x,y)/|u|_L * u with u = y - <x,y>_L... projected as u = y - c x,
/// c = -<x,y>_L. Returns the zero vector when x and y coincide within tolerance.
pub(crate) fn k_log_at(x: &[f64], y: &[f64], out: &mut [f64]) {
    let c = -k_linner(x, y);
    let d = c.max(1.0).acosh();
    for i in 0..x.len() {
        out[i] = y[i] - c * x[i];
    }
    let n = k_lnorm_abs(out);
    if d < 1e-12 || n < 1e-12 {
        out.fill(0.0);
        return;
    }
    let scale = d / n;
    for v in out.iter_mut() {
        *v *= scale;
    }
}

/// Normalize a conic combination z of hyperboloid points back onto the manifold:
/// z / sqrt(-<z,z>_L), followed by a projection of the time coordinate.
pub(crate) fn k_centroid_normalize(z: &mut [f64]) -> Result<()> {
    let q = k_linner(z, z);
    if !(q < 0.0) || !q.is_finite() {
        return Err(GgcfError::Numeric(format!(
            "centroid accumulator is not timelike (<z,z>_L = {q})"
        )));
    }
    let n = (-q).sqrt();
    for v in z.iter_mut() {
        *v /= n;
    }
    k_project(z);
    Ok(())
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GgcfError::Numeric(format!("{name} contains non-finite entries")))
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(GgcfError::Dimension(format!(
            "operand dimensions differ ({a} vs {b})"
        )))
    }
}

// ---------------------------------------------------------------------------
// Typed API
// ---------------------------------------------------------------------------

/// A point on the upper sheet of the hyperboloid, stored as d+1 ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HPoint {
    coords: Vec<f64>,
}

impl HPoint {
    /// Validates that `coords` lies on the upper sheet within tolerance.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(GgcfError::Dimension(
                "a hyperboloid point needs at least 2 ambient coordinates".into(),
            ));
        }
        check_finite("point", &coords)?;
        if coords[0] <= 0.0 {
            return Err(GgcfError::Domain(
                "point lies on the lower sheet (x_0 <= 0)".into(),
            ));
        }
        let q = k_linner(&coords, &coords);
        let scale = 1.0 + k_dot(&coords, &coords);
        if (q + 1.0).abs() > MANIFOLD_TOL * scale {
            return Err(GgcfError::Domain(format!(
                "point is off the manifold: <x,x>_L = {q}"
            )));
        }
        Ok(HPoint { coords })
    }

    /// The origin (1, 0, ..., 0) of H^dim.
    pub fn origin(dim: usize) -> Self {
        let mut coords = vec![0.0; dim + 1];
        coords[0] = 1.0;
        HPoint { coords }
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.len() >= 2);
        HPoint { coords }
    }

    /// Spatial dimension d (the ambient vector has d+1 entries).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }
}

/// Tangent vector at the origin, stored by its d spatial coordinates
/// (the time coordinate of an origin tangent is always zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    coords: Vec<f64>,
}

impl Tangent {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(GgcfError::Dimension("empty tangent vector".into()));
        }
        check_finite("tangent", &coords)?;
        Ok(Tangent { coords })
    }

    pub fn zero(dim: usize) -> Self {
        Tangent {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        k_norm(&self.coords)
    }
}

/// Ambient (d+1)-dimensional vector, used for tangents at arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientVec {
    coords: Vec<f64>,
}

impl AmbientVec {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(GgcfError::Dimension(
                "an ambient vector needs at least 2 coordinates".into(),
            ));
        }
        check_finite("ambient vector", &coords)?;
        Ok(AmbientVec { coords })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn lnorm_abs(&self) -> f64 {
        k_lnorm_abs(&self.coords)
    }
}

/// Minkowski inner product <x,y>_L = -x_0 y_0 + sum_{i>=1} x_i y_i.
pub fn linner(x: &[f64], y: &[f64]) -> Result<f64> {
    check_same_dim(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(GgcfError::Dimension(
            "ambient vectors need at least 2 coordinates".into(),
        ));
    }
    Ok(k_linner(x, y))
}

/// Lorentzian norm sqrt(|<v,v>_L|).
pub fn lnorm_abs(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(GgcfError::Dimension(
            "ambient vectors need at least 2 coordinates".into(),
        ));
    }
    Ok(k_lnorm_abs(v))
}

/// Intrinsic distance d(x,y) = arcosh(max(-<x,y>_L, 1)).
pub fn dist(x: &HPoint, y: &HPoint) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    Ok(k_dist(x.as_slice(), y.as_slice()))
}

/// Exponential map at the origin.
pub fn exp0(v: &Tangent) -> HPoint {
    let mut out = vec![0.0; v.dim() + 1];
    k_exp0(v.as_slice(), &mut out);
    HPoint::from_vec_unchecked(out)
}

/// Logarithmic map at the origin.
pub fn log0(x: &HPoint) -> Tangent {
    let mut out = vec![0.0; x.dim()];
    k_log0(x.as_slice(), &mut out);
    Tangent { coords: out }
}

/// Exponential map at x applied to an ambient tangent u.
///
/// Errors if u is not tangent at x within [`TANGENCY_TOL`].
pub fn exp_at(x: &HPoint, u: &AmbientVec) -> Result<HPoint> {
    check_same_dim(x.dim() + 1, u.as_slice().len())?;
    let t = k_linner(x.as_slice(), u.as_slice());
    if t.abs() > TANGENCY_TOL * (1.0 + k_lnorm_abs(u.as_slice())) {
        return Err(GgcfError::Domain(format!(
            "vector is not tangent at the base point (<x,u>_L = {t})"
        )));
    }
    let mut out = vec![0.0; x.dim() + 1];
    k_exp_at(x.as_slice(), u.as_slice(), &mut out);
    k_project(&mut out);
    Ok(HPoint::from_vec_unchecked(out))
}

/// Logarithmic map at x of y, returned as an ambient tangent at x.
pub fn log_at(x: &HPoint, y: &HPoint) -> Result<AmbientVec> {
    check_same_dim(x.dim(), y.dim())?;
    let mut out = vec![0.0; x.dim() + 1];
    k_log_at(x.as_slice(), y.as_slice(), &mut out);
    Ok(AmbientVec { coords: out })
}

/// Parallel transport of an origin tangent to the tangent space at x.
pub fn transport_from_origin(x: &HPoint, v: &Tangent) -> Result<AmbientVec> {
    check_same_dim(x.dim(), v.dim())?;
    let mut out = vec![0.0; x.dim() + 1];
    k_transport_from_origin(x.as_slice(), v.as_slice(), &mut out);
    Ok(AmbientVec { coords: out })
}

/// Hyperbolic addition x (+) y = exp_x(P_{0->x}(log_0(y))).
pub fn madd(x: &HPoint, y: &HPoint) -> Result<HPoint> {
    check_same_dim(x.dim(), y.dim())?;
    let v = log0(y);
    let u = transport_from_origin(x, &v)?;
    let mut out = vec![0.0; x.dim() + 1];
    k_exp_at(x.as_slice(), u.as_slice(), &mut out);
    k_project(&mut out);
    Ok(HPoint::from_vec_unchecked(out))
}

/// Hyperbolic scalar multiplication r (*) x = exp_0(r * log_0(x)).
pub fn smul(r: f64, x: &HPoint) -> Result<HPoint> {
    if !r.is_finite() {
        return Err(GgcfError::Numeric("non-finite scalar in smul".into()));
    }
    let v = log0(x);
    let scaled: Vec<f64> = v.as_slice().iter().map(|c| r * c).collect();
    let mut out = vec![0.0; x.dim() + 1];
    k_exp0(&scaled, &mut out);
    Ok(HPoint::from_vec_unchecked(out))
}

/// Lorentzian centroid of `points` under non-negative `weights`:
///
/// ```text
/// mu = z / sqrt(-<z,z>_L),   z = sum_i w_i p_i
/// ```
pub fn centroid(weights: &[f64], points: &[HPoint]) -> Result<HPoint> {
    if points.is_empty() || weights.is_empty() {
        return Err(GgcfError::Dimension("centroid of an empty set".into()));
    }
    check_same_dim(weights.len(), points.len())?;
    let dim = points[0].dim();
    for p in points {
        check_same_dim(p.dim(), dim)?;
    }
    let mut any_positive = false;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(GgcfError::Domain(format!("invalid centroid weight {w}")));
        }
        if w > 0.0 {
            any_positive = true;
        }
    }
    if !any_positive {
        return Err(GgcfError::Degenerate(
            "all centroid weights are zero".into(),
        ));
    }
    let mut z = vec![0.0; dim + 1];
    for (w, p) in weights.iter().zip(points) {
        let c = p.as_slice();
        for i in 0..z.len() {
            z[i] += w * c[i];
        }
    }
    k_centroid_normalize(&mut z)?;
    Ok(HPoint::from_vec_unchecked(z))
}

/// Project an ambient vector onto the hyperboloid by recomputing the time
/// coordinate from the spatial part.
pub fn project(x: &[f64]) -> Result<HPoint> {
    if x.len() < 2 {
        return Err(GgcfError::Dimension(
            "an ambient vector needs at least 2 coordinates".into(),
        ));
    }
    check_finite("ambient vector", x)?;
    let mut out = x.to_vec();
    k_project(&mut out);
    Ok(HPoint::from_vec_unchecked(out))
}
