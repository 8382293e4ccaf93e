//! Constant-curvature manifold kernels in the stereographic coordinate
//! model.
//!
//! A single chart covers each space: for curvature K < 0 the Poincare ball
//! of radius 1/sqrt(|K|), for K > 0 the stereographic projection of the
//! sphere (all of R^n), and K = 0 is plain Euclidean space. All kernels are
//! gyrovector formulas parameterized by K:
//!
//! - conformal factor: `lambda_x = 2 / (1 + K |x|^2)`
//! - moebius addition: `((1 - 2K<x,y> - K|y|^2) x + (1 + K|x|^2) y) / den`
//!   with `den = 1 - 2K<x,y> + K^2 |x|^2 |y|^2`
//! - distance: `(2 / sqrt(|K|)) tan_K^-1(sqrt(|K|) |(-x) (+) y|)`
//!
//! with `tan_K = tan` for K > 0 and `tanh` for K < 0. The K = 0 kernels are
//! the plain Euclidean operations. Note the K -> 0 limit of the curved
//! distance is `2 |x - y|` while the flat branch returns `|x - y|`; the
//! factor 2 is a known discontinuity of this parameterization and the flat
//! branch deliberately keeps the conventional Euclidean metric.
//!
//! Everything is generic over [`Scalar`] so the reverse-mode tape can record
//! the exact forward computation. Curvatures themselves are not
//! differentiated and stay `f64`.

use crate::error::{Error, Result};
use crate::scalar::{dot, norm_sq, Scalar};

/// Points whose norm reaches `1/sqrt(|K|) * (1 - EPS_BOUND)` are pulled back
/// to that radius (hyperbolic spaces only).
pub const EPS_BOUND: f64 = 1e-5;

/// Moebius addition denominators with absolute value below this are treated
/// as singular (antipodal configurations on the sphere).
pub const EPS_DEN: f64 = 1e-15;

/// Spherical exponential-map angles are clamped below `pi/2 - EPS_ANGLE`.
pub const EPS_ANGLE: f64 = 1e-4;

/// Arguments to `atanh` are clamped to this magnitude.
pub const ATANH_ARG_MAX: f64 = 1.0 - 1e-12;

/// Vector and tangent norms below this are treated as exactly zero
/// (removable singularities of the direction `v / |v|`).
pub const TINY_NORM: f64 = 1e-15;

/// Sectional curvature of one manifold component. Finite by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::InvalidCurvature(k));
        }
        Ok(Curvature(k))
    }

    /// Flat space.
    pub const ZERO: Curvature = Curvature(0.0);

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_flat(self) -> bool {
        self.0 == 0.0
    }

    pub fn is_hyperbolic(self) -> bool {
        self.0 < 0.0
    }

    pub fn is_spherical(self) -> bool {
        self.0 > 0.0
    }

    /// Radius of the model domain: finite for hyperbolic spaces, infinite
    /// otherwise.
    pub fn domain_radius(self) -> f64 {
        if self.0 < 0.0 {
            1.0 / (-self.0).sqrt()
        } else {
            f64::INFINITY
        }
    }
}

impl std::fmt::Display for Curvature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Check that `x` lies strictly inside the model domain for `k`.
pub fn validate_point(x: &[f64], k: Curvature) -> Result<()> {
    let k = k.get();
    if k >= 0.0 {
        return Ok(());
    }
    let ns = norm_sq(x);
    let bound = -1.0 / k;
    if ns < bound {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            norm_sq: ns,
            bound,
            k,
        })
    }
}

/// Pull a hyperbolic point with norm at or beyond `(1 - EPS_BOUND) /
/// sqrt(|K|)` radially back to that radius. Returns whether a rescale
/// happened. No-op for K >= 0.
pub fn clamp_to_domain(x: &mut [f64], k: Curvature) -> bool {
    let k = k.get();
    if k >= 0.0 {
        return false;
    }
    let target = (1.0 - EPS_BOUND) / (-k).sqrt();
    let n = norm_sq(x).sqrt();
    if n >= target {
        let f = target / n;
        for xi in x.iter_mut() {
            *xi *= f;
        }
        true
    } else {
        false
    }
}

/// Generic counterpart of [`clamp_to_domain`] used inside recorded forward
/// passes. The rescale is radial, so the direction keeps its gradient while
/// the magnitude is flattened at the boundary.
pub fn clamp_point<S: Scalar>(x: Vec<S>, k: Curvature) -> Vec<S> {
    let kk = k.get();
    if kk >= 0.0 {
        return x;
    }
    let target = (1.0 - EPS_BOUND) / (-kk).sqrt();
    let ns = norm_sq(&x);
    if ns.value() >= target * target {
        let n = ns.sqrt();
        let f = n.recip().scale(target);
        x.into_iter().map(|xi| xi * f).collect()
    } else {
        x
    }
}

/// Conformal factor `lambda_x^K = 2 / (1 + K |x|^2)`. Strictly positive on
/// the model domain.
pub fn conformal_factor<S: Scalar>(x: &[S], k: Curvature) -> S {
    let ns = norm_sq(x);
    ns.scale(k.get()).shift(1.0).recip().scale(2.0)
}

/// Moebius addition `x (+)_K y`. Fails on singular denominators; the result
/// is re-clamped into the domain for hyperbolic K.
pub fn mobius_add<S: Scalar>(x: &[S], y: &[S], k: Curvature) -> Result<Vec<S>> {
    assert_eq!(x.len(), y.len());
    let kk = k.get();
    if kk == 0.0 {
        return Ok(x.iter().zip(y).map(|(&a, &b)| a + b).collect());
    }
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let xy = dot(x, y);
    // den = 1 - 2K<x,y> + K^2 |x|^2 |y|^2
    let den = (xy.scale(-2.0 * kk) + (xx * yy).scale(kk * kk)).shift(1.0);
    if den.value().abs() < EPS_DEN {
        return Err(Error::SingularAddition { eps: EPS_DEN, k: kk });
    }
    // cx = 1 - 2K<x,y> - K |y|^2, cy = 1 + K |x|^2
    let cx = (xy.scale(-2.0 * kk) + yy.scale(-kk)).shift(1.0);
    let cy = xx.scale(kk).shift(1.0);
    let inv = den.recip();
    let out: Vec<S> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a * cx + b * cy) * inv)
        .collect();
    Ok(clamp_point(out, k))
}

/// `(-x) (+)_K y`, the gyrovector displacement used by distance and the
/// logarithmic map.
fn gyro_displacement<S: Scalar>(x: &[S], y: &[S], k: Curvature) -> Result<Vec<S>> {
    let neg: Vec<S> = x.iter().map(|&a| a.scale(-1.0)).collect();
    mobius_add(&neg, y, k)
}

/// `tan_K^-1(sqrt(|K|) * r) * 2 / sqrt(|K|)` with the hyperbolic branch
/// clamped below 1 in its argument.
fn arc_from_norm<S: Scalar>(r: S, k: f64) -> S {
    let sk = k.abs().sqrt();
    let arg = r.scale(sk);
    let arc = if k < 0.0 {
        let arg = if arg.value() >= ATANH_ARG_MAX {
            log::debug!("atanh argument clamped at {}", arg.value());
            arg.constant(ATANH_ARG_MAX)
        } else {
            arg
        };
        arg.atanh()
    } else {
        arg.atan()
    };
    arc.scale(2.0 / sk)
}

/// Geodesic distance between `x` and `y` under curvature `k`. Symmetric and
/// non-negative; `d(x, x) = 0` exactly (guarded, with zero gradient, which
/// matches the true gradient of the squared distance at coincident points).
pub fn distance<S: Scalar>(x: &[S], y: &[S], k: Curvature) -> Result<S> {
    assert_eq!(x.len(), y.len());
    assert!(!x.is_empty());
    let kk = k.get();
    if kk == 0.0 {
        let mut acc = {
            let d = x[0] - y[0];
            d * d
        };
        for i in 1..x.len() {
            let d = x[i] - y[i];
            acc = acc + d * d;
        }
        if acc.value() < TINY_NORM * TINY_NORM {
            return Ok(acc.zeroed());
        }
        return Ok(acc.sqrt());
    }
    let g = gyro_displacement(x, y, k)?;
    let ns = norm_sq(&g);
    if ns.value() < TINY_NORM * TINY_NORM {
        return Ok(ns.zeroed());
    }
    Ok(arc_from_norm(ns.sqrt(), kk))
}

/// Exponential map at `x`:
/// `exp_x(v) = x (+)_K tan_K(sqrt(|K|) lambda_x |v| / 2) * v / (sqrt(|K|) |v|)`.
/// Returns `x` exactly for `|v| < TINY_NORM`. The spherical angle is clamped
/// below `pi/2 - EPS_ANGLE`; the result is clamped into the domain.
pub fn exp_map<S: Scalar>(x: &[S], v: &[S], k: Curvature) -> Result<Vec<S>> {
    assert_eq!(x.len(), v.len());
    let vv = norm_sq(v);
    if vv.value() < TINY_NORM * TINY_NORM {
        return Ok(x.to_vec());
    }
    let kk = k.get();
    if kk == 0.0 {
        return Ok(x.iter().zip(v).map(|(&a, &b)| a + b).collect());
    }
    let vn = vv.sqrt();
    let sk = kk.abs().sqrt();
    let lambda = conformal_factor(x, k);
    let mut angle = (lambda * vn).scale(sk * 0.5);
    let m = if kk < 0.0 {
        angle.tanh()
    } else {
        let limit = std::f64::consts::FRAC_PI_2 - EPS_ANGLE;
        if angle.value() >= limit {
            log::debug!("spherical exp angle clamped at {}", angle.value());
            angle = angle.constant(limit);
        }
        angle.tan()
    };
    let coef = m * vn.recip().scale(1.0 / sk);
    let second: Vec<S> = v.iter().map(|&b| b * coef).collect();
    mobius_add(x, &second, k)
}

/// Exponential map at the origin, where the conformal factor is 2 and the
/// moebius addition with zero is the identity:
/// `exp_0(v) = tan_K(sqrt(|K|) |v|) * v / (sqrt(|K|) |v|)`.
pub fn exp0<S: Scalar>(v: &[S], k: Curvature) -> Vec<S> {
    let kk = k.get();
    if kk == 0.0 {
        return v.to_vec();
    }
    let vv = norm_sq(v);
    if vv.value() < TINY_NORM * TINY_NORM {
        return v.iter().map(|&b| b.zeroed()).collect();
    }
    let vn = vv.sqrt();
    let sk = kk.abs().sqrt();
    let mut angle = vn.scale(sk);
    let m = if kk < 0.0 {
        angle.tanh()
    } else {
        let limit = std::f64::consts::FRAC_PI_2 - EPS_ANGLE;
        if angle.value() >= limit {
            log::debug!("spherical exp0 angle clamped at {}", angle.value());
            angle = angle.constant(limit);
        }
        angle.tan()
    };
    let coef = m * vn.recip().scale(1.0 / sk);
    let out: Vec<S> = v.iter().map(|&b| b * coef).collect();
    clamp_point(out, k)
}

/// Logarithmic map at `x`, inverse of [`exp_map`]:
/// `log_x(y) = (2 / (sqrt(|K|) lambda_x)) tan_K^-1(sqrt(|K|) |g|) * g / |g|`
/// with `g = (-x) (+)_K y`. Returns the zero tangent for `y` within
/// `TINY_NORM` of `x`.
pub fn log_map<S: Scalar>(x: &[S], y: &[S], k: Curvature) -> Result<Vec<S>> {
    assert_eq!(x.len(), y.len());
    let kk = k.get();
    if kk == 0.0 {
        return Ok(y.iter().zip(x).map(|(&b, &a)| b - a).collect());
    }
    let g = gyro_displacement(x, y, k)?;
    let ns = norm_sq(&g);
    if ns.value() < TINY_NORM * TINY_NORM {
        return Ok(g.iter().map(|&e| e.zeroed()).collect());
    }
    let gn = ns.sqrt();
    let lambda = conformal_factor(x, k);
    // arc_from_norm already carries the factor 2 / sqrt(|K|).
    let coef = arc_from_norm(gn, kk) * (lambda * gn).recip();
    Ok(g.iter().map(|&e| e * coef).collect())
}

/// Logarithmic map at the origin:
/// `log_0(y) = tan_K^-1(sqrt(|K|) |y|) * y / (sqrt(|K|) |y|)`.
pub fn log0<S: Scalar>(y: &[S], k: Curvature) -> Vec<S> {
    let kk = k.get();
    if kk == 0.0 {
        return y.to_vec();
    }
    let yy = norm_sq(y);
    if yy.value() < TINY_NORM * TINY_NORM {
        return y.iter().map(|&b| b.zeroed()).collect();
    }
    let yn = yy.sqrt();
    let sk = kk.abs().sqrt();
    let arg = yn.scale(sk);
    let arc = if kk < 0.0 {
        let arg = if arg.value() >= ATANH_ARG_MAX {
            log::debug!("log0 atanh argument clamped at {}", arg.value());
            arg.constant(ATANH_ARG_MAX)
        } else {
            arg
        };
        arg.atanh()
    } else {
        arg.atan()
    };
    let coef = arc * yn.recip().scale(1.0 / sk);
    y.iter().map(|&b| b * coef).collect()
}

/// Diagonal moebius matrix-vector product
/// `M (x)_K x = exp_0(M log_0(x))` for a diagonal `M` given by `diag`.
pub fn mobius_matvec<S: Scalar>(diag: &[S], x: &[S], k: Curvature) -> Vec<S> {
    assert_eq!(diag.len(), x.len());
    if k.get() == 0.0 {
        return diag.iter().zip(x).map(|(&m, &a)| m * a).collect();
    }
    let u = log0(x, k);
    let w: Vec<S> = diag.iter().zip(&u).map(|(&m, &a)| m * a).collect();
    exp0(&w, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG: Curvature = Curvature(-1.0);

    fn close(a: f64, b: f64, tol: f64) {
        assert!(
            (a - b).abs() <= tol,
            "expected {b} within {tol}, got {a} (diff {})",
            (a - b).abs()
        );
    }

    #[test]
    fn mobius_add_collinear_hyperbolic() {
        // (0.5, 0) (+) (0.3, 0) at K = -1 is 0.92 / 1.3225.
        let out = mobius_add(&[0.5, 0.0], &[0.3, 0.0], NEG).unwrap();
        close(out[0], 0.92 / 1.3225, 1e-12);
        close(out[0], 0.695652, 1e-6);
        close(out[1], 0.0, 1e-15);
    }

    #[test]
    fn distance_collinear_hyperbolic() {
        // On a diameter of the unit ball the distance is
        // 2 (atanh(0.5) - atanh(0.3)).
        let d = distance(&[0.5, 0.0], &[0.3, 0.0], NEG).unwrap();
        close(d, 2.0 * (0.5f64.atanh() - 0.3f64.atanh()), 1e-12);
        close(d, 0.479573, 1e-6);
    }

    #[test]
    fn conformal_factor_reference_value() {
        let l = conformal_factor(&[0.5, 0.0], NEG);
        close(l, 8.0 / 3.0, 1e-12);
    }

    #[test]
    fn exp0_radial_is_tanh() {
        let p = exp0(&[0.3, 0.0], NEG);
        close(p[0], 0.3f64.tanh(), 1e-12);
        close(p[0], 0.291313, 1e-6);
    }

    #[test]
    fn matvec_doubles_radial_coordinate_in_tangent_space() {
        // diag(2) applied to exp_0((0.3, 0)) lands on exp_0((0.6, 0)).
        let x = exp0(&[0.3, 0.0], NEG);
        let out = mobius_matvec(&[2.0, 2.0], &x, NEG);
        close(out[0], 0.6f64.tanh(), 1e-9);
        close(out[0], 0.537050, 1e-6);
    }

    #[test]
    fn small_curvature_distance_approaches_twice_euclidean() {
        let k = Curvature::new(1e-6).unwrap();
        let d = distance(&[0.2, 0.0], &[-0.1, 0.0], k).unwrap();
        close(d, 0.6, 1e-4);
        let k = Curvature::new(-1e-6).unwrap();
        let d = distance(&[0.2, 0.0], &[-0.1, 0.0], k).unwrap();
        close(d, 0.6, 1e-4);
    }

    #[test]
    fn flat_distance_is_euclidean() {
        let d = distance(&[3.0, 0.0], &[0.0, 4.0], Curvature::ZERO).unwrap();
        close(d, 5.0, 1e-12);
    }

    #[test]
    fn exp_map_tiny_tangent_returns_base_exactly() {
        let x = [0.3, -0.2];
        let v = [1e-16, 0.0];
        let out = exp_map(&x, &v, NEG).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn distance_of_identical_points_is_zero() {
        let x = [0.4, 0.1, -0.2];
        for k in [-1.0, -0.3, 0.0, 0.5, 2.0] {
            let k = Curvature::new(k).unwrap();
            let d = distance(&x, &x, k).unwrap();
            assert_eq!(d, 0.0, "K = {}", k.get());
        }
    }

    #[test]
    fn clamp_pulls_back_boundary_points() {
        let mut x = [0.9999999, 0.0];
        assert!(clamp_to_domain(&mut x, NEG));
        close(norm_sq(&x).sqrt(), 1.0 - EPS_BOUND, 1e-12);
        let mut y = [0.5, 0.0];
        assert!(!clamp_to_domain(&mut y, NEG));
        assert_eq!(y, [0.5, 0.0]);
        // Spherical and flat spaces are never clamped.
        let mut z = [100.0, 0.0];
        assert!(!clamp_to_domain(&mut z, Curvature::new(2.0).unwrap()));
        assert!(!clamp_to_domain(&mut z, Curvature::ZERO));
    }

    #[test]
    fn singular_spherical_addition_is_an_error() {
        // For K > 0 the configuration y = x / (K |x|^2) zeroes the
        // denominator.
        let k = Curvature::new(1.0).unwrap();
        let x = [0.5, 0.0];
        let y = [1.0 / (1.0 * 0.5), 0.0];
        let err = mobius_add(&x, &y, k).unwrap_err();
        assert!(matches!(err, Error::SingularAddition { .. }), "{err}");
    }

    #[test]
    fn validate_point_domain() {
        assert!(validate_point(&[0.99, 0.0], NEG).is_ok());
        assert!(validate_point(&[1.0, 0.0], NEG).is_err());
        assert!(validate_point(&[50.0, 0.0], Curvature::new(0.25).unwrap()).is_ok());
        assert!(validate_point(&[50.0, 0.0], Curvature::ZERO).is_ok());
        // K = -0.25 doubles the ball radius.
        assert!(validate_point(&[1.5, 0.0], Curvature::new(-0.25).unwrap()).is_ok());
    }

    #[test]
    fn spherical_roundtrip_far_from_origin() {
        let k = Curvature::new(0.7).unwrap();
        let x = [1.4, -2.0, 0.3];
        let y = [-0.2, 0.8, 1.1];
        let v = log_map(&x, &y, k).unwrap();
        let back = exp_map(&x, &v, k).unwrap();
        for i in 0..3 {
            close(back[i], y[i], 1e-9);
        }
    }
}
