//! Poincaré-ball geometry: exponential map at the origin, Möbius addition,
//! and the Riemannian distance, together with their derivatives.
//!
//! A ball of curvature magnitude `c` has radius `1/√c`. All points are kept
//! strictly inside the ball; see [`BALL_BOUNDARY_EPS`] and [`ARTANH_EPS`].

use crate::error::{Error, Result};
use crate::util::{all_finite, l2_norm};
use ndarray::{Array1, Array2, ArrayView1};

/// Projected points are clamped to `‖x‖√c ≤ 1 − BALL_BOUNDARY_EPS`.
pub const BALL_BOUNDARY_EPS: f64 = 1e-7;

/// The artanh argument in the distance is clamped to `1 − ARTANH_EPS`.
pub const ARTANH_EPS: f64 = 1e-7;

/// Curvature magnitude of a Poincaré ball; strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "curvature must be positive and finite, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

/// A point strictly inside the Poincaré ball of its curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Array1<f64>,
    curvature: Curvature,
}

impl PoincarePoint {
    pub fn new(coords: Array1<f64>, curvature: Curvature) -> Result<Self> {
        if !all_finite(coords.as_slice().expect("contiguous")) {
            return Err(Error::InvalidArgument(
                "point coordinates must be finite".into(),
            ));
        }
        let n = l2_norm(coords.view());
        if curvature.sqrt() * n >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "point lies outside the ball: ‖x‖√c = {}",
                curvature.sqrt() * n
            )));
        }
        Ok(PoincarePoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincarePoint {
            coords: Array1::zeros(dim),
            curvature,
        }
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn check_same_ball(&self, other: &PoincarePoint) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        if self.curvature != other.curvature {
            return Err(Error::CurvatureMismatch {
                left: self.curvature.get(),
                right: other.curvature.get(),
            });
        }
        Ok(())
    }
}

/// Exponential map at the origin: `tanh(√c‖v‖) · v / (√c‖v‖)`, the origin for
/// `v = 0`. The result keeps the direction of `v` and lands strictly inside
/// the ball (clamped at `1 − BALL_BOUNDARY_EPS` in radius units).
pub fn exp_map_origin(v: ArrayView1<'_, f64>, c: Curvature) -> Result<PoincarePoint> {
    if !all_finite(v.as_slice().expect("contiguous")) {
        return Err(Error::InvalidArgument(
            "exp map input must be finite".into(),
        ));
    }
    let a = c.sqrt();
    let r = l2_norm(v);
    let mut coords = if r == 0.0 {
        v.to_owned()
    } else {
        let scale = (a * r).tanh() / (a * r);
        v.mapv(|x| x * scale)
    };
    // tanh keeps √c‖coords‖ < 1; the clamp below only fires for ‖v‖√c ≳ 6.1
    let n = l2_norm(coords.view());
    let limit = (1.0 - BALL_BOUNDARY_EPS) / a;
    if n > limit {
        let shrink = limit / n;
        coords.mapv_inplace(|x| x * shrink);
    }
    Ok(PoincarePoint {
        coords,
        curvature: c,
    })
}

/// Jacobian of [`exp_map_origin`] with respect to `v`:
/// `J = g(r)·I + (g'(r)/r)·v vᵀ` with `g(r) = tanh(√c r)/(√c r)`.
///
/// Valid away from the boundary clamp region.
pub fn exp_map_origin_jacobian(v: ArrayView1<'_, f64>, c: Curvature) -> Array2<f64> {
    let d = v.len();
    let a = c.sqrt();
    let r = l2_norm(v);
    if r < 1e-8 {
        // g → 1 and g'/r → −2c/3; the rank-one part is O(r²)
        return Array2::eye(d);
    }
    let ar = a * r;
    let t = ar.tanh();
    let g = t / ar;
    // g'(r) = sech²(ar)/r − tanh(ar)/(a r²)
    let sech2 = 1.0 - t * t;
    let gp = sech2 / r - t / (a * r * r);
    let mut jac = Array2::eye(d) * g;
    let w = gp / r;
    for i in 0..d {
        for j in 0..d {
            jac[[i, j]] += w * v[i] * v[j];
        }
    }
    jac
}

/// Möbius addition on the ball:
/// `x ⊕ y = ((1 + 2c⟨x,y⟩ + c‖y‖²)x + (1 − c‖x‖²)y) / (1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²)`.
pub fn mobius_add(x: &PoincarePoint, y: &PoincarePoint) -> Result<PoincarePoint> {
    x.check_same_ball(y)?;
    let c = x.curvature.get();
    let xv = x.coords();
    let yv = y.coords();
    let xy = xv.dot(&yv);
    let x2 = xv.dot(&xv);
    let y2 = yv.dot(&yv);
    let alpha = 1.0 + 2.0 * c * xy + c * y2;
    let beta = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    let mut coords = Array1::zeros(x.dim());
    for i in 0..x.dim() {
        coords[i] = (alpha * xv[i] + beta * yv[i]) / den;
    }
    // the exact formula stays inside the ball; guard against rounding at
    // the extreme boundary
    let a = x.curvature.sqrt();
    let n = l2_norm(coords.view());
    let limit = (1.0 - 1e-12) / a;
    if n > limit {
        let shrink = limit / n;
        coords.mapv_inplace(|v| v * shrink);
    }
    Ok(PoincarePoint {
        coords,
        curvature: x.curvature,
    })
}

/// Jacobians of `m = x ⊕ y` with respect to `x` and `y` (row `i` holds
/// `∂m_i/∂·_j`).
pub fn mobius_add_jacobians(x: &PoincarePoint, y: &PoincarePoint) -> Result<(Array2<f64>, Array2<f64>)> {
    x.check_same_ball(y)?;
    let c = x.curvature.get();
    let d = x.dim();
    let xv = x.coords();
    let yv = y.coords();
    let xy = xv.dot(&yv);
    let x2 = xv.dot(&xv);
    let y2 = yv.dot(&yv);
    let alpha = 1.0 + 2.0 * c * xy + c * y2;
    let beta = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    let m: Vec<f64> = (0..d)
        .map(|i| (alpha * xv[i] + beta * yv[i]) / den)
        .collect();

    // ∂n/∂x = αI + 2c·(x yᵀ − y xᵀ); ∂δ/∂x = 2c y + 2c²‖y‖² x
    // ∂n/∂y = βI + 2c·(x xᵀ + x yᵀ); ∂δ/∂y = 2c x + 2c²‖x‖² y
    let mut jx = Array2::zeros((d, d));
    let mut jy = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let dn_dx = if i == j { alpha } else { 0.0 }
                + 2.0 * c * (xv[i] * yv[j] - yv[i] * xv[j]);
            let dden_dx = 2.0 * c * yv[j] + 2.0 * c * c * y2 * xv[j];
            jx[[i, j]] = (dn_dx - m[i] * dden_dx) / den;

            let dn_dy = if i == j { beta } else { 0.0 }
                + 2.0 * c * (xv[i] * xv[j] + xv[i] * yv[j]);
            let dden_dy = 2.0 * c * xv[j] + 2.0 * c * c * x2 * yv[j];
            jy[[i, j]] = (dn_dy - m[i] * dden_dy) / den;
        }
    }
    Ok((jx, jy))
}

/// Riemannian distance `d(x,y) = (2/√c)·artanh(√c·‖(−x) ⊕ y‖)`.
pub fn hyperbolic_distance(x: &PoincarePoint, y: &PoincarePoint) -> Result<f64> {
    x.check_same_ball(y)?;
    let neg_x = PoincarePoint {
        coords: x.coords.mapv(|v| -v),
        curvature: x.curvature,
    };
    let diff = mobius_add(&neg_x, y)?;
    let a = x.curvature.sqrt();
    let t = (a * l2_norm(diff.coords())).clamp(0.0, 1.0 - ARTANH_EPS);
    Ok(2.0 / a * t.atanh())
}

/// Distance together with its gradients with respect to both points.
///
/// The gradient uses the algebraically equivalent form
/// `d = acosh(1 + 2c‖x−y‖² / ((1−c‖x‖²)(1−c‖y‖²))) / √c`,
/// whose derivative is well conditioned away from the boundary. At
/// coincident points the distance has a kink; the subgradient 0 is returned.
pub fn hyperbolic_distance_grads(
    x: &PoincarePoint,
    y: &PoincarePoint,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let dist = hyperbolic_distance(x, y)?;
    let c = x.curvature.get();
    let a = x.curvature.sqrt();
    let xv = x.coords();
    let yv = y.coords();
    let d = x.dim();
    let x2 = xv.dot(&xv);
    let y2 = yv.dot(&yv);
    let big_a = 1.0 - c * x2;
    let big_b = 1.0 - c * y2;
    let mut nn = 0.0;
    for i in 0..d {
        let diff = xv[i] - yv[i];
        nn += diff * diff;
    }
    if nn < 1e-24 {
        return Ok((dist, Array1::zeros(d), Array1::zeros(d)));
    }
    let u = 1.0 + 2.0 * c * nn / (big_a * big_b);
    let root = ((u - 1.0) * (u + 1.0)).sqrt();
    let mut gx = Array1::zeros(d);
    let mut gy = Array1::zeros(d);
    let k = 2.0 * c / (big_a * big_b);
    for i in 0..d {
        let du_dx = k * (2.0 * (xv[i] - yv[i]) + (2.0 * c * nn / big_a) * xv[i]);
        let du_dy = k * (2.0 * (yv[i] - xv[i]) + (2.0 * c * nn / big_b) * yv[i]);
        gx[i] = du_dx / (a * root);
        gy[i] = du_dy / (a * root);
    }
    Ok((dist, gx, gy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    fn random_vector(rng: &mut impl Rng, dim: usize, scale: f64) -> Array1<f64> {
        Array1::from_iter((0..dim).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        }))
    }

    /// Random point with ‖x‖√c bounded by `max_radius`.
    fn random_point(rng: &mut impl Rng, dim: usize, cv: Curvature, max_radius: f64) -> PoincarePoint {
        let dir = random_vector(rng, dim, 1.0);
        let n = l2_norm(dir.view());
        let radius: f64 = rng.random::<f64>() * max_radius;
        let coords = dir.mapv(|v| v / n * radius / cv.sqrt());
        PoincarePoint::new(coords, cv).unwrap()
    }

    #[test]
    fn exp_map_fixes_origin() {
        let p = exp_map_origin(array![0.0, 0.0, 0.0].view(), c(1.0)).unwrap();
        assert_eq!(p.coords(), array![0.0, 0.0, 0.0].view());
    }

    #[test]
    fn exp_map_scalar_case() {
        // independent oracle: tanh(0.5) = 0.4621171572600097585023185
        let p = exp_map_origin(array![0.5, 0.0].view(), c(1.0)).unwrap();
        assert!((p.coords()[0] - 0.46211715726000976).abs() < 1e-15);
        assert_eq!(p.coords()[1], 0.0);
    }

    #[test]
    fn exp_map_saturates_inside_ball() {
        let p = exp_map_origin(array![1e6, 0.0].view(), c(1.0)).unwrap();
        let n = l2_norm(p.coords());
        assert!(n < 1.0 && n > 0.999999);
    }

    #[test]
    fn exp_map_rejects_non_finite() {
        assert!(exp_map_origin(array![f64::NAN, 0.0].view(), c(1.0)).is_err());
    }

    #[test]
    fn exp_map_preserves_direction_and_is_norm_monotone() {
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let cv = c(rng.random::<f64>() * 5.0 + 0.2);
            let v1 = random_vector(&mut rng, 4, 0.8);
            let v2 = &v1 * (1.0 + rng.random::<f64>());
            let p1 = exp_map_origin(v1.view(), cv).unwrap();
            let p2 = exp_map_origin(v2.view(), cv).unwrap();
            assert!(l2_norm(p1.coords()) < l2_norm(p2.coords()));
            let cos = p1.coords().dot(&v1) / (l2_norm(p1.coords()) * l2_norm(v1.view()));
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mobius_identities() {
        let mut rng = seeded_rng(17);
        for _ in 0..50 {
            let cv = c(rng.random::<f64>() * 4.0 + 0.5);
            let x = random_point(&mut rng, 5, cv, 0.9);
            let zero = PoincarePoint::origin(5, cv);
            let right = mobius_add(&x, &zero).unwrap();
            let left = mobius_add(&zero, &x).unwrap();
            for i in 0..5 {
                assert!((right.coords()[i] - x.coords()[i]).abs() < 1e-14);
                assert!((left.coords()[i] - x.coords()[i]).abs() < 1e-14);
            }
            let neg = PoincarePoint::new(x.coords().mapv(|v| -v), cv).unwrap();
            let inv = mobius_add(&neg, &x).unwrap();
            assert!(l2_norm(inv.coords()) < 1e-12);
        }
    }

    #[test]
    fn mobius_rejects_mismatched_balls() {
        let x = PoincarePoint::origin(3, c(1.0));
        let y = PoincarePoint::origin(3, c(2.0));
        assert!(matches!(
            mobius_add(&x, &y),
            Err(Error::CurvatureMismatch { .. })
        ));
        let z = PoincarePoint::origin(4, c(1.0));
        assert!(matches!(
            mobius_add(&x, &z),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distance_identity_and_symmetry() {
        let mut rng = seeded_rng(23);
        for _ in 0..100 {
            let cv = c(rng.random::<f64>() * 9.0 + 0.5);
            let x = random_point(&mut rng, 8, cv, 0.95);
            let y = random_point(&mut rng, 8, cv, 0.95);
            // (−x) ⊕ x cancels to a few ulps, not to exact zero
            assert!(hyperbolic_distance(&x, &x).unwrap() <= 1e-12);
            let dxy = hyperbolic_distance(&x, &y).unwrap();
            let dyx = hyperbolic_distance(&y, &x).unwrap();
            assert!((dxy - dyx).abs() <= 1e-12);
        }
    }

    #[test]
    fn flat_limit_recovers_twice_euclidean() {
        let mut rng = seeded_rng(31);
        let cv = c(1e-6);
        for _ in 0..50 {
            let u = random_vector(&mut rng, 6, 0.3);
            let w = random_vector(&mut rng, 6, 0.3);
            let x = exp_map_origin(u.view(), cv).unwrap();
            let y = exp_map_origin(w.view(), cv).unwrap();
            let d = hyperbolic_distance(&x, &y).unwrap();
            let diff = &u - &w;
            let expected = 2.0 * l2_norm(diff.view());
            if expected > 1e-6 {
                assert!(
                    (d - expected).abs() / expected < 1e-4,
                    "flat limit violated: {d} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn metric_axioms_hold_on_random_triples() {
        let mut rng = seeded_rng(37);
        let curvatures = [0.5, 1.0, 3.0, 6.0, 10.0];
        let dims = [2usize, 8, 64];
        let mut checked = 0usize;
        'outer: for round in 0..100 {
            for &cvv in &curvatures {
                for &dim in &dims {
                    let cv = c(cvv);
                    let x = random_point(&mut rng, dim, cv, 0.95);
                    let y = random_point(&mut rng, dim, cv, 0.95);
                    let z = random_point(&mut rng, dim, cv, 0.95);
                    let dxy = hyperbolic_distance(&x, &y).unwrap();
                    let dyz = hyperbolic_distance(&y, &z).unwrap();
                    let dxz = hyperbolic_distance(&x, &z).unwrap();
                    assert!(dxy >= 0.0 && dyz >= 0.0 && dxz >= 0.0);
                    assert!(dxz <= dxy + dyz + 1e-9, "triangle violated at round {round}");
                    let dyx = hyperbolic_distance(&y, &x).unwrap();
                    assert!((dxy - dyx).abs() <= 1e-10);
                    if dxy < 1e-10 {
                        let sep = (&x.coords().to_owned() - &y.coords().to_owned())
                            .mapv(f64::abs)
                            .sum();
                        assert!(sep < 1e-8);
                    }
                    checked += 1;
                    if checked >= 1000 {
                        break 'outer;
                    }
                }
            }
        }
        assert!(checked >= 1000);
    }

    fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
        let scale = analytic
            .iter()
            .chain(numeric.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(1e-12);
        analytic
            .iter()
            .zip(numeric.iter())
            .fold(0.0f64, |m, (&a, &n)| m.max((a - n).abs()))
            / scale
    }

    #[test]
    fn exp_map_jacobian_matches_finite_differences() {
        let mut rng = seeded_rng(41);
        let h = 1e-6;
        for _ in 0..100 {
            let cv = c(rng.random::<f64>() * 3.0 + 0.3);
            // keep the projected norm under 0.9 radius units
            let max_v = 0.9f64.atanh() / cv.sqrt();
            let v = {
                let raw = random_vector(&mut rng, 5, 1.0);
                let n = l2_norm(raw.view());
                raw.mapv(|x| x / n * rng.random::<f64>() * max_v)
            };
            let jac = exp_map_origin_jacobian(v.view(), cv);
            let mut fd = Array2::zeros((5, 5));
            for j in 0..5 {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[j] += h;
                vm[j] -= h;
                let pp = exp_map_origin(vp.view(), cv).unwrap();
                let pm = exp_map_origin(vm.view(), cv).unwrap();
                for i in 0..5 {
                    fd[[i, j]] = (pp.coords()[i] - pm.coords()[i]) / (2.0 * h);
                }
            }
            assert!(max_rel_err(&jac, &fd) <= 1e-6);
        }
    }

    #[test]
    fn mobius_jacobians_match_finite_differences() {
        let mut rng = seeded_rng(43);
        let h = 1e-6;
        for _ in 0..100 {
            let cv = c(rng.random::<f64>() * 3.0 + 0.3);
            let x = random_point(&mut rng, 4, cv, 0.9);
            let y = random_point(&mut rng, 4, cv, 0.9);
            let (jx, jy) = mobius_add_jacobians(&x, &y).unwrap();
            let mut fdx = Array2::zeros((4, 4));
            let mut fdy = Array2::zeros((4, 4));
            for j in 0..4 {
                for (fd, point, other, x_side) in
                    [(&mut fdx, &x, &y, true), (&mut fdy, &y, &x, false)]
                {
                    let mut cp = point.coords().to_owned();
                    let mut cm = point.coords().to_owned();
                    cp[j] += h;
                    cm[j] -= h;
                    let pp = PoincarePoint::new(cp, cv).unwrap();
                    let pm = PoincarePoint::new(cm, cv).unwrap();
                    let (rp, rm) = if x_side {
                        (mobius_add(&pp, other).unwrap(), mobius_add(&pm, other).unwrap())
                    } else {
                        (mobius_add(other, &pp).unwrap(), mobius_add(other, &pm).unwrap())
                    };
                    for i in 0..4 {
                        fd[[i, j]] = (rp.coords()[i] - rm.coords()[i]) / (2.0 * h);
                    }
                }
            }
            assert!(max_rel_err(&jx, &fdx) <= 1e-6);
            assert!(max_rel_err(&jy, &fdy) <= 1e-6);
        }
    }

    #[test]
    fn distance_gradients_match_finite_differences() {
        let mut rng = seeded_rng(47);
        let h = 1e-6;
        for _ in 0..100 {
            let cv = c(rng.random::<f64>() * 3.0 + 0.3);
            let x = random_point(&mut rng, 6, cv, 0.9);
            let y = random_point(&mut rng, 6, cv, 0.9);
            if hyperbolic_distance(&x, &y).unwrap() < 1e-3 {
                continue;
            }
            let (_, gx, gy) = hyperbolic_distance_grads(&x, &y).unwrap();
            let scale = gx
                .iter()
                .chain(gy.iter())
                .fold(0.0f64, |m, &v| m.max(v.abs()))
                .max(1e-12);
            for j in 0..6 {
                for (grad, point, x_side) in [(&gx, &x, true), (&gy, &y, false)] {
                    let mut cp = point.coords().to_owned();
                    let mut cm = point.coords().to_owned();
                    cp[j] += h;
                    cm[j] -= h;
                    let pp = PoincarePoint::new(cp, cv).unwrap();
                    let pm = PoincarePoint::new(cm, cv).unwrap();
                    let (dp, dm) = if x_side {
                        (
                            hyperbolic_distance(&pp, &y).unwrap(),
                            hyperbolic_distance(&pm, &y).unwrap(),
                        )
                    } else {
                        (
                            hyperbolic_distance(&x, &pp).unwrap(),
                            hyperbolic_distance(&x, &pm).unwrap(),
                        )
                    };
                    let fd = (dp - dm) / (2.0 * h);
                    assert!(
                        (grad[j] - fd).abs() / scale <= 1e-6,
                        "grad mismatch: {} vs {fd}",
                        grad[j]
                    );
                }
            }
        }
    }

    #[test]
    fn antipodal_unit_projections_are_distance_four_apart() {
        // for a unit input, d(0, exp(v)) = 2 for every curvature, so the
        // antipodal pair sits exactly 4 apart
        let cv = c(6.0);
        let u = array![1.0, 0.0];
        let p = exp_map_origin(u.view(), cv).unwrap();
        let q = exp_map_origin(u.mapv(|v| -v).view(), cv).unwrap();
        let d = hyperbolic_distance(&p, &q).unwrap();
        assert!((d - 4.0).abs() < 1e-9);
    }
}
