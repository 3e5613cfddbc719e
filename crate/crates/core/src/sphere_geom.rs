//! Geometry of the unit sphere S²: tangent frames, alignment rotations,
//! exponential and logarithm maps, scattering circles, surface gradient and
//! the Laplace–Beltrami operator.

use crate::kinematics_xs::{mu, mu_de, mu_de_prime, one_minus_mu_sq, KinematicsError};
use crate::quadrature::{CircleRule, KahanSum, SphereRule};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vector is not a unit direction (norm {0})")]
    NotUnit(f64),
    #[error("antipodal directions have no unique logarithm")]
    Antipodal,
    #[error("tangent vector is not orthogonal to its base point (ω·ζ = {0})")]
    NotTangent(f64),
    #[error("circle derivative is singular at E' = E")]
    SingularDerivative,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// A unit vector on S².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    /// Accepts vectors with ‖v‖ = 1 within 1e−12.
    pub fn new(v: Vec3) -> Result<Self, GeometryError> {
        let n = v.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Direction(v))
    }

    /// Normalizes any non-zero vector.
    pub fn normalized(v: Vec3) -> Self {
        Direction(v.normalize())
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }
}

/// Tangent vector at `base`, stored by its coefficients in the frame
/// (Ω̄₁, Ω̄₂) of the base point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub base: Vec3,
    pub coeffs: [f64; 2],
}

impl TangentVector {
    /// Decompose an ambient vector orthogonal to `base`.
    pub fn from_ambient(base: &Vec3, zeta: &Vec3) -> Result<Self, GeometryError> {
        let d = base.dot(zeta);
        if d.abs() > 1e-10 * (1.0 + zeta.norm()) {
            return Err(GeometryError::NotTangent(d));
        }
        let (o1, o2) = frame(base);
        Ok(TangentVector {
            base: *base,
            coeffs: [o1.dot(zeta), o2.dot(zeta)],
        })
    }

    pub fn embedded(&self) -> Vec3 {
        let (o1, o2) = frame(&self.base);
        o1 * self.coeffs[0] + o2 * self.coeffs[1]
    }

    pub fn norm(&self) -> f64 {
        self.coeffs[0].hypot(self.coeffs[1])
    }
}

/// Frame construction with a configurable pole threshold on ω₁²+ω₂².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAtlas {
    pub pole_threshold: f64,
}

impl Default for FrameAtlas {
    fn default() -> Self {
        FrameAtlas { pole_threshold: 1e-8 }
    }
}

impl FrameAtlas {
    /// Tangent pair (Ω̄₁, Ω̄₂) at ω. The triple (Ω̄₂, Ω̄₁, ω) is a
    /// right-handed orthonormal basis.
    pub fn frame(&self, w: &Vec3) -> (Vec3, Vec3) {
        let rho2 = w[0] * w[0] + w[1] * w[1];
        if rho2 < self.pole_threshold {
            // Ω̄₂ = e₁, Ω̄₁ = sign(ω₃) e₂ at the poles, re-orthogonalised for
            // directions that are close to but not exactly at a pole.
            let e1 = Vec3::new(1.0, 0.0, 0.0);
            let o2 = (e1 - w * w[0]).normalize();
            let o1 = w.cross(&o2);
            return (o1, o2);
        }
        let rho = rho2.sqrt();
        let o1 = Vec3::new(-w[1] / rho, w[0] / rho, 0.0);
        let o2 = Vec3::new(w[0] * w[2] / rho, w[1] * w[2] / rho, -rho);
        (o1, o2)
    }

    pub fn rotation_to(&self, w: &Vec3) -> Matrix3<f64> {
        let (o1, o2) = self.frame(w);
        Matrix3::from_columns(&[o2, o1, *w])
    }
}

/// Tangent pair (Ω̄₁, Ω̄₂) at ω with the default pole threshold.
pub fn frame(w: &Vec3) -> (Vec3, Vec3) {
    FrameAtlas::default().frame(w)
}

/// Rotation with columns (Ω̄₂, Ω̄₁, ω); maps e₃ to ω.
pub fn rotation_to(w: &Vec3) -> Matrix3<f64> {
    FrameAtlas::default().rotation_to(w)
}

/// Point of the circle of directions at cosine `m` around the third column of `r`.
#[inline]
pub fn circle_point(r: &Matrix3<f64>, m: f64, sin_theta: f64, cs: f64, sn: f64) -> Vec3 {
    r * Vec3::new(sin_theta * cs, sin_theta * sn, m)
}

/// γ(E′,E,ω)(s) = R(ω)(√(1−μ²) cos s, √(1−μ²) sin s, μ).
pub fn scatter_circle(e_prime: f64, e: f64, w: &Vec3, s: f64) -> Result<Vec3, GeometryError> {
    let m = mu(e_prime, e)?;
    if e_prime == e {
        return Ok(*w);
    }
    let st = one_minus_mu_sq(e_prime, e)?.sqrt();
    Ok(circle_point(&rotation_to(w), m, st, s.cos(), s.sin()))
}

fn circle_tangent(w: &Vec3, m: f64, st: f64, dmu: f64, s: f64) -> Vec3 {
    let r = rotation_to(w);
    let k = -dmu * m / st;
    r * Vec3::new(k * s.cos(), k * s.sin(), dmu)
}

/// ∂γ/∂E′ for E′ > E.
pub fn scatter_circle_de_prime(e_prime: f64, e: f64, w: &Vec3, s: f64) -> Result<Vec3, GeometryError> {
    if e_prime <= e {
        return Err(GeometryError::SingularDerivative);
    }
    let m = mu(e_prime, e)?;
    let st = one_minus_mu_sq(e_prime, e)?.sqrt();
    Ok(circle_tangent(w, m, st, mu_de_prime(e_prime, e)?, s))
}

/// ∂γ/∂E for E′ > E.
pub fn scatter_circle_de(e_prime: f64, e: f64, w: &Vec3, s: f64) -> Result<Vec3, GeometryError> {
    if e_prime <= e {
        return Err(GeometryError::SingularDerivative);
    }
    let m = mu(e_prime, e)?;
    let st = one_minus_mu_sq(e_prime, e)?.sqrt();
    Ok(circle_tangent(w, m, st, mu_de(e_prime, e)?, s))
}

/// exp_ω(ζ) = cos‖ζ‖ ω + sin‖ζ‖ ζ/‖ζ‖ for an ambient tangent vector ζ.
pub fn exp_map(w: &Vec3, zeta: &Vec3) -> Vec3 {
    let n = zeta.norm();
    if n == 0.0 {
        return *w;
    }
    w * n.cos() + zeta * (n.sin() / n)
}

/// exp map for a tangent vector given in frame coordinates.
pub fn exp_map_tangent(zeta: &TangentVector) -> Vec3 {
    exp_map(&zeta.base, &zeta.embedded())
}

/// log_ω(ω′) = (arccos c / √(1−c²)) (ω′ − c ω), c = ⟨ω′,ω⟩.
pub fn log_map(w: &Vec3, wp: &Vec3) -> Result<Vec3, GeometryError> {
    let c = w.dot(wp);
    let perp = wp - w * c;
    let s = perp.norm();
    if c < 0.0 && s < 1e-12 {
        return Err(GeometryError::Antipodal);
    }
    let ratio = if c > 0.0 && s < 1e-4 {
        // arcsin(s)/s
        let s2 = s * s;
        1.0 + s2 / 6.0 + 3.0 * s2 * s2 / 40.0
    } else {
        s.atan2(c) / s
    };
    Ok(perp * ratio)
}

/// Projection of an ambient gradient onto T_ω S.
pub fn surface_gradient(ambient_grad: &Vec3, w: &Vec3) -> Vec3 {
    let (o1, o2) = frame(w);
    o1 * o1.dot(ambient_grad) + o2 * o2.dot(ambient_grad)
}

/// A function near S² with ambient derivatives up to second order.
pub trait SphereFunction {
    fn value(&self, w: &Vec3) -> f64;
    fn gradient(&self, w: &Vec3) -> Vec3;
    fn hessian(&self, w: &Vec3) -> Matrix3<f64>;
}

/// Δ_S f at ω as the sum of second derivatives along the two geodesics
/// t ↦ cos t ω + sin t Ω̄ᵢ of the local frame:
/// Σᵢ Ω̄ᵢᵀ H Ω̄ᵢ − 2 ω·∇f.
pub fn laplace_beltrami_from_jet(grad: &Vec3, hess: &Matrix3<f64>, w: &Vec3) -> f64 {
    let (o1, o2) = frame(w);
    o1.dot(&(hess * o1)) + o2.dot(&(hess * o2)) - 2.0 * w.dot(grad)
}

pub fn laplace_beltrami(f: &dyn SphereFunction, w: &Vec3) -> f64 {
    laplace_beltrami_from_jet(&f.gradient(w), &f.hessian(w), w)
}

/// |∫_S∫₀^{2π} ψ(γ(E′,E,ω)(s)) v(ω) ds dω − ∫_S∫₀^{2π} ψ(ω′) v(γ(E′,E,ω′)(s)) ds dω′|.
pub fn circle_sphere_swap_residual(
    psi: &dyn Fn(&Vec3) -> f64,
    v: &dyn Fn(&Vec3) -> f64,
    e_prime: f64,
    e: f64,
    sphere: &SphereRule,
    circle: &CircleRule,
) -> Result<f64, GeometryError> {
    let m = mu(e_prime, e)?;
    let st = one_minus_mu_sq(e_prime, e)?.sqrt();
    let circle_int = |f: &dyn Fn(&Vec3) -> f64, w: &Vec3| {
        let r = rotation_to(w);
        let mut acc = KahanSum::new();
        for &(cs, sn) in &circle.angles {
            acc.add(f(&circle_point(&r, m, st, cs, sn)));
        }
        acc.value() * circle.weight
    };
    let left = sphere.integrate(|w| v(w) * circle_int(psi, w));
    let right = sphere.integrate(|w| psi(w) * circle_int(v, w));
    Ok((left - right).abs())
}

/// First-order Taylor value f(ω) + ⟨∇_S f(ω), log_ω(ω′)⟩ and residual f(ω′) − value.
pub fn sphere_taylor1(f: &dyn SphereFunction, w: &Vec3, wp: &Vec3) -> Result<(f64, f64), GeometryError> {
    let zeta = log_map(w, wp)?;
    let value = f.value(w) + surface_gradient(&f.gradient(w), w).dot(&zeta);
    Ok((value, f.value(wp) - value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Z;
    impl SphereFunction for Z {
        fn value(&self, w: &Vec3) -> f64 {
            w[2]
        }
        fn gradient(&self, _w: &Vec3) -> Vec3 {
            Vec3::new(0.0, 0.0, 1.0)
        }
        fn hessian(&self, _w: &Vec3) -> Matrix3<f64> {
            Matrix3::zeros()
        }
    }

    struct Quad;
    impl SphereFunction for Quad {
        fn value(&self, w: &Vec3) -> f64 {
            w[0] * w[0] - w[1] * w[1]
        }
        fn gradient(&self, w: &Vec3) -> Vec3 {
            Vec3::new(2.0 * w[0], -2.0 * w[1], 0.0)
        }
        fn hessian(&self, _w: &Vec3) -> Matrix3<f64> {
            Matrix3::from_diagonal(&Vec3::new(2.0, -2.0, 0.0))
        }
    }

    #[test]
    fn frame_examples() {
        let (o1, o2) = frame(&Vec3::new(1.0, 0.0, 0.0));
        assert!((o1 - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((o2 - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        let (p1, p2) = frame(&Vec3::new(0.0, 0.0, 1.0));
        assert!((p2 - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((p1 - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        let (q1, q2) = frame(&Vec3::new(0.0, 0.0, -1.0));
        assert!((q2 - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((q1 - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotation_is_proper() {
        for w in [
            Vec3::new(0.3, -0.5, 0.81).normalize(),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1e-5, 0.0, 1.0).normalize(),
        ] {
            let r = rotation_to(&w);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-14);
            assert!((r.determinant() - 1.0).abs() < 1e-14);
            assert!((r * Vec3::z() - w).norm() < 1e-15);
        }
    }

    #[test]
    fn scatter_circle_examples() {
        let g = scatter_circle(4.0, 2.0, &Vec3::z(), 0.0).unwrap();
        assert!((g - Vec3::new(0.5, 0.0, 3f64.sqrt() / 2.0)).norm() < 1e-15);
        let w = Vec3::new(0.2, 0.4, -0.3).normalize();
        assert_eq!(scatter_circle(2.5, 2.5, &w, 1.0).unwrap(), w);
        let g = scatter_circle(3.0, 1.5, &w, 0.7).unwrap();
        assert!((g.dot(&w) - mu(3.0, 1.5).unwrap()).abs() < 1e-15);
        assert!(scatter_circle(1.0, 2.0, &w, 0.0).is_err());
    }

    #[test]
    fn circle_derivatives_match_differences() {
        let w = Vec3::new(-0.6, 0.1, 0.5).normalize();
        let (ep, e, s) = (3.0, 1.8, 0.9);
        let h = 1e-5;
        let fd = (scatter_circle(ep + h, e, &w, s).unwrap() - scatter_circle(ep - h, e, &w, s).unwrap()) / (2.0 * h);
        let an = scatter_circle_de_prime(ep, e, &w, s).unwrap();
        assert!((fd - an).norm() < 1e-8);
        let fd = (scatter_circle(ep, e + h, &w, s).unwrap() - scatter_circle(ep, e - h, &w, s).unwrap()) / (2.0 * h);
        let an = scatter_circle_de(ep, e, &w, s).unwrap();
        assert!((fd - an).norm() < 1e-8);
        assert!(an.dot(&scatter_circle(ep, e, &w, s).unwrap()).abs() < 1e-12);
        assert!(scatter_circle_de(2.0, 2.0, &w, 0.0).is_err());
    }

    #[test]
    fn exp_log_examples() {
        let e1 = exp_map(&Vec3::z(), &(Vec3::x() * (PI / 2.0)));
        assert!((e1 - Vec3::x()).norm() < 1e-15);
        assert_eq!(exp_map(&Vec3::z(), &Vec3::zeros()), Vec3::z());
        let w = Vec3::new(0.1, 0.7, 0.2).normalize();
        let (o1, o2) = frame(&w);
        for &t in &[1e-9, 1e-5, 0.3, 2.0, 3.0] {
            let z = (o1 * 0.6 + o2 * 0.8) * t;
            let back = log_map(&w, &exp_map(&w, &z)).unwrap();
            assert!((back - z).norm() < 1e-10, "t={t}");
        }
        assert!(log_map(&Vec3::z(), &(-Vec3::z())).is_err());
    }

    #[test]
    fn laplace_beltrami_harmonics() {
        let w = Vec3::new(0.3, -0.2, 0.6).normalize();
        assert!((laplace_beltrami(&Z, &w) + 2.0 * w[2]).abs() < 1e-14);
        assert!((laplace_beltrami(&Quad, &w) + 6.0 * Quad.value(&w)).abs() < 1e-14);
        assert!((laplace_beltrami(&Quad, &Vec3::z())).abs() < 1e-14);
    }

    #[test]
    fn surface_gradient_example() {
        let g = surface_gradient(&Vec3::z(), &Vec3::x());
        assert!((g - Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn swap_constant() {
        let one = |_w: &Vec3| 1.0;
        let r = circle_sphere_swap_residual(&one, &one, 4.0, 2.0, &SphereRule::new(24, 48), &CircleRule::new(64)).unwrap();
        assert!(r < 1e-10);
    }

    #[test]
    fn taylor_residual_quadratic() {
        let w = Vec3::new(0.5, 0.5, 0.5).normalize();
        let (o1, _) = frame(&w);
        let mut last = 0.0;
        for (k, &h) in [0.1, 0.05, 0.025].iter().enumerate() {
            let wp = exp_map(&w, &(o1 * h));
            let (_, res) = sphere_taylor1(&Z, &w, &wp).unwrap();
            if k > 0 {
                assert!((last / res.abs()).log2() > 1.8);
            }
            last = res.abs();
        }
    }
}
