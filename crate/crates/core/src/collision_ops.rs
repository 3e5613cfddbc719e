//! Circle-averaging operators, their Hadamard finite-part compositions, the
//! collision operator in hyper-singular and pseudo-differential form, and the
//! restricted operator K_r = K¹ + K² + K³ with its adjoint.

use crate::finite_part::{FinitePartError, SingularRule};
use crate::kinematics_xs::{mu, mu_de, mu_de_prime, one_minus_mu_sq, CrossSectionSet, KinematicsError};
use crate::phase_field::{GridFunction, PhaseField, PhaseGrid, PhaseSpace, SeparableField};
use crate::quadrature::{composite_rule, composite_rule_with, CircleRule, GaussLegendre, Grading, KahanSum, QuadratureSpec, SphereRule};
use crate::sphere_geom::{circle_point, rotation_to, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollisionError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    FinitePart(#[from] FinitePartError),
    #[error("energy {e} outside [{e0}, {em})")]
    Energy { e: f64, e0: f64, em: f64 },
    #[error("invalid collision quadrature")]
    Quadrature,
}

pub type Result<T> = std::result::Result<T, CollisionError>;

/// Quadrature orders for the s, E′ and ω′ integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionQuadrature {
    /// Trapezoid nodes on the scattering circle.
    pub circle: usize,
    /// Singular E′ integrals, graded toward E′ = E.
    pub energy: QuadratureSpec,
    /// Polar × azimuthal nodes for ω′ in K¹ and K².
    pub kernel_sphere: [usize; 2],
    /// Regular E′ integrals in K¹ and K³.
    pub kernel_energy: QuadratureSpec,
}

impl Default for CollisionQuadrature {
    fn default() -> Self {
        CollisionQuadrature {
            circle: 32,
            energy: QuadratureSpec::new(8, 8, 2.0).with_sqrt_substitution(true),
            kernel_sphere: [8, 16],
            kernel_energy: QuadratureSpec::new(4, 8, 1.0),
        }
    }
}

impl CollisionQuadrature {
    pub fn is_valid(&self) -> bool {
        self.circle > 0
            && self.energy.is_valid()
            && self.kernel_energy.is_valid()
            && self.kernel_sphere[0] > 0
            && self.kernel_sphere[1] > 0
    }
}

/// Circle integrals of a field and of its derivatives along the circle family.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CircleMoments {
    /// ∫ f(γ(s)) ds
    pub value: f64,
    /// ∂/∂m of the circle integral at fixed field energy, m the circle cosine
    pub d_m: f64,
    /// ∫ ∂_E f(γ(s)) ds
    pub d_energy: f64,
}

/// Samples of [`CircleMoments`] on the nodes of a singular rule, plus the
/// limit at the singular point.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub rule: SingularRule,
    pub nodes: Vec<CircleMoments>,
    pub at: CircleMoments,
}

#[derive(Clone)]
pub struct CollisionContext {
    pub xs: Arc<dyn CrossSectionSet + Send>,
    pub space: PhaseSpace,
    pub quadrature: CollisionQuadrature,
    circle: CircleRule,
    gl: GaussLegendre,
    kernel_sphere: SphereRule,
    kernel_energy: Vec<(f64, f64)>,
    gl_kernel: GaussLegendre,
}

/// Below this value of 1 − m² the circle integrals use their m → 1 limits.
const CIRCLE_COLLAPSE: f64 = 1e-13;

impl CollisionContext {
    pub fn new(xs: Arc<dyn CrossSectionSet + Send>, space: PhaseSpace, quadrature: CollisionQuadrature) -> Result<Self> {
        if !quadrature.is_valid() {
            return Err(CollisionError::Quadrature);
        }
        let [kp, ka] = quadrature.kernel_sphere;
        Ok(CollisionContext {
            circle: CircleRule::new(quadrature.circle),
            gl: GaussLegendre::new(quadrature.energy.nodes_per_panel),
            kernel_sphere: SphereRule::new(kp, ka),
            kernel_energy: composite_rule(space.e0, space.em, &quadrature.kernel_energy, Grading::Uniform),
            gl_kernel: GaussLegendre::new(quadrature.kernel_energy.nodes_per_panel),
            xs,
            space,
            quadrature,
        })
    }

    pub fn with_defaults(xs: Arc<dyn CrossSectionSet + Send>, space: PhaseSpace) -> Self {
        Self::new(xs, space, CollisionQuadrature::default()).expect("default quadrature is valid")
    }

    pub fn sqrt_substitution(&self) -> bool {
        self.quadrature.energy.sqrt_substitution
    }

    fn check_energy(&self, e: f64) -> Result<()> {
        if e >= self.space.e0 && e < self.space.em {
            Ok(())
        } else {
            Err(CollisionError::Energy {
                e,
                e0: self.space.e0,
                em: self.space.em,
            })
        }
    }

    /// Circle moments of `f` on γ(e_hi, e_lo, ω), with `f` evaluated at energy `field_e`.
    #[allow(clippy::too_many_arguments)]
    pub fn moments(
        &self,
        f: &dyn PhaseField,
        x: &Vec3,
        w: &Vec3,
        r: &Matrix3<f64>,
        e_hi: f64,
        e_lo: f64,
        field_e: f64,
        derivs: bool,
    ) -> Result<CircleMoments> {
        let m = mu(e_hi, e_lo)?;
        let omm = one_minus_mu_sq(e_hi, e_lo)?;
        if omm < CIRCLE_COLLAPSE {
            return Ok(self.collapsed(f, x, w, field_e, derivs));
        }
        let st = omm.sqrt();
        let mut value = KahanSum::new();
        let mut d_m = KahanSum::new();
        let mut d_e = KahanSum::new();
        for &(cs, sn) in &self.circle.angles {
            let p = circle_point(r, m, st, cs, sn);
            value.add(f.eval(x, &p, field_e));
            if derivs {
                let k = -m / st;
                let t = r * Vec3::new(k * cs, k * sn, 1.0);
                d_m.add(f.grad_omega(x, &p, field_e).dot(&t));
                d_e.add(f.d_e(x, &p, field_e));
            }
        }
        let h = self.circle.weight;
        Ok(CircleMoments {
            value: h * value.value(),
            d_m: h * d_m.value(),
            d_energy: h * d_e.value(),
        })
    }

    /// Limits of the circle moments as the circle collapses to ω.
    fn collapsed(&self, f: &dyn PhaseField, x: &Vec3, w: &Vec3, field_e: f64, derivs: bool) -> CircleMoments {
        let value = 2.0 * PI * f.eval(x, w, field_e);
        if !derivs {
            return CircleMoments {
                value,
                ..Default::default()
            };
        }
        CircleMoments {
            value,
            d_m: -PI * f.laplace_s(x, w, field_e),
            d_energy: 2.0 * PI * f.d_e(x, w, field_e),
        }
    }

    /// Moments of ψ on γ(E′,E,ω) at energy E′ for the nodes E′ ∈ (E, Em).
    pub fn upper_sweep(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, order2: bool, derivs: bool) -> Result<Sweep> {
        self.upper_sweep_to(psi, x, w, e, self.space.em, order2, derivs)
    }

    /// As [`upper_sweep`](Self::upper_sweep) with E′ ∈ (E, end), end ≤ Em.
    #[allow(clippy::too_many_arguments)]
    pub fn upper_sweep_to(
        &self,
        psi: &dyn PhaseField,
        x: &Vec3,
        w: &Vec3,
        e: f64,
        end: f64,
        order2: bool,
        derivs: bool,
    ) -> Result<Sweep> {
        self.check_energy(e)?;
        let rule = self.rule(e, end.min(self.space.em), order2)?;
        let r = rotation_to(w);
        let mut nodes = Vec::with_capacity(rule.len());
        for &(ep, _) in &rule.nodes {
            nodes.push(self.moments(psi, x, w, &r, ep, e, ep, derivs)?);
        }
        let at = self.collapsed(psi, x, w, e, derivs);
        Ok(Sweep { rule, nodes, at })
    }

    /// Moments of v on γ(E′,E,ω′) at energy E for the nodes E ∈ (E0, E′).
    pub fn lower_sweep(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64, order2: bool, derivs: bool) -> Result<Sweep> {
        if !(e_prime > self.space.e0 && e_prime <= self.space.em) {
            return Err(CollisionError::Energy {
                e: e_prime,
                e0: self.space.e0,
                em: self.space.em,
            });
        }
        let rule = self.rule(e_prime, self.space.e0, order2)?;
        let r = rotation_to(w);
        let mut nodes = Vec::with_capacity(rule.len());
        for &(e, _) in &rule.nodes {
            nodes.push(self.moments(v, x, w, &r, e_prime, e, e, derivs)?);
        }
        let at = self.collapsed(v, x, w, e_prime, derivs);
        Ok(Sweep { rule, nodes, at })
    }

    fn rule(&self, x: f64, endpoint: f64, order2: bool) -> Result<SingularRule> {
        Ok(if order2 {
            let q = crate::finite_part::order2_spec(&self.quadrature.energy);
            SingularRule::with_reference(&self.gl, x, endpoint, &q)?
        } else {
            SingularRule::with_reference(&self.gl, x, endpoint, &self.quadrature.energy)?
        })
    }

    /// Bare circle integral ∫₀^{2π} ψ(x, γ(E′,E,ω)(s), E′) ds.
    pub fn circle_average(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64, e: f64) -> Result<f64> {
        let r = rotation_to(w);
        Ok(self.moments(psi, x, w, &r, e_prime, e, e_prime, false)?.value)
    }

    /// Sampled sup over E′ of |h₁(E′) − h₁(E)| / (E′−E)^{1/2} with
    /// h₁(E′) = ∫ψ(x,γ(E′,E,ω)(s),E′)ds and E′ − E = (Em − E)·2⁻ᵏ, k = 1..24.
    pub fn circle_average_holder_check(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        self.holder_ratios(psi, x, w, e).into_iter().fold(0.0, f64::max)
    }

    /// The ratios from [`CollisionContext::circle_average_holder_check`], from the widest gap down.
    pub fn holder_ratios(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Vec<f64> {
        let span = self.space.em - e;
        if !(span > 0.0) {
            return Vec::new();
        }
        let h0 = 2.0 * PI * psi.eval(x, w, e);
        (1..=24)
            .filter_map(|k| {
                let d = span * 0.5f64.powi(k);
                self.circle_average(psi, x, w, e + d, e)
                    .ok()
                    .map(|h| (h - h0).abs() / d.sqrt())
            })
            .collect()
    }

    /// 𝓗_j(K̄_jψ)(E) for j = 1, 2.
    pub fn hadamard_collision(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, j: usize) -> Result<f64> {
        let sweep = self.upper_sweep(psi, x, w, e, j == 2, j == 2)?;
        Ok(match j {
            1 => self.h1_of(&sweep, x, e, 1),
            _ => self.h2_k2(&sweep, x, e)?,
        })
    }

    /// 𝓗₁ of σ̂_j K̄ from a sweep.
    pub fn h1_of(&self, sweep: &Sweep, x: &Vec3, e: f64, j: usize) -> f64 {
        let vals: Vec<f64> = sweep
            .rule
            .nodes
            .iter()
            .zip(&sweep.nodes)
            .map(|(&(ep, _), m)| self.xs.sigma_hat(j, x, ep, e) * m.value)
            .collect();
        sweep.rule.pf1(self.xs.sigma_hat(j, x, e, e) * sweep.at.value, &vals)
    }

    /// ∂_{E′}(σ̂₂ K̄₂ψ)(E′,E) at E′ = E.
    pub fn dk2_de_prime_diag(&self, at: &CircleMoments, x: &Vec3, e: f64) -> Result<f64> {
        let xs = &self.xs;
        Ok(xs.sigma_hat_de_prime(2, x, e, e) * at.value + xs.sigma_hat(2, x, e, e) * (at.d_m * mu_de_prime(e, e)? + at.d_energy))
    }

    /// 𝓗₂(σ̂₂K̄₂ψ) from a sweep with order-2 nodes and derivatives.
    pub fn h2_k2(&self, sweep: &Sweep, x: &Vec3, e: f64) -> Result<f64> {
        let vals: Vec<f64> = sweep
            .rule
            .nodes
            .iter()
            .zip(&sweep.nodes)
            .map(|(&(ep, _), m)| self.xs.sigma_hat(2, x, ep, e) * m.value)
            .collect();
        let fx = self.xs.sigma_hat(2, x, e, e) * sweep.at.value;
        let dfx = self.dk2_de_prime_diag(&sweep.at, x, e)?;
        Ok(sweep.rule.pf2(fx, dfx, &vals))
    }

    /// 𝓗₁ of ∂_E(σ̂₂K̄₂ψ)(·,E), split into the σ̂₂-derivative part and the circle-derivative part.
    pub fn h1_dk2_de(&self, sweep: &Sweep, x: &Vec3, e: f64) -> Result<(f64, f64)> {
        let xs = &self.xs;
        let mut sig = Vec::with_capacity(sweep.nodes.len());
        let mut circ = Vec::with_capacity(sweep.nodes.len());
        for (&(ep, _), m) in sweep.rule.nodes.iter().zip(&sweep.nodes) {
            sig.push(xs.sigma_hat_de(2, x, ep, e) * m.value);
            circ.push(xs.sigma_hat(2, x, ep, e) * mu_de(ep, e)? * m.d_m);
        }
        let a = sweep.rule.pf1(xs.sigma_hat_de(2, x, e, e) * sweep.at.value, &sig);
        let b = sweep.rule.pf1(xs.sigma_hat(2, x, e, e) * mu_de(e, e)? * sweep.at.d_m, &circ);
        Ok((a, b))
    }

    /// 𝓗₁(K̄₂ψ)(E), from values only.
    pub fn h1_k2(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        let sweep = self.upper_sweep(psi, x, w, e, false, false)?;
        Ok(self.h1_of(&sweep, x, e, 2))
    }

    /// Step for central differences in E at `e`: `h`, or a thousandth of the
    /// distance to the nearer end of I when that is closer than 10 h.
    pub fn fd_step_at(&self, e: f64, h: f64) -> Result<f64> {
        let d = (e - self.space.e0).min(self.space.em - e);
        if !(d > 0.0) {
            return Err(CollisionError::Energy {
                e,
                e0: self.space.e0,
                em: self.space.em,
            });
        }
        Ok(if d > 10.0 * h { h } else { 1e-3 * d })
    }

    /// ∂_E 𝓗₁(K̄₂ψ)(E) by central differences.
    pub fn d_h1_k2(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, h: f64) -> Result<f64> {
        let h = self.fd_step_at(e, h)?;
        Ok((self.h1_k2(psi, x, w, e + h)? - self.h1_k2(psi, x, w, e - h)?) / (2.0 * h))
    }

    /// Kψ in hyper-singular form: 𝓗₂(K̄₂ψ) − 𝓗₁(K̄₁ψ) + K_rψ.
    pub fn collision_hadamard_form(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        let sweep = self.upper_sweep(psi, x, w, e, true, true)?;
        Ok(self.h2_k2(&sweep, x, e)? - self.h1_of(&sweep, x, e, 1) + self.restricted_apply(psi, x, w, e)?)
    }

    /// Kψ in pseudo-differential form, outer E-derivative by central differences of step `h`.
    pub fn collision_pseudo_form(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, h: f64) -> Result<f64> {
        let outer = self.d_h1_k2(psi, x, w, e, h)?;
        let sweep = self.upper_sweep(psi, x, w, e, false, true)?;
        let (a, b) = self.h1_dk2_de(&sweep, x, e)?;
        let diag = self.dk2_de_prime_diag(&sweep.at, x, e)?;
        Ok(outer - (a + b) + diag - self.h1_of(&sweep, x, e, 1) + self.restricted_apply(psi, x, w, e)?)
    }

    pub fn k1_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (wp, ww) in &self.kernel_sphere.points {
            let mut s = KahanSum::new();
            for &(ep, we) in &self.kernel_energy {
                s.add(we * self.xs.sigma1(x, wp, w, ep, e) * psi.eval(x, wp, ep));
            }
            acc.add(ww * s.value());
        }
        acc.value()
    }

    pub fn k2_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (wp, ww) in &self.kernel_sphere.points {
            acc.add(ww * self.xs.sigma2(x, wp, w, e) * psi.eval(x, wp, e));
        }
        acc.value()
    }

    pub fn k3_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        if e >= self.space.em {
            return Ok(0.0);
        }
        let r = rotation_to(w);
        let mut acc = KahanSum::new();
        for (ep, we) in composite_rule_with(&self.gl_kernel, e, self.space.em, &self.quadrature.kernel_energy, Grading::Uniform) {
            let s = self.xs.sigma3_hat(x, ep, e);
            if s != 0.0 {
                acc.add(we * s * self.moments(psi, x, w, &r, ep, e, ep, false)?.value);
            }
        }
        Ok(acc.value())
    }

    pub fn k1_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (wp, ww) in &self.kernel_sphere.points {
            let mut s = KahanSum::new();
            for &(ep, we) in &self.kernel_energy {
                s.add(we * self.xs.sigma1(x, w, wp, e, ep) * v.eval(x, wp, ep));
            }
            acc.add(ww * s.value());
        }
        acc.value()
    }

    pub fn k2_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let mut acc = KahanSum::new();
        for (wp, ww) in &self.kernel_sphere.points {
            acc.add(ww * self.xs.sigma2(x, w, wp, e) * v.eval(x, wp, e));
        }
        acc.value()
    }

    /// (K³)*v(x,ω,E) = ∫_{E0}^{E} σ̂³(x,E,E″) ∫ v(x,γ(E,E″,ω)(s),E″) ds dE″.
    pub fn k3_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        if e <= self.space.e0 {
            return Ok(0.0);
        }
        let r = rotation_to(w);
        let mut acc = KahanSum::new();
        for (ei, we) in composite_rule_with(&self.gl_kernel, self.space.e0, e, &self.quadrature.kernel_energy, Grading::Uniform) {
            let s = self.xs.sigma3_hat(x, e, ei);
            if s != 0.0 {
                acc.add(we * s * self.moments(v, x, w, &r, e, ei, ei, false)?.value);
            }
        }
        Ok(acc.value())
    }

    /// K_rψ = K¹ψ + K²ψ + K³ψ.
    pub fn restricted_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        Ok(self.k1_apply(psi, x, w, e) + self.k2_apply(psi, x, w, e) + self.k3_apply(psi, x, w, e)?)
    }

    /// K_r*v.
    pub fn restricted_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        Ok(self.k1_adjoint_apply(v, x, w, e) + self.k2_adjoint_apply(v, x, w, e) + self.k3_adjoint_apply(v, x, w, e)?)
    }

    /// Values of a collision-type operator on a grid. `op` must be linear in
    /// the field and act pointwise in x through kernels carrying the spatial
    /// profile of the cross sections; separable fields are then evaluated on
    /// one S×I slice at x = 0 and scaled.
    pub fn collision_grid<F>(&self, grid: &PhaseGrid, field: &dyn PhaseField, op: F) -> Result<GridFunction>
    where
        F: Fn(&dyn PhaseField, &Vec3, &Vec3, f64) -> Result<f64>,
    {
        if let Some(sep) = self.factorable(field) {
            let slice = self.collision_slice(grid, &sep.angular_energy_part(), op)?;
            return Ok(self.broadcast(grid, slice, sep));
        }
        let mut err = None;
        let g = grid.sample(|x, w, e| match op(field, x, w, e) {
            Ok(v) => v,
            Err(er) => {
                if err.is_none() {
                    err = Some(er);
                }
                0.0
            }
        });
        match err {
            Some(er) => Err(er),
            None => Ok(g),
        }
    }
    /// The field as a separable field when collision operators factor on it.
    pub fn factorable<'f>(&self, field: &'f dyn PhaseField) -> Option<&'f SeparableField> {
        let sep = field.as_separable()?;
        self.xs.spatial_profile(&Vec3::zeros())?;
        Some(sep)
    }

    /// `op` applied to a reduced field on the S×I slice at x = 0.
    pub fn collision_slice<F>(&self, grid: &PhaseGrid, reduced: &SeparableField, op: F) -> Result<Vec<f64>>
    where
        F: Fn(&dyn PhaseField, &Vec3, &Vec3, f64) -> Result<f64>,
    {
        let origin = Vec3::zeros();
        let mut err = None;
        let slice = grid.sample_slice(|w, e| match op(reduced, &origin, w, e) {
            Ok(v) => v,
            Err(er) => {
                err.get_or_insert(er);
                0.0
            }
        });
        match err {
            Some(er) => Err(er),
            None => Ok(slice),
        }
    }

    /// Extends a slice from [`collision_slice`](Self::collision_slice) to the grid.
    pub fn broadcast(&self, grid: &PhaseGrid, slice: Vec<f64>, sep: &SeparableField) -> GridFunction {
        grid.broadcast(slice, |x| self.xs.spatial_profile(x).unwrap_or(0.0) * sep.spatial_value(x))
    }
}
