//! Truncation of the singular energy integrals at E′ = κE, the resulting
//! continuous-slowing-down / Fokker–Planck operator T_κ, its adjoint, and
//! the κ → 1 convergence sweep.

use crate::collision_ops::{CollisionContext, CollisionError};
use crate::kinematics_xs::mu_de_prime;
use crate::phase_field::{boundary_flux, PhaseField, PhaseGrid};
use crate::quadrature::{composite_rule_with, GaussLegendre, Grading, KahanSum, QuadratureSpec};
use crate::sphere_geom::{rotation_to, Vec3};
use crate::transport_variational::{Assembler, TransportContext, TransportError, TransportForm};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsdaError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("kappa must be > 1, got {0}")]
    Kappa(f64),
    #[error("a convergence sweep needs at least 3 kappa values, got {0}")]
    DegenerateSweep(usize),
}

impl From<CollisionError> for CsdaError {
    fn from(e: CollisionError) -> Self {
        CsdaError::Transport(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CsdaError>;

fn default_kappa() -> f64 {
    1.5
}

fn default_sweep() -> Vec<f64> {
    (1..=6).map(|k| 1.0 + 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaConfig {
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Decreasing toward 1.
    #[serde(default = "default_sweep")]
    pub kappa_sweep: Vec<f64>,
}

impl Default for KappaConfig {
    fn default() -> Self {
        KappaConfig {
            kappa: default_kappa(),
            kappa_sweep: default_sweep(),
        }
    }
}

impl KappaConfig {
    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        for &k in &self.kappa_sweep {
            check_kappa(k)?;
        }
        Ok(())
    }
}

fn check_kappa(k: f64) -> Result<()> {
    if k > 1.0 && k.is_finite() {
        Ok(())
    } else {
        Err(CsdaError::Kappa(k))
    }
}

#[derive(Clone)]
pub struct CsdaContext {
    pub transport: TransportContext,
    /// Rule for the regular pieces beyond the cut-off, graded toward it.
    pub regular: QuadratureSpec,
    gl: GaussLegendre,
}

impl CsdaContext {
    pub fn new(transport: TransportContext) -> Self {
        let regular = QuadratureSpec::new(16, 8, 1.6);
        CsdaContext {
            gl: GaussLegendre::new(regular.nodes_per_panel),
            regular,
            transport,
        }
    }

    fn c(&self) -> &CollisionContext {
        &self.transport.collision
    }

    /// min(κE, Em).
    pub fn cutoff(&self, e: f64, kappa: f64) -> f64 {
        (kappa * e).min(self.c().space.em)
    }

    /// K_{j,0,κ}ψ(E) = ∫_{min(κE,Em)}^{Em} σ̂_j(x,E′,E)/(E′−E)^j ∫ψ(x,γ(E′,E,ω)(s),E′) ds dE′.
    pub fn regular_part(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, j: usize, kappa: f64) -> Result<f64> {
        check_kappa(kappa)?;
        let c = self.c();
        let b = self.cutoff(e, kappa);
        let r = rotation_to(w);
        let mut acc = KahanSum::new();
        for (ep, we) in composite_rule_with(&self.gl, b, c.space.em, &self.regular, Grading::Left) {
            let s = c.xs.sigma_hat(j, x, ep, e);
            if s != 0.0 {
                let g = c.moments(psi, x, w, &r, ep, e, ep, false)?.value;
                acc.add(we * s * g / (ep - e).powi(j as i32));
            }
        }
        Ok(acc.value())
    }

    /// (K_{j,0,κ})*v(E′) = ∫_{E0}^{E′/κ} σ̂_j(x,E′,E)/(E′−E)^j ∫v(x,γ(E′,E,ω′)(s),E) ds dE.
    pub fn regular_adjoint(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64, j: usize, kappa: f64) -> Result<f64> {
        check_kappa(kappa)?;
        let c = self.c();
        let top = e_prime / kappa;
        let r = rotation_to(w);
        let mut acc = KahanSum::new();
        for (e, we) in composite_rule_with(&self.gl, c.space.e0, top, &self.regular, Grading::Right) {
            let s = c.xs.sigma_hat(j, x, e_prime, e);
            if s != 0.0 {
                let g = c.moments(v, x, w, &r, e_prime, e, e, false)?.value;
                acc.add(we * s * g / (e_prime - e).powi(j as i32));
            }
        }
        Ok(acc.value())
    }

    /// (K_{j,1,κ}ψ, K_{j,0,κ}ψ): the finite part over [E, min(κE,Em)] and the
    /// regular integral beyond it.
    pub fn split_k(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, j: usize, kappa: f64) -> Result<(f64, f64)> {
        check_kappa(kappa)?;
        let c = self.c();
        let b = self.cutoff(e, kappa);
        let sweep = c.upper_sweep_to(psi, x, w, e, b, j == 2, j == 2)?;
        let singular = if j == 2 { c.h2_k2(&sweep, x, e)? } else { c.h1_of(&sweep, x, e, 1) };
        Ok((singular, self.regular_part(psi, x, w, e, j, kappa)?))
    }

    /// ln(min(κE,Em) − E).
    fn log_gap(&self, e: f64, kappa: f64) -> f64 {
        (self.cutoff(e, kappa) - e).ln()
    }

    /// S_κ(x,E) = 2π σ̂₂(x,E,E) ln(min(κE,Em) − E).
    pub fn stopping_power(&self, x: &Vec3, e: f64, kappa: f64) -> f64 {
        2.0 * PI * self.c().xs.sigma_hat(2, x, e, e) * self.log_gap(e, kappa)
    }

    /// ∂_E S_κ(x,E).
    pub fn stopping_power_de(&self, x: &Vec3, e: f64, kappa: f64) -> f64 {
        let xs = &self.c().xs;
        let em = self.c().space.em;
        let dl = if kappa * e < em { 1.0 / e } else { -1.0 / (em - e) };
        2.0 * PI
            * ((xs.sigma_hat_de_prime(2, x, e, e) + xs.sigma_hat_de(2, x, e, e)) * self.log_gap(e, kappa)
                + xs.sigma_hat(2, x, e, e) * dl)
    }

    /// Σ_κ − Σ.
    pub fn absorption_shift(&self, x: &Vec3, e: f64, kappa: f64) -> f64 {
        let xs = &self.c().xs;
        let l = self.log_gap(e, kappa);
        2.0 * PI
            * (xs.sigma_hat(2, x, e, e) / (self.cutoff(e, kappa) - e) - l * xs.sigma_hat_de_prime(2, x, e, e)
                + l * xs.sigma_hat(1, x, e, e))
    }

    /// Q_κψ = ln(min(κE,Em) − E) σ̂₂(x,E,E) (−π ∂_{E′}μ(E,E) Δ_Sψ).
    pub fn fokker_planck(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        let dmu = mu_de_prime(e, e).map_err(CollisionError::from)?;
        Ok(self.log_gap(e, kappa) * self.c().xs.sigma_hat(2, x, e, e) * (-PI * dmu * psi.laplace_s(x, w, e)))
    }

    fn check_interior(&self, e: f64) -> Result<()> {
        let s = &self.c().space;
        if e > s.e0 && e < s.em {
            Ok(())
        } else {
            Err(CollisionError::Energy { e, e0: s.e0, em: s.em }.into())
        }
    }

    /// T_κψ − ω·∇ₓψ − Σψ.
    pub fn collision_part(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        check_kappa(kappa)?;
        self.check_interior(e)?;
        let c = self.c();
        let local = -self.stopping_power(x, e, kappa) * psi.d_e(x, w, e) - self.fokker_planck(psi, x, w, e, kappa)?
            + self.absorption_shift(x, e, kappa) * psi.eval(x, w, e);
        let kr = c.restricted_apply(psi, x, w, e)?;
        let k20 = self.regular_part(psi, x, w, e, 2, kappa)?;
        let k10 = self.regular_part(psi, x, w, e, 1, kappa)?;
        Ok(local - (kr + k20 - k10))
    }

    /// T_κψ = −S_κ∂_Eψ − Q_κψ + ω·∇ₓψ + Σ_κψ − K_{r,κ}ψ.
    pub fn csda_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        Ok(self.transport.local_part(psi, x, w, e) + self.collision_part(psi, x, w, e, kappa)?)
    }

    /// T_κ*v + ω·∇ₓv − Σv.
    pub fn adjoint_collision_part(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        check_kappa(kappa)?;
        self.check_interior(e)?;
        let c = self.c();
        let local = self.stopping_power(x, e, kappa) * v.d_e(x, w, e) - self.fokker_planck(v, x, w, e, kappa)?
            + (self.stopping_power_de(x, e, kappa) + self.absorption_shift(x, e, kappa)) * v.eval(x, w, e);
        let kr = c.restricted_adjoint_apply(v, x, w, e)?;
        let k20 = self.regular_adjoint(v, x, w, e, 2, kappa)?;
        let k10 = self.regular_adjoint(v, x, w, e, 1, kappa)?;
        Ok(local - (kr + k20 - k10))
    }

    /// T_κ*v = S_κ∂_Ev + (∂_ES_κ)v − Q_κv − ω·∇ₓv + Σ_κv − K_{r,κ}*v.
    pub fn csda_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        let xs = &self.c().xs;
        let local = -w.dot(&v.grad_x(x, w, e)) + xs.total(x, w, e) * v.eval(x, w, e);
        Ok(local + self.adjoint_collision_part(v, x, w, e, kappa)?)
    }

    /// Tψ − T_κψ, with T in strong form.
    pub fn truncation_error(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, kappa: f64) -> Result<f64> {
        let t = self.transport.transport_apply(psi, x, w, e, TransportForm::Strong)?;
        Ok(t - self.csda_apply(psi, x, w, e, kappa)?)
    }

    /// (⟨T_κψ,v⟩, ⟨ψ,T_κ*v⟩ + ∫_∂G (ω·ν)ψv) on a grid with energy breaks at
    /// κE0 and Em/κ.
    pub fn pairing(&self, psi: &dyn PhaseField, v: &dyn PhaseField, kappa: f64) -> Result<(f64, f64)> {
        check_kappa(kappa)?;
        let space = &self.c().space;
        let grid = PhaseGrid::with_energy_breaks(space, &[kappa * space.e0, space.em / kappa]);
        let asm = Assembler::with_grid(&self.transport, grid);
        let wrap = |r: Result<f64>| {
            r.map_err(|er| match er {
                CsdaError::Transport(t) => t,
                other => panic!("kappa validated above: {other}"),
            })
        };
        let t = asm.collision("csda", psi, |g, x, w, e| wrap(self.collision_part(g, x, w, e, kappa)))?;
        let ts = asm.collision("csda*", v, |g, x, w, e| wrap(self.adjoint_collision_part(g, x, w, e, kappa)))?;
        let lhs_local = asm.grid.add(&asm.advection(psi), &asm.sigma(psi));
        let rhs_local = asm.grid.sub(&asm.sigma(v), &asm.advection(v));
        let (pg, vg) = (asm.field(psi), asm.field(v));
        let lhs = asm.inner(&asm.grid.add(&lhs_local, &t), &vg);
        let rhs = asm.inner(&pg, &asm.grid.add(&rhs_local, &ts)) + boundary_flux(psi, v, space);
        Ok((lhs, rhs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub kappa: f64,
    pub sup_error: f64,
    pub l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of ln(sup_error) against ln(κ − 1); NaN when some
    /// error is zero or not finite.
    pub fitted_slope: f64,
    pub runtime_seconds: f64,
}

/// Least-squares slope of ln y against ln x.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 || xs.len() != ys.len() || ys.iter().any(|&y| !(y > 0.0 && y.is_finite())) {
        return f64::NAN;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

/// sup and root-mean-square of Tψ − T_κψ over the phase points, for every
/// field and κ in the sweep; the slope is fitted to the sup errors.
pub fn convergence_sweep(
    fields: &[&dyn PhaseField],
    ctx: &CsdaContext,
    sweep: &[f64],
    points: &[(Vec3, Vec3, f64)],
) -> Result<ConvergenceReport> {
    let start = Instant::now();
    if sweep.len() < 3 {
        return Err(CsdaError::DegenerateSweep(sweep.len()));
    }
    for &k in sweep {
        check_kappa(k)?;
    }
    let mut reference = Vec::with_capacity(fields.len() * points.len());
    for f in fields {
        for (x, w, e) in points {
            reference.push(ctx.transport.transport_apply(*f, x, w, *e, TransportForm::Strong)?);
        }
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for &kappa in sweep {
        let mut sup: f64 = 0.0;
        let mut sq = KahanSum::new();
        let mut i = 0;
        for f in fields {
            for (x, w, e) in points {
                let d = reference[i] - ctx.csda_apply(*f, x, w, *e, kappa)?;
                sup = if sup.is_nan() || d.is_nan() { f64::NAN } else { sup.max(d.abs()) };
                sq.add(d * d);
                i += 1;
            }
        }
        let n = reference.len().max(1) as f64;
        rows.push(ConvergenceRow {
            kappa,
            sup_error: sup,
            l2_error: (sq.value() / n).sqrt(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.kappa - 1.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    Ok(ConvergenceReport {
        fitted_slope: log_log_slope(&xs, &ys),
        rows,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics_xs::{builtin_xs, XsParams};
    use crate::phase_field::{phase_points, PhaseSpace, SeparableField};
    use std::sync::Arc;

    fn ctx(p: XsParams) -> CsdaContext {
        let xs = builtin_xs("synthetic", &p).unwrap();
        let c = CollisionContext::with_defaults(Arc::new(xs), PhaseSpace::default());
        CsdaContext::new(TransportContext::with_defaults(c))
    }

    #[test]
    fn default_sweep_halves() {
        let k = KappaConfig::default();
        assert_eq!(k.kappa_sweep, vec![1.5, 1.25, 1.125, 1.0625, 1.03125, 1.015625]);
        assert!(k.validate().is_ok());
        assert!(KappaConfig { kappa: 1.0, ..k }.validate().is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [0.5, 0.25, 0.125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
        assert!((log_log_slope(&xs, &ys) - 0.7).abs() < 1e-12);
        assert!(log_log_slope(&xs, &[0.0, 0.0, 0.0]).is_nan());
    }

    #[test]
    fn split_is_additive() {
        let c = ctx(XsParams::default());
        let f = SeparableField::from_id("a1*Y10*cm2", &c.transport.collision.space).unwrap();
        for (x, w, e) in phase_points(&c.transport.collision.space, 6, 3, 0.05) {
            for j in [1, 2] {
                let (s, r) = c.split_k(&f, &x, &w, e, j, 1.1).unwrap();
                let full = c.transport.collision.hadamard_collision(&f, &x, &w, e, j).unwrap();
                assert!((s + r - full).abs() <= 1e-8 * (1.0 + full.abs()), "j={j} {s}+{r} vs {full}");
            }
        }
    }

    #[test]
    fn regular_part_empty_above_em() {
        let c = ctx(XsParams::default());
        let f = SeparableField::constant(&c.transport.collision.space);
        let x = Vec3::zeros();
        let w = Vec3::z();
        assert_eq!(c.regular_part(&f, &x, &w, 2.5, 2, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn exact_without_singular_parts() {
        let p = XsParams {
            c1: 0.0,
            c2: 0.0,
            ..XsParams::default()
        };
        let c = ctx(p);
        let f = SeparableField::from_id("ab*Y22*cmb", &c.transport.collision.space).unwrap();
        for (x, w, e) in phase_points(&c.transport.collision.space, 8, 1, 0.05) {
            assert_eq!(c.truncation_error(&f, &x, &w, e, 1.25).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_field_sweep_reports_nan() {
        let c = ctx(XsParams::default());
        let z = SeparableField::zero(&c.transport.collision.space);
        let pts = phase_points(&c.transport.collision.space, 4, 0, 0.05);
        let r = convergence_sweep(&[&z], &c, &default_sweep(), &pts).unwrap();
        assert!(r.rows.iter().all(|r| r.sup_error == 0.0 && r.l2_error == 0.0));
        assert!(r.fitted_slope.is_nan());
        assert!(matches!(
            convergence_sweep(&[&z], &c, &[1.5, 1.25], &pts),
            Err(CsdaError::DegenerateSweep(2))
        ));
    }
}
