//! The exact transport operator T in strong, pseudo-differential and refined
//! form, the adjoints A₁*, A₂*, and the bilinear forms B₀, B₁, B₂ with the
//! linear form F of the weak problem.

use crate::collision_ops::{CollisionContext, CollisionError};
use crate::kinematics_xs::{mu_de, mu_de_prime};
use crate::phase_field::{
    advection_on_grid, builtin_fields, phase_points, trace_fields, GridFunction, GridTerm, PhaseField, PhaseGrid,
    SeparableField, Side,
};
use crate::sphere_geom::Vec3;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error("finite-difference step {0} must lie in (0, |I|/10)")]
    FdStep(f64),
    #[error("unknown transport form `{0}`")]
    UnknownForm(String),
    #[error("field `{field}` does not vanish at E = {energy}")]
    Vanishing { field: String, energy: f64 },
}

pub type Result<T> = std::result::Result<T, TransportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportForm {
    Strong,
    Pseudo,
    Refined,
}

impl std::str::FromStr for TransportForm {
    type Err = TransportError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(TransportForm::Strong),
            "pseudo" => Ok(TransportForm::Pseudo),
            "refined" => Ok(TransportForm::Refined),
            _ => Err(TransportError::UnknownForm(s.into())),
        }
    }
}

/// Variant of B₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum B2Variant {
    /// Order-2 finite part on the test-field side.
    Hyper,
    /// Order-1 singularities only.
    Lowered,
}

#[derive(Clone)]
pub struct TransportContext {
    pub collision: CollisionContext,
    /// Central-difference step for the outer E-derivative.
    pub fd_step: f64,
    pub form: TransportForm,
    /// Keep the Γ₊ trace term in B₀. Set to false when test functions are
    /// taken to vanish on Γ₊.
    pub outflow_term: bool,
}

impl TransportContext {
    pub fn new(collision: CollisionContext, fd_step: f64, form: TransportForm) -> Result<Self> {
        let len = collision.space.em - collision.space.e0;
        if !(fd_step > 0.0 && fd_step < len / 10.0) {
            return Err(TransportError::FdStep(fd_step));
        }
        Ok(TransportContext {
            collision,
            fd_step,
            form,
            outflow_term: true,
        })
    }

    pub fn with_defaults(collision: CollisionContext) -> Self {
        Self::new(collision, 1e-4, TransportForm::Refined).expect("default step is valid")
    }

    fn c(&self) -> &CollisionContext {
        &self.collision
    }

    /// ω·∇ₓψ + Σψ.
    pub fn local_part(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        w.dot(&psi.grad_x(x, w, e)) + self.c().xs.total(x, w, e) * psi.eval(x, w, e)
    }

    /// The collision terms of Tψ, i.e. Tψ − ω·∇ₓψ − Σψ.
    pub fn collision_part(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, form: TransportForm) -> Result<f64> {
        let c = self.c();
        let kr = c.restricted_apply(psi, x, w, e)?;
        Ok(match form {
            TransportForm::Strong => {
                let sweep = c.upper_sweep(psi, x, w, e, true, true)?;
                let h2 = c.h2_k2(&sweep, x, e)?;
                let h1 = c.h1_of(&sweep, x, e, 1);
                (-h2 + h1) - kr
            }
            TransportForm::Pseudo => {
                let outer = c.d_h1_k2(psi, x, w, e, self.fd_step)?;
                let sweep = c.upper_sweep(psi, x, w, e, false, true)?;
                let (a, b) = c.h1_dk2_de(&sweep, x, e)?;
                let diag = c.dk2_de_prime_diag(&sweep.at, x, e)?;
                -(outer - (a + b) + diag - c.h1_of(&sweep, x, e, 1) + kr)
            }
            TransportForm::Refined => {
                let xs = &c.xs;
                let outer = c.d_h1_k2(psi, x, w, e, self.fd_step)?;
                let sweep = c.upper_sweep(psi, x, w, e, false, true)?;
                let s2 = xs.sigma_hat(2, x, e, e);
                let fokker = -PI * mu_de_prime(e, e).map_err(CollisionError::from)? * psi.laplace_s(x, w, e);
                let (sig_term, grad_term) = c.h1_dk2_de(&sweep, x, e)?;
                -outer - 2.0 * PI * s2 * psi.d_e(x, w, e) - s2 * fokker
                    + grad_term
                    + sig_term
                    + c.h1_of(&sweep, x, e, 1)
                    - 2.0 * PI * xs.sigma_hat_de_prime(2, x, e, e) * psi.eval(x, w, e)
                    - kr
            }
        })
    }

    /// (Tψ)(x,ω,E) in the requested form.
    pub fn transport_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64, form: TransportForm) -> Result<f64> {
        Ok(self.local_part(psi, x, w, e) + self.collision_part(psi, x, w, e, form)?)
    }

    /// A₁ψ = 𝓗₁(K̄₁ψ).
    pub fn a1_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        Ok(self.c().hadamard_collision(psi, x, w, e, 1)?)
    }

    /// A₂ψ = −𝓗₂(K̄₂ψ).
    pub fn a2_apply(&self, psi: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        Ok(-self.c().hadamard_collision(psi, x, w, e, 2)?)
    }

    /// (A₁*v)(x,ω′,E′) = p.f.∫_{E0}^{E′} σ̂₁(x,E′,E)/(E′−E) ∫v(x,γ(E′,E,ω′)(s),E) ds dE.
    pub fn adjoint_a1_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64) -> Result<f64> {
        let c = self.c();
        let sweep = c.lower_sweep(v, x, w, e_prime, false, false)?;
        let vals: Vec<f64> = sweep
            .rule
            .nodes
            .iter()
            .zip(&sweep.nodes)
            .map(|(&(e, _), m)| c.xs.sigma_hat(1, x, e_prime, e) * m.value)
            .collect();
        // 1/(E′−E) = −1/(E−E′) against the lower finite part
        Ok(-sweep.rule.pf1(c.xs.sigma_hat(1, x, e_prime, e_prime) * sweep.at.value, &vals))
    }

    /// (A₂*v)(x,ω′,E′) = −p.f.∫_{E0}^{E′} σ̂₂(x,E′,E)/(E′−E)² ∫v(x,γ(E′,E,ω′)(s),E) ds dE.
    pub fn adjoint_a2_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64) -> Result<f64> {
        let c = self.c();
        let xs = &c.xs;
        let sweep = c.lower_sweep(v, x, w, e_prime, true, true)?;
        let vals: Vec<f64> = sweep
            .rule
            .nodes
            .iter()
            .zip(&sweep.nodes)
            .map(|(&(e, _), m)| xs.sigma_hat(2, x, e_prime, e) * m.value)
            .collect();
        let at = &sweep.at;
        let fx = xs.sigma_hat(2, x, e_prime, e_prime) * at.value;
        let dfx = xs.sigma_hat_de(2, x, e_prime, e_prime) * at.value
            + xs.sigma_hat(2, x, e_prime, e_prime) * (at.d_m * mu_de(e_prime, e_prime).map_err(CollisionError::from)? + at.d_energy);
        Ok(-sweep.rule.pf2(fx, dfx, &vals))
    }

    /// The lowered B₂ density paired with ψ, without the ∇_S⊗∇_S term.
    pub fn lowered_b2_density(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e_prime: f64) -> Result<f64> {
        let c = self.c();
        let xs = &c.xs;
        let sweep = c.lower_sweep(v, x, w, e_prime, false, true)?;
        let mut vals = Vec::with_capacity(sweep.nodes.len());
        for (&(e, _), m) in sweep.rule.nodes.iter().zip(&sweep.nodes) {
            let s = xs.sigma_hat(2, x, e_prime, e);
            let dmu = mu_de(e_prime, e).map_err(CollisionError::from)?;
            vals.push(s * m.d_energy + s * dmu * m.d_m + xs.sigma_hat_de(2, x, e_prime, e) * m.value);
        }
        let at = &sweep.at;
        let s = xs.sigma_hat(2, x, e_prime, e_prime);
        let ds = xs.sigma_hat_de(2, x, e_prime, e_prime);
        let dmu = mu_de(e_prime, e_prime).map_err(CollisionError::from)?;
        let fx = s * at.d_energy + s * dmu * at.d_m + ds * at.value;
        let singular = -sweep.rule.pf1(fx, &vals);
        Ok(singular + s * at.d_energy + ds * at.value)
    }

    /// π σ̂₂(x,E,E) ∂_Eμ(E,E) ⟨∇_Sψ, ∇_Sv⟩.
    pub fn b2_gradient_density(&self, psi: &dyn PhaseField, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        let xs = &self.c().xs;
        let dmu = mu_de(e, e).map_err(CollisionError::from)?;
        Ok(PI * xs.sigma_hat(2, x, e, e) * dmu * psi.grad_s(x, w, e).dot(&v.grad_s(x, w, e)))
    }

    /// −ω·∇ₓv + Σv − K_r*v.
    pub fn a0_adjoint_apply(&self, v: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64) -> Result<f64> {
        Ok(-w.dot(&v.grad_x(x, w, e)) + self.c().xs.total(x, w, e) * v.eval(x, w, e)
            - self.c().restricted_adjoint_apply(v, x, w, e)?)
    }
}

/// Every term of the weak identity for one (ψ, v) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BilinearReport {
    pub B0: f64,
    pub B1: f64,
    pub B2: f64,
    pub B_total: f64,
    pub F: f64,
    pub residual: f64,
    /// ‖Tψ‖·‖v‖, the scale of the residual tolerance.
    pub scale: f64,
}

/// Grid assembly of operators and pairings over G×S×I.
pub struct Assembler<'a> {
    pub ctx: &'a TransportContext,
    pub grid: PhaseGrid,
    cache: RefCell<HashMap<(&'static str, String), Vec<f64>>>,
}

impl<'a> Assembler<'a> {
    pub fn new(ctx: &'a TransportContext) -> Self {
        Self::with_grid(ctx, PhaseGrid::new(&ctx.collision.space))
    }

    pub fn with_grid(ctx: &'a TransportContext, grid: PhaseGrid) -> Self {
        Assembler {
            ctx,
            grid,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn field(&self, f: &dyn PhaseField) -> GridFunction {
        self.grid.sample_field(f)
    }

    pub fn inner(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        self.grid.inner(a, b)
    }

    /// Σψ on the grid.
    pub fn sigma(&self, f: &dyn PhaseField) -> GridFunction {
        let xs = &self.ctx.collision.xs;
        match xs.constant_total() {
            Some(s) => self.field(f).scale(s),
            None => self.grid.sample(|x, w, e| xs.total(x, w, e) * f.eval(x, w, e)),
        }
    }

    pub fn advection(&self, f: &dyn PhaseField) -> GridFunction {
        advection_on_grid(&self.grid, f)
    }

    /// A collision-type operator on the grid. Slices of separable fields are
    /// cached under `tag`, which must identify the operator.
    pub fn collision<F>(&self, tag: &'static str, f: &dyn PhaseField, op: F) -> Result<GridFunction>
    where
        F: Fn(&dyn PhaseField, &Vec3, &Vec3, f64) -> Result<f64>,
    {
        let coll = &self.ctx.collision;
        let wrapped = |g: &dyn PhaseField, x: &Vec3, w: &Vec3, e: f64| -> std::result::Result<f64, CollisionError> {
            op(g, x, w, e).map_err(|er| match er {
                TransportError::Collision(c) => c,
                other => panic!("non-collision error inside a collision operator: {other}"),
            })
        };
        let Some(sep) = coll.factorable(f) else {
            return Ok(coll.collision_grid(&self.grid, f, wrapped)?);
        };
        let reduced = sep.angular_energy_part();
        let key = (tag, reduced.id());
        let cached = self.cache.borrow().get(&key).cloned();
        let slice = match cached {
            Some(s) => s,
            None => {
                let s = coll.collision_slice(&self.grid, &reduced, wrapped)?;
                self.cache.borrow_mut().insert(key, s.clone());
                s
            }
        };
        Ok(coll.broadcast(&self.grid, slice, sep))
    }

    /// Tψ on the grid.
    pub fn transport(&self, psi: &dyn PhaseField, form: TransportForm) -> Result<GridFunction> {
        let coll = self.collision(form_tag(form), psi, |g, x, w, e| self.ctx.collision_part(g, x, w, e, form))?;
        let local = self.grid.add(&self.advection(psi), &self.sigma(psi));
        Ok(self.grid.add(&local, &coll))
    }

    /// (−ω·∇ₓ + Σ − K_r*)v on the grid.
    pub fn a0_adjoint(&self, v: &dyn PhaseField) -> Result<GridFunction> {
        let kr = self.collision("kr*", v, |g, x, w, e| Ok(self.ctx.collision.restricted_adjoint_apply(g, x, w, e)?))?;
        let local = self.grid.sub(&self.sigma(v), &self.advection(v));
        Ok(self.grid.sub(&local, &kr))
    }

    /// ⟨γ_±ψ, γ_±v⟩ with weight |ω·ν|.
    pub fn trace(&self, psi: &dyn PhaseField, v: &dyn PhaseField, side: Side) -> f64 {
        trace_fields(psi, v, side, &self.ctx.collision.space)
    }

    /// ∫ π σ̂₂(x,E,E) ∂_Eμ(E,E) ⟨∇_Sψ,∇_Sv⟩.
    pub fn b2_gradient_term(&self, psi: &dyn PhaseField, v: &dyn PhaseField) -> Result<f64> {
        let ctx = self.ctx;
        let origin = Vec3::zeros();
        let xs = &ctx.collision.xs;
        if let (Some(a), Some(b), Some(_)) = (psi.as_separable(), v.as_separable(), xs.spatial_profile(&origin)) {
            let (ra, rb) = (a.angular_energy_part(), b.angular_energy_part());
            let mut err = None;
            let slice = self.grid.sample_slice(|w, e| match ctx.b2_gradient_density(&ra, &rb, &origin, w, e) {
                Ok(val) => val,
                Err(er) => {
                    err.get_or_insert(er);
                    0.0
                }
            });
            if let Some(er) = err {
                return Err(er);
            }
            let spatial = self
                .grid
                .sample_spatial(|x| xs.spatial_profile(x).unwrap_or(0.0) * a.spatial_value(x) * b.spatial_value(x));
            let g = GridFunction::Factored(vec![GridTerm { spatial, slice }]);
            return Ok(self.grid.integral(&g));
        }
        let mut err = None;
        let g = self.grid.sample(|x, w, e| match ctx.b2_gradient_density(psi, v, x, w, e) {
            Ok(val) => val,
            Err(er) => {
                err.get_or_insert(er);
                0.0
            }
        });
        match err {
            Some(er) => Err(er),
            None => Ok(self.grid.integral(&g)),
        }
    }
}

fn form_tag(form: TransportForm) -> &'static str {
    match form {
        TransportForm::Strong => "t-strong",
        TransportForm::Pseudo => "t-pseudo",
        TransportForm::Refined => "t-refined",
    }
}

/// Rejects pairs violating ψ(·,·,Em) = 0 or v(·,·,E0) = 0 by sampling.
pub fn check_vanishing(psi: &dyn PhaseField, v: &dyn PhaseField, ctx: &TransportContext) -> Result<()> {
    let space = &ctx.collision.space;
    for (x, w, _) in phase_points(space, 16, 7, 0.0) {
        let scale = 1.0 + psi.eval(&x, &w, 0.5 * (space.e0 + space.em)).abs();
        if psi.eval(&x, &w, space.em).abs() > 1e-12 * scale {
            return Err(TransportError::Vanishing {
                field: psi.id(),
                energy: space.em,
            });
        }
        let scale = 1.0 + v.eval(&x, &w, 0.5 * (space.e0 + space.em)).abs();
        if v.eval(&x, &w, space.e0).abs() > 1e-12 * scale {
            return Err(TransportError::Vanishing {
                field: v.id(),
                energy: space.e0,
            });
        }
    }
    Ok(())
}

/// Test-side operator values for the weak identity, cached per test field.
pub struct TestSide {
    pub v: GridFunction,
    pub a0_adjoint: GridFunction,
    pub a1_adjoint: GridFunction,
    pub a2_adjoint: GridFunction,
    pub lowered: GridFunction,
    pub norm: f64,
}

impl TestSide {
    pub fn new(asm: &Assembler, v: &dyn PhaseField) -> Result<Self> {
        let ctx = asm.ctx;
        let vg = asm.field(v);
        Ok(TestSide {
            norm: asm.grid.norm(&vg),
            v: vg,
            a0_adjoint: asm.a0_adjoint(v)?,
            a1_adjoint: asm.collision("a1*", v, |g, x, w, e| ctx.adjoint_a1_apply(g, x, w, e))?,
            a2_adjoint: asm.collision("a2*", v, |g, x, w, e| ctx.adjoint_a2_apply(g, x, w, e))?,
            lowered: asm.collision("b2low", v, |g, x, w, e| ctx.lowered_b2_density(g, x, w, e))?,
        })
    }
}

/// Trial-side values, cached per trial field.
pub struct TrialSide {
    pub psi: GridFunction,
    pub t_psi: GridFunction,
    pub norm_t: f64,
}

impl TrialSide {
    pub fn new(asm: &Assembler, psi: &dyn PhaseField) -> Result<Self> {
        let t = asm.transport(psi, asm.ctx.form)?;
        Ok(TrialSide {
            psi: asm.field(psi),
            norm_t: asm.grid.norm(&t),
            t_psi: t,
        })
    }
}

/// B₀(ψ,v) = ⟨ψ, −ω·∇v + Σv − K_r*v⟩ + ⟨γ₊ψ, γ₊v⟩.
pub fn bilinear_b0(psi: &dyn PhaseField, v: &dyn PhaseField, ctx: &TransportContext) -> Result<f64> {
    let asm = Assembler::new(ctx);
    let left = asm.inner(&asm.field(psi), &asm.a0_adjoint(v)?);
    let outflow = if ctx.outflow_term { asm.trace(psi, v, Side::Plus) } else { 0.0 };
    Ok(left + outflow)
}

/// B₁(ψ,v) = ⟨ψ, A₁*v⟩.
pub fn bilinear_b1(psi: &dyn PhaseField, v: &dyn PhaseField, ctx: &TransportContext) -> Result<f64> {
    let asm = Assembler::new(ctx);
    let a1 = asm.collision("a1*", v, |g, x, w, e| ctx.adjoint_a1_apply(g, x, w, e))?;
    Ok(asm.inner(&asm.field(psi), &a1))
}

/// B₂(ψ,v), either as ⟨ψ, A₂*v⟩ or in lowered form.
pub fn bilinear_b2(psi: &dyn PhaseField, v: &dyn PhaseField, ctx: &TransportContext, variant: B2Variant) -> Result<f64> {
    check_vanishing(psi, v, ctx)?;
    let asm = Assembler::new(ctx);
    let pg = asm.field(psi);
    Ok(match variant {
        B2Variant::Hyper => asm.inner(&pg, &asm.collision("a2*", v, |g, x, w, e| ctx.adjoint_a2_apply(g, x, w, e))?),
        B2Variant::Lowered => {
            let low = asm.collision("b2low", v, |g, x, w, e| ctx.lowered_b2_density(g, x, w, e))?;
            asm.inner(&pg, &low) + asm.b2_gradient_term(psi, v)?
        }
    })
}

/// Weak-identity report from cached trial and test sides.
pub fn pair_report(
    asm: &Assembler,
    psi: &dyn PhaseField,
    trial: &TrialSide,
    v: &dyn PhaseField,
    test: &TestSide,
) -> BilinearReport {
    let outflow = if asm.ctx.outflow_term { asm.trace(psi, v, Side::Plus) } else { 0.0 };
    let b0 = asm.inner(&trial.psi, &test.a0_adjoint) + outflow;
    let b1 = asm.inner(&trial.psi, &test.a1_adjoint);
    let b2 = asm.inner(&trial.psi, &test.a2_adjoint);
    let total = b0 + b1 + b2;
    let f = asm.inner(&trial.t_psi, &test.v) + asm.trace(psi, v, Side::Minus);
    BilinearReport {
        B0: b0,
        B1: b1,
        B2: b2,
        B_total: total,
        F: f,
        residual: (total - f).abs(),
        scale: trial.norm_t * test.norm,
    }
}

/// Cached test sides for the built-in test fields.
pub fn test_battery(asm: &Assembler) -> Result<Vec<(SeparableField, TestSide)>> {
    builtin_fields(&asm.ctx.collision.space)
        .test
        .into_iter()
        .map(|v| {
            let side = TestSide::new(asm, &v)?;
            Ok((v, side))
        })
        .collect()
}

/// Reports for one trial field against a test battery, and the worst one
/// relative to its tolerance scale.
pub fn residual_against(
    asm: &Assembler,
    psi: &dyn PhaseField,
    battery: &[(SeparableField, TestSide)],
) -> Result<(BilinearReport, Vec<(String, BilinearReport)>)> {
    let trial = TrialSide::new(asm, psi)?;
    let all: Vec<(String, BilinearReport)> = battery
        .iter()
        .map(|(v, side)| (v.id(), pair_report(asm, psi, &trial, v, side)))
        .collect();
    let worst = all
        .iter()
        .map(|(_, r)| *r)
        .reduce(|a, r| if a.residual / (1.0 + a.scale) >= r.residual / (1.0 + r.scale) { a } else { r })
        .unwrap_or(BilinearReport {
            B0: 0.0,
            B1: 0.0,
            B2: 0.0,
            B_total: 0.0,
            F: 0.0,
            residual: 0.0,
            scale: 0.0,
        });
    Ok((worst, all))
}

/// The weak identity B(ψ,v) = F(v) with f = Tψ and g = ψ|Γ₋ for every
/// built-in test field.
pub fn variational_residual(psi: &dyn PhaseField, ctx: &TransportContext) -> Result<(BilinearReport, Vec<(String, BilinearReport)>)> {
    let asm = Assembler::new(ctx);
    let battery = test_battery(&asm)?;
    residual_against(&asm, psi, &battery)
}

/// Sampled sup of |B₀(ψ,ψ)| / ‖ψ‖² over the given fields (diagnostic only).
pub fn b0_rayleigh_sup(fields: &[SeparableField], ctx: &TransportContext) -> Result<f64> {
    let asm = Assembler::new(ctx);
    let mut sup: f64 = 0.0;
    for f in fields {
        let g = asm.field(f);
        let n2 = asm.inner(&g, &g);
        if n2 > 0.0 {
            let b = asm.inner(&g, &asm.a0_adjoint(f)?) + asm.trace(f, f, Side::Plus);
            sup = sup.max(b.abs() / n2);
        }
    }
    Ok(sup)
}
