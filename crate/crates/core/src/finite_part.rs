//! Hadamard finite-part integrals of orders 1 and 2.
//!
//! The production path subtracts the Taylor polynomial of the density at the
//! singular point and adds the closed-form finite parts of the subtracted
//! moments:
//!
//! ```text
//! p.f.∫ₓᵇ f/(t−x)  dt = ∫ₓᵇ (f−f(x))/(t−x) dt + f(x) ln(b−x)
//! p.f.∫ₓᵇ f/(t−x)² dt = ∫ₓᵇ (f−f(x)−f'(x)(t−x))/(t−x)² dt + f'(x) ln(b−x) − f(x)/(b−x)
//! p.f.∫ₐˣ f/(t−x)  dt = ∫ₐˣ (f−f(x))/(t−x) dt − f(x) ln(x−a)
//! p.f.∫ₐˣ f/(t−x)² dt = ∫ₐˣ (f−f(x)−f'(x)(t−x))/(t−x)² dt − f'(x) ln(x−a) − f(x)/(x−a)
//! ```
//!
//! The regular remainders use composite Gauss–Legendre panels graded toward
//! the singular point.

pub use crate::quadrature::QuadratureSpec;
use crate::quadrature::{composite_rule_with, GaussLegendre, Grading, KahanSum};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinitePartError {
    #[error("invalid interval: singular point {x} and endpoint {endpoint} are in the wrong order or coincide")]
    InvalidInterval { x: f64, endpoint: f64 },
    #[error("non-finite integrand sample at t = {t}")]
    NonFinite { t: f64 },
    #[error("order-2 finite part needs the density derivative")]
    MissingDerivative,
    #[error("missing partial derivative {0}")]
    MissingPartial(&'static str),
    #[error("invalid quadrature layout")]
    InvalidQuadrature,
}

type Result<T> = std::result::Result<T, FinitePartError>;

/// One-parameter density for a finite-part integral.
#[derive(Clone, Copy)]
pub struct PfIntegrand<'a> {
    pub eval: &'a dyn Fn(f64) -> f64,
    pub eval_deriv: Option<&'a dyn Fn(f64) -> f64>,
    /// Declared Hölder exponent of the density, in (0, 1].
    pub holder_exponent: f64,
}

impl<'a> PfIntegrand<'a> {
    pub fn new(eval: &'a dyn Fn(f64) -> f64) -> Self {
        PfIntegrand {
            eval,
            eval_deriv: None,
            holder_exponent: 1.0,
        }
    }

    pub fn with_derivative(mut self, d: &'a dyn Fn(f64) -> f64) -> Self {
        self.eval_deriv = Some(d);
        self
    }

    pub fn with_holder_exponent(mut self, alpha: f64) -> Self {
        self.holder_exponent = alpha;
        self
    }
}

/// Two-variable density f(x, t) with its partial derivatives.
#[derive(Clone, Copy)]
pub struct PfDensity2<'a> {
    pub eval: &'a dyn Fn(f64, f64) -> f64,
    /// ∂f/∂x
    pub d_first: Option<&'a dyn Fn(f64, f64) -> f64>,
    /// ∂f/∂t
    pub d_second: Option<&'a dyn Fn(f64, f64) -> f64>,
}

impl<'a> PfDensity2<'a> {
    pub fn new(eval: &'a dyn Fn(f64, f64) -> f64) -> Self {
        PfDensity2 {
            eval,
            d_first: None,
            d_second: None,
        }
    }

    pub fn with_partials(
        mut self,
        d_first: &'a dyn Fn(f64, f64) -> f64,
        d_second: &'a dyn Fn(f64, f64) -> f64,
    ) -> Self {
        self.d_first = Some(d_first);
        self.d_second = Some(d_second);
        self
    }
}

/// Quadrature nodes for an interval with one singular endpoint `x`.
///
/// `endpoint > x` is the upper-limit case, `endpoint < x` the lower one.
/// Weights are in the `dt` measure and positive.
#[derive(Debug, Clone)]
pub struct SingularRule {
    pub x: f64,
    pub endpoint: f64,
    pub nodes: Vec<(f64, f64)>,
}

impl SingularRule {
    pub fn new(x: f64, endpoint: f64, q: &QuadratureSpec) -> Result<Self> {
        let gl = GaussLegendre::new(q.nodes_per_panel.max(1));
        Self::with_reference(&gl, x, endpoint, q)
    }

    /// As [`SingularRule::new`] with a precomputed reference rule of
    /// `q.nodes_per_panel` nodes.
    pub fn with_reference(gl: &GaussLegendre, x: f64, endpoint: f64, q: &QuadratureSpec) -> Result<Self> {
        if !q.is_valid() {
            return Err(FinitePartError::InvalidQuadrature);
        }
        if !(x.is_finite() && endpoint.is_finite()) || x == endpoint {
            return Err(FinitePartError::InvalidInterval { x, endpoint });
        }
        let len = (endpoint - x).abs();
        let dir = (endpoint - x).signum();
        let mut nodes = Vec::with_capacity(q.total_nodes());
        if q.sqrt_substitution {
            // t = x + dir·u², dt = 2u du
            for (u, w) in composite_rule_with(gl, 0.0, len.sqrt(), q, Grading::Left) {
                nodes.push((x + dir * u * u, 2.0 * u * w));
            }
        } else {
            for (d, w) in composite_rule_with(gl, 0.0, len, q, Grading::Left) {
                nodes.push((x + dir * d, w));
            }
        }
        if dir < 0.0 {
            nodes.reverse();
        }
        Ok(SingularRule { x, endpoint, nodes })
    }

    /// Rule for order-2 remainders. The remainder divides by (t−x)², so nodes
    /// are kept away from x: no √-substitution and total grading at most 1e2.
    pub fn new_order2(x: f64, endpoint: f64, q: &QuadratureSpec) -> Result<Self> {
        Self::new(x, endpoint, &order2_spec(q))
    }

    pub fn is_upper(&self) -> bool {
        self.endpoint > self.x
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sample a density at the rule's nodes.
    pub fn sample(&self, f: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.nodes.len());
        for &(t, _) in &self.nodes {
            let v = f(t);
            if !v.is_finite() {
                return Err(FinitePartError::NonFinite { t });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Plain integral ∫ f dt over the interval from samples.
    pub fn regular(&self, values: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (&(_, w), &v) in self.nodes.iter().zip(values) {
            acc.add(w * v);
        }
        acc.value()
    }

    /// Order-1 finite part from samples and the value at the singular point.
    pub fn pf1(&self, fx: f64, values: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (&(t, w), &v) in self.nodes.iter().zip(values) {
            // a node can round onto x on very short intervals
            if t != self.x {
                acc.add(w * (v - fx) / (t - self.x));
            }
        }
        let l = (self.endpoint - self.x).abs().ln();
        if self.is_upper() {
            acc.value() + fx * l
        } else {
            acc.value() - fx * l
        }
    }

    /// Order-2 finite part from samples, value and derivative at the singular point.
    pub fn pf2(&self, fx: f64, dfx: f64, values: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (&(t, w), &v) in self.nodes.iter().zip(values) {
            let d = t - self.x;
            if d != 0.0 {
                acc.add(w * (v - fx - dfx * d) / (d * d));
            }
        }
        let len = (self.endpoint - self.x).abs();
        if self.is_upper() {
            acc.value() + dfx * len.ln() - fx / len
        } else {
            acc.value() - dfx * len.ln() - fx / len
        }
    }
}

/// Spec used for order-2 finite parts, see [`SingularRule::new_order2`].
pub fn order2_spec(q: &QuadratureSpec) -> QuadratureSpec {
    let p = q.panel_count.max(1) as f64;
    let cap = 1e2f64.powf(1.0 / p);
    QuadratureSpec {
        sqrt_substitution: false,
        endpoint_grading: q.endpoint_grading.min(cap),
        ..*q
    }
}

fn check_point(v: f64, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FinitePartError::NonFinite { t })
    }
}

fn pf1_general(f: &PfIntegrand, x: f64, endpoint: f64, q: &QuadratureSpec) -> Result<f64> {
    let rule = SingularRule::new(x, endpoint, q)?;
    let fx = check_point((f.eval)(x), x)?;
    let vals = rule.sample(f.eval)?;
    Ok(rule.pf1(fx, &vals))
}

fn pf2_general(f: &PfIntegrand, x: f64, endpoint: f64, q: &QuadratureSpec) -> Result<f64> {
    let df = f.eval_deriv.ok_or(FinitePartError::MissingDerivative)?;
    let rule = SingularRule::new_order2(x, endpoint, q)?;
    let fx = check_point((f.eval)(x), x)?;
    let dfx = check_point(df(x), x)?;
    let vals = rule.sample(f.eval)?;
    Ok(rule.pf2(fx, dfx, &vals))
}

/// p.f.∫ₓᵇ f(t)/(t−x) dt.
pub fn pf1_upper(f: &PfIntegrand, x: f64, b: f64, q: &QuadratureSpec) -> Result<f64> {
    if x >= b {
        return Err(FinitePartError::InvalidInterval { x, endpoint: b });
    }
    pf1_general(f, x, b, q)
}

/// p.f.∫ₓᵇ f(t)/(t−x)² dt.
pub fn pf2_upper(f: &PfIntegrand, x: f64, b: f64, q: &QuadratureSpec) -> Result<f64> {
    if x >= b {
        return Err(FinitePartError::InvalidInterval { x, endpoint: b });
    }
    pf2_general(f, x, b, q)
}

/// p.f.∫ₐˣ f(t)/(t−x) dt.
pub fn pf1_lower(f: &PfIntegrand, x: f64, a: f64, q: &QuadratureSpec) -> Result<f64> {
    if a >= x {
        return Err(FinitePartError::InvalidInterval { x, endpoint: a });
    }
    pf1_general(f, x, a, q)
}

/// p.f.∫ₐˣ f(t)/(t−x)² dt.
pub fn pf2_lower(f: &PfIntegrand, x: f64, a: f64, q: &QuadratureSpec) -> Result<f64> {
    if a >= x {
        return Err(FinitePartError::InvalidInterval { x, endpoint: a });
    }
    pf2_general(f, x, a, q)
}

/// d/dx p.f.∫ₓᵇ f(x,t)/(t−x) dt, assembled as
/// p.f.∫ f(x,t)/(t−x)² dt + p.f.∫ ∂ₓf(x,t)/(t−x) dt − ∂ₜf(x,x).
pub fn pf1_derivative(f: &PfDensity2, x: f64, b: f64, q: &QuadratureSpec) -> Result<f64> {
    let dx = f.d_first.ok_or(FinitePartError::MissingPartial("d/dx"))?;
    let dt = f.d_second.ok_or(FinitePartError::MissingPartial("d/dt"))?;
    let g = |t: f64| (f.eval)(x, t);
    let dg = |t: f64| dt(x, t);
    let hx = |t: f64| dx(x, t);
    let second = pf2_upper(&PfIntegrand::new(&g).with_derivative(&dg), x, b, q)?;
    let first = pf1_upper(&PfIntegrand::new(&hx), x, b, q)?;
    Ok(second + first - check_point(dt(x, x), x)?)
}

/// Outer rule used by the Fubini self-test: graded toward both ends because
/// the inner finite parts carry logarithms there.
fn fubini_outer(e0: f64, em: f64, q: &QuadratureSpec) -> Vec<(f64, f64)> {
    let outer = QuadratureSpec::new(q.panel_count + 12, q.nodes_per_panel, q.endpoint_grading.max(2.0));
    crate::quadrature::composite_rule(e0, em, &outer, Grading::Both)
}

/// Residual of the order-1 Fubini swap on I = [e0, em] for a density
/// f(E′, E):
///
/// ```text
/// ∫_I p.f.∫_E^{Em} f(E′,E)/(E′−E) dE′ dE  −  ∫_I p.f.∫_{E0}^{E′} f(E′,E)/(E′−E) dE dE′
/// ```
///
/// Both inner integrals use the kernel 1/(E′−E); on the right this is
/// `−pf1_lower` in the variable E.
pub fn fubini_pf1_residual(
    f: &dyn Fn(f64, f64) -> f64,
    e0: f64,
    em: f64,
    q: &QuadratureSpec,
) -> Result<f64> {
    if em < e0 {
        return Err(FinitePartError::InvalidInterval { x: e0, endpoint: em });
    }
    if em == e0 {
        return Ok(0.0);
    }
    let outer = fubini_outer(e0, em, q);
    let mut left = KahanSum::new();
    for &(e, w) in &outer {
        let g = |ep: f64| f(ep, e);
        left.add(w * pf1_upper(&PfIntegrand::new(&g), e, em, q)?);
    }
    let mut right = KahanSum::new();
    for &(ep, w) in &outer {
        let g = |e: f64| f(ep, e);
        right.add(-w * pf1_lower(&PfIntegrand::new(&g), ep, e0, q)?);
    }
    Ok((left.value() - right.value()).abs())
}

/// Both sides of
///
/// ```text
/// p.f.∫_E^{Em} f(E′,E)/(E′−E)² dE′ = p.f.∫_E^{Em} ∂_{E′}f(E′,E)/(E′−E) dE′ + ∂_{E′}f(E,E) − f(Em,E)/(Em−E)
/// ```
///
/// `f.d_second` must hold ∂f/∂E′ where the density is written f(E, E′)
/// in [`PfDensity2`] order (first argument E, second E′).
pub fn pf2_to_pf1_identity(f: &PfDensity2, e: f64, em: f64, q: &QuadratureSpec) -> Result<(f64, f64)> {
    if e >= em {
        return Err(FinitePartError::InvalidInterval { x: e, endpoint: em });
    }
    let dt = f.d_second.ok_or(FinitePartError::MissingPartial("d/dE'"))?;
    let g = |t: f64| (f.eval)(e, t);
    let dg = |t: f64| dt(e, t);
    let left = pf2_upper(&PfIntegrand::new(&g).with_derivative(&dg), e, em, q)?;
    let right = pf1_upper(&PfIntegrand::new(&dg), e, em, q)? + check_point(dt(e, e), e)?
        - check_point((f.eval)(e, em), em)? / (em - e);
    Ok((left, right))
}

/// Lower-limit twin of [`pf2_to_pf1_identity`]:
///
/// ```text
/// p.f.∫_{E0}^{E′} f(E)/(E−E′)² dE = p.f.∫_{E0}^{E′} f′(E)/(E−E′) dE − f′(E′) − f(E0)/(E′−E0)
/// ```
pub fn pf2_to_pf1_identity_lower(f: &PfIntegrand, x: f64, a: f64, q: &QuadratureSpec) -> Result<(f64, f64)> {
    let df = f.eval_deriv.ok_or(FinitePartError::MissingDerivative)?;
    let left = pf2_lower(f, x, a, q)?;
    let right = pf1_lower(&PfIntegrand::new(df), x, a, q)? - check_point(df(x), x)?
        - check_point((f.eval)(a), a)? / (x - a);
    Ok((left, right))
}
