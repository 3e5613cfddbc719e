//! Phase space G×S×I on a ball, smooth test fields with analytic
//! derivatives, L² and trace inner products, and Green's formula.

use crate::quadrature::{composite_rule_with_breaks, halton, BallRule, KahanSum, QuadratureSpec, SphereRule};
use crate::sphere_geom::{laplace_beltrami_from_jet, surface_gradient, SphereFunction, Vec3};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("radius must be positive, got {0}")]
    Radius(f64),
    #[error("energy interval needs 0 < E0 < Em, got [{0}, {1}]")]
    Energies(f64, f64),
    #[error("quadrature node counts must be positive")]
    Quadrature,
    #[error("unknown field id `{0}`")]
    UnknownField(String),
}

/// Node counts of the product rules used for phase-space integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseQuadrature {
    /// Polar × azimuthal nodes for direction integrals.
    pub sphere: [usize; 2],
    /// Energy rule, applied to each half of I with grading toward E0 and Em.
    pub energy: QuadratureSpec,
    /// Radial × polar × azimuthal nodes on the ball.
    pub space: [usize; 3],
    /// Polar × azimuthal nodes on the boundary sphere ∂G.
    pub surface: [usize; 2],
    /// Polar × azimuthal nodes on each direction hemisphere of the trace.
    pub hemisphere: [usize; 2],
}

impl Default for PhaseQuadrature {
    fn default() -> Self {
        PhaseQuadrature {
            sphere: [6, 12],
            energy: QuadratureSpec::new(8, 6, 4.0),
            space: [3, 4, 8],
            surface: [6, 12],
            hemisphere: [6, 12],
        }
    }
}

/// G = open ball of `radius` about 0, S = S², I = [e0, em].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpace {
    #[serde(default = "d_radius")]
    pub radius: f64,
    #[serde(rename = "E0", alias = "e0", default = "d_e0")]
    pub e0: f64,
    #[serde(rename = "Em", alias = "em", default = "d_em")]
    pub em: f64,
    #[serde(default)]
    pub quadrature: PhaseQuadrature,
}

fn d_radius() -> f64 {
    1.0
}
fn d_e0() -> f64 {
    1.0
}
fn d_em() -> f64 {
    3.0
}

impl Default for PhaseSpace {
    fn default() -> Self {
        PhaseSpace {
            radius: d_radius(),
            e0: d_e0(),
            em: d_em(),
            quadrature: PhaseQuadrature::default(),
        }
    }
}

impl PhaseSpace {
    pub fn new(radius: f64, e0: f64, em: f64) -> Result<Self, PhaseError> {
        let s = PhaseSpace {
            radius,
            e0,
            em,
            quadrature: PhaseQuadrature::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_quadrature(mut self, q: PhaseQuadrature) -> Self {
        self.quadrature = q;
        self
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if !(self.radius > 0.0) {
            return Err(PhaseError::Radius(self.radius));
        }
        if !(self.e0 > 0.0 && self.em > self.e0) {
            return Err(PhaseError::Energies(self.e0, self.em));
        }
        let q = &self.quadrature;
        let counts = [
            q.sphere[0], q.sphere[1], q.space[0], q.space[1], q.space[2], q.surface[0], q.surface[1],
            q.hemisphere[0], q.hemisphere[1],
        ];
        if counts.contains(&0) || !q.energy.is_valid() {
            return Err(PhaseError::Quadrature);
        }
        Ok(())
    }

    /// Outward unit normal at a boundary point.
    pub fn normal(&self, y: &Vec3) -> Vec3 {
        y / y.norm()
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        x.norm() <= self.radius * (1.0 + 1e-12)
    }

    pub fn sphere_rule(&self) -> SphereRule {
        SphereRule::new(self.quadrature.sphere[0], self.quadrature.sphere[1])
    }

    pub fn ball_rule(&self) -> BallRule {
        let s = self.quadrature.space;
        BallRule::new(self.radius, s[0], s[1], s[2])
    }

    /// Energy rule over I graded toward both ends, with optional interior breakpoints.
    pub fn energy_rule(&self, breaks: &[f64]) -> Vec<(f64, f64)> {
        composite_rule_with_breaks(self.e0, self.em, breaks, &self.quadrature.energy)
    }

    /// Boundary points y ∈ ∂G with surface weights.
    pub fn surface_rule(&self) -> Vec<(Vec3, f64)> {
        let s = SphereRule::new(self.quadrature.surface[0], self.quadrature.surface[1]);
        let r2 = self.radius * self.radius;
        s.points.iter().map(|(n, w)| (n * self.radius, w * r2)).collect()
    }
}

/// Escape time t(x,ω) = x·ω + √((x·ω)² + r² − ‖x‖²); x − t ω lies on ∂G.
pub fn escape_time(x: &Vec3, w: &Vec3, radius: f64) -> f64 {
    let xw = x.dot(w);
    xw + (xw * xw + radius * radius - x.norm_squared()).max(0.0).sqrt()
}

/// Sign of ω·ν on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxSign {
    Minus,
    Zero,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub y: Vec3,
    pub w: Vec3,
    pub e: f64,
    pub sign: FluxSign,
}

impl BoundarySample {
    pub fn new(space: &PhaseSpace, y: Vec3, w: Vec3, e: f64) -> Self {
        let c = w.dot(&space.normal(&y));
        let sign = if c > 1e-14 {
            FluxSign::Plus
        } else if c < -1e-14 {
            FluxSign::Minus
        } else {
            FluxSign::Zero
        };
        BoundarySample { y, w, e, sign }
    }
}

/// Which end of I a field is known to vanish at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vanishing {
    E0,
    Em,
    Both,
    None,
}

impl Vanishing {
    pub fn at_e0(&self) -> bool {
        matches!(self, Vanishing::E0 | Vanishing::Both)
    }
    pub fn at_em(&self) -> bool {
        matches!(self, Vanishing::Em | Vanishing::Both)
    }
}

/// Ambient derivatives in ω up to third order, for the extension of the
/// field off the sphere used by the field itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaJet {
    pub value: f64,
    pub grad: Vec3,
    pub hess: Matrix3<f64>,
    pub third: [[[f64; 3]; 3]; 3],
}

/// Smooth phase-space function ψ(x, ω, E).
pub trait PhaseField: Sync {
    fn id(&self) -> String;
    fn eval(&self, x: &Vec3, w: &Vec3, e: f64) -> f64;
    fn grad_x(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3;
    /// Ambient gradient with respect to ω.
    fn grad_omega(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3;
    fn omega_jet(&self, x: &Vec3, w: &Vec3, e: f64) -> OmegaJet;
    fn d_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64;
    fn d2_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64;
    fn vanishing_at(&self) -> Vanishing;

    fn grad_s(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3 {
        surface_gradient(&self.grad_omega(x, w, e), w)
    }

    fn laplace_s(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let j = self.omega_jet(x, w, e);
        laplace_beltrami_from_jet(&j.grad, &j.hess, w)
    }

    fn as_separable(&self) -> Option<&SeparableField> {
        None
    }
}

/// Spatial factor a(x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialFactor {
    /// a = 1
    One,
    /// a = x₁
    X1,
    /// a = 1 − ‖x‖²/r² (1 − ‖x‖² on the unit ball); vanishes on ∂G.
    Bubble,
}

/// Angular factor Y(ω), extended off the sphere as a polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngularFactor {
    /// Y = 1
    Y00,
    /// Y = ω₃
    Y10,
    /// Y = ω₁² − ω₂²
    Y22,
}

impl SphereFunction for AngularFactor {
    fn value(&self, w: &Vec3) -> f64 {
        AngularFactor::value(self, w)
    }
    fn gradient(&self, w: &Vec3) -> Vec3 {
        AngularFactor::grad(self, w)
    }
    fn hessian(&self, _w: &Vec3) -> Matrix3<f64> {
        AngularFactor::hess(self)
    }
}

/// Energy factor c(E).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyFactor {
    /// c = 1
    One,
    /// c = Em − E
    Cm1,
    /// c = (Em − E)²
    Cm2,
    /// c = (E − E0)(Em − E)
    Cmb,
    /// c = E − E0
    C01,
    /// c = (E − E0)²
    C02,
}

impl SpatialFactor {
    pub fn tag(&self) -> &'static str {
        match self {
            SpatialFactor::One => "a1",
            SpatialFactor::X1 => "ax1",
            SpatialFactor::Bubble => "ab",
        }
    }
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "a1" => SpatialFactor::One,
            "ax1" => SpatialFactor::X1,
            "ab" => SpatialFactor::Bubble,
            _ => return None,
        })
    }
    pub fn value(&self, x: &Vec3, r: f64) -> f64 {
        match self {
            SpatialFactor::One => 1.0,
            SpatialFactor::X1 => x[0],
            SpatialFactor::Bubble => 1.0 - x.norm_squared() / (r * r),
        }
    }
    pub fn grad(&self, x: &Vec3, r: f64) -> Vec3 {
        match self {
            SpatialFactor::One => Vec3::zeros(),
            SpatialFactor::X1 => Vec3::x(),
            SpatialFactor::Bubble => x * (-2.0 / (r * r)),
        }
    }
}

impl AngularFactor {
    pub fn tag(&self) -> &'static str {
        match self {
            AngularFactor::Y00 => "Y00",
            AngularFactor::Y10 => "Y10",
            AngularFactor::Y22 => "Y22",
        }
    }
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Y00" => AngularFactor::Y00,
            "Y10" => AngularFactor::Y10,
            "Y22" => AngularFactor::Y22,
            _ => return None,
        })
    }
    /// Degree ℓ of the spherical harmonic.
    pub fn degree(&self) -> usize {
        match self {
            AngularFactor::Y00 => 0,
            AngularFactor::Y10 => 1,
            AngularFactor::Y22 => 2,
        }
    }
    pub fn value(&self, w: &Vec3) -> f64 {
        match self {
            AngularFactor::Y00 => 1.0,
            AngularFactor::Y10 => w[2],
            AngularFactor::Y22 => w[0] * w[0] - w[1] * w[1],
        }
    }
    pub fn grad(&self, w: &Vec3) -> Vec3 {
        match self {
            AngularFactor::Y00 => Vec3::zeros(),
            AngularFactor::Y10 => Vec3::z(),
            AngularFactor::Y22 => Vec3::new(2.0 * w[0], -2.0 * w[1], 0.0),
        }
    }
    pub fn hess(&self) -> Matrix3<f64> {
        match self {
            AngularFactor::Y22 => Matrix3::from_diagonal(&Vec3::new(2.0, -2.0, 0.0)),
            _ => Matrix3::zeros(),
        }
    }
}

impl EnergyFactor {
    pub fn tag(&self) -> &'static str {
        match self {
            EnergyFactor::One => "c1",
            EnergyFactor::Cm1 => "cm1",
            EnergyFactor::Cm2 => "cm2",
            EnergyFactor::Cmb => "cmb",
            EnergyFactor::C01 => "c01",
            EnergyFactor::C02 => "c02",
        }
    }
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "c1" => EnergyFactor::One,
            "cm1" => EnergyFactor::Cm1,
            "cm2" => EnergyFactor::Cm2,
            "cmb" => EnergyFactor::Cmb,
            "c01" => EnergyFactor::C01,
            "c02" => EnergyFactor::C02,
            _ => return None,
        })
    }
    /// (c, c′, c″) at E.
    pub fn jet(&self, e: f64, e0: f64, em: f64) -> (f64, f64, f64) {
        match self {
            EnergyFactor::One => (1.0, 0.0, 0.0),
            EnergyFactor::Cm1 => (em - e, -1.0, 0.0),
            EnergyFactor::Cm2 => ((em - e) * (em - e), -2.0 * (em - e), 2.0),
            EnergyFactor::Cmb => ((e - e0) * (em - e), e0 + em - 2.0 * e, -2.0),
            EnergyFactor::C01 => (e - e0, 1.0, 0.0),
            EnergyFactor::C02 => ((e - e0) * (e - e0), 2.0 * (e - e0), 2.0),
        }
    }
    pub fn vanishing(&self) -> Vanishing {
        match self {
            EnergyFactor::One => Vanishing::None,
            EnergyFactor::Cm1 | EnergyFactor::Cm2 => Vanishing::Em,
            EnergyFactor::Cmb => Vanishing::Both,
            EnergyFactor::C01 | EnergyFactor::C02 => Vanishing::E0,
        }
    }
}

/// ψ(x,ω,E) = scale · a(x) · Y(ω) · c(E).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableField {
    pub a: SpatialFactor,
    pub y: AngularFactor,
    pub c: EnergyFactor,
    pub scale: f64,
    pub radius: f64,
    pub e0: f64,
    pub em: f64,
}

impl SeparableField {
    pub fn new(space: &PhaseSpace, a: SpatialFactor, y: AngularFactor, c: EnergyFactor) -> Self {
        SeparableField {
            a,
            y,
            c,
            scale: 1.0,
            radius: space.radius,
            e0: space.e0,
            em: space.em,
        }
    }

    pub fn zero(space: &PhaseSpace) -> Self {
        let mut f = Self::new(space, SpatialFactor::One, AngularFactor::Y00, EnergyFactor::One);
        f.scale = 0.0;
        f
    }

    pub fn constant(space: &PhaseSpace) -> Self {
        Self::new(space, SpatialFactor::One, AngularFactor::Y00, EnergyFactor::One)
    }

    pub fn with_scale(mut self, s: f64) -> Self {
        self.scale = s;
        self
    }

    /// Parse `"<a>*<Y>*<c>"`, e.g. `"a1*Y10*cm2"`, or `"zero"` / `"one"`.
    pub fn from_id(id: &str, space: &PhaseSpace) -> Result<Self, PhaseError> {
        match id {
            "zero" => return Ok(Self::zero(space)),
            "one" => return Ok(Self::constant(space)),
            _ => {}
        }
        let parts: Vec<&str> = id.split('*').collect();
        if parts.len() != 3 {
            return Err(PhaseError::UnknownField(id.into()));
        }
        let a = SpatialFactor::parse(parts[0]).ok_or_else(|| PhaseError::UnknownField(id.into()))?;
        let y = AngularFactor::parse(parts[1]).ok_or_else(|| PhaseError::UnknownField(id.into()))?;
        let c = EnergyFactor::parse(parts[2]).ok_or_else(|| PhaseError::UnknownField(id.into()))?;
        Ok(Self::new(space, a, y, c))
    }

    /// The same field with the spatial factor replaced by 1.
    pub fn angular_energy_part(&self) -> SeparableField {
        SeparableField {
            a: SpatialFactor::One,
            ..*self
        }
    }

    pub fn spatial_value(&self, x: &Vec3) -> f64 {
        self.a.value(x, self.radius)
    }

    fn ce(&self, e: f64) -> (f64, f64, f64) {
        self.c.jet(e, self.e0, self.em)
    }
}

impl PhaseField for SeparableField {
    fn id(&self) -> String {
        if self.scale == 0.0 {
            return "zero".into();
        }
        let base = format!("{}*{}*{}", self.a.tag(), self.y.tag(), self.c.tag());
        if self.scale == 1.0 {
            base
        } else {
            format!("{}*{}", self.scale, base)
        }
    }

    fn eval(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        self.scale * self.a.value(x, self.radius) * self.y.value(w) * self.ce(e).0
    }

    fn grad_x(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3 {
        self.a.grad(x, self.radius) * (self.scale * self.y.value(w) * self.ce(e).0)
    }

    fn grad_omega(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3 {
        self.y.grad(w) * (self.scale * self.a.value(x, self.radius) * self.ce(e).0)
    }

    fn omega_jet(&self, x: &Vec3, w: &Vec3, e: f64) -> OmegaJet {
        let k = self.scale * self.a.value(x, self.radius) * self.ce(e).0;
        OmegaJet {
            value: k * self.y.value(w),
            grad: self.y.grad(w) * k,
            hess: self.y.hess() * k,
            third: [[[0.0; 3]; 3]; 3],
        }
    }

    fn d_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        self.scale * self.a.value(x, self.radius) * self.y.value(w) * self.ce(e).1
    }

    fn d2_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        self.scale * self.a.value(x, self.radius) * self.y.value(w) * self.ce(e).2
    }

    fn vanishing_at(&self) -> Vanishing {
        if self.scale == 0.0 {
            return Vanishing::Both;
        }
        self.c.vanishing()
    }

    fn laplace_s(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        let l = self.y.degree() as f64;
        -l * (l + 1.0) * self.eval(x, w, e)
    }

    fn as_separable(&self) -> Option<&SeparableField> {
        Some(self)
    }
}

/// A field given only by its values; derivatives come from central
/// differences with step 1e−5 (first order) and 1e−4 (second and third
/// order). Expect about 1e−9 accuracy in first and 1e−7 in second
/// derivatives for O(1) fields; prefer closed-form fields where possible.
pub struct FdField<F>
where
    F: Fn(&Vec3, &Vec3, f64) -> f64 + Sync,
{
    pub name: String,
    pub f: F,
    pub vanishing: Vanishing,
}

const FD_H1: f64 = 1e-5;
const FD_H2: f64 = 1e-4;

impl<F> FdField<F>
where
    F: Fn(&Vec3, &Vec3, f64) -> f64 + Sync,
{
    pub fn new(name: &str, f: F, vanishing: Vanishing) -> Self {
        FdField {
            name: name.into(),
            f,
            vanishing,
        }
    }

    fn grad_w_h(&self, x: &Vec3, w: &Vec3, e: f64, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for i in 0..3 {
            let mut p = *w;
            let mut m = *w;
            p[i] += h;
            m[i] -= h;
            g[i] = ((self.f)(x, &p, e) - (self.f)(x, &m, e)) / (2.0 * h);
        }
        g
    }

    fn hess_w(&self, x: &Vec3, w: &Vec3, e: f64) -> Matrix3<f64> {
        let mut hm = Matrix3::zeros();
        for i in 0..3 {
            let mut p = *w;
            let mut m = *w;
            p[i] += FD_H2;
            m[i] -= FD_H2;
            let d = (self.grad_w_h(x, &p, e, FD_H2) - self.grad_w_h(x, &m, e, FD_H2)) / (2.0 * FD_H2);
            for j in 0..3 {
                hm[(i, j)] = d[j];
            }
        }
        (hm + hm.transpose()) * 0.5
    }
}

impl<F> PhaseField for FdField<F>
where
    F: Fn(&Vec3, &Vec3, f64) -> f64 + Sync,
{
    fn id(&self) -> String {
        self.name.clone()
    }

    fn eval(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        (self.f)(x, w, e)
    }

    fn grad_x(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for i in 0..3 {
            let mut p = *x;
            let mut m = *x;
            p[i] += FD_H1;
            m[i] -= FD_H1;
            g[i] = ((self.f)(&p, w, e) - (self.f)(&m, w, e)) / (2.0 * FD_H1);
        }
        g
    }

    fn grad_omega(&self, x: &Vec3, w: &Vec3, e: f64) -> Vec3 {
        self.grad_w_h(x, w, e, FD_H1)
    }

    fn omega_jet(&self, x: &Vec3, w: &Vec3, e: f64) -> OmegaJet {
        let mut third = [[[0.0; 3]; 3]; 3];
        for (i, t) in third.iter_mut().enumerate() {
            let mut p = *w;
            let mut m = *w;
            p[i] += FD_H2;
            m[i] -= FD_H2;
            let d = (self.hess_w(x, &p, e) - self.hess_w(x, &m, e)) / (2.0 * FD_H2);
            for (j, row) in t.iter_mut().enumerate() {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = d[(j, k)];
                }
            }
        }
        OmegaJet {
            value: (self.f)(x, w, e),
            grad: self.grad_omega(x, w, e),
            hess: self.hess_w(x, w, e),
            third,
        }
    }

    fn d_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        ((self.f)(x, w, e + FD_H1) - (self.f)(x, w, e - FD_H1)) / (2.0 * FD_H1)
    }

    fn d2_e(&self, x: &Vec3, w: &Vec3, e: f64) -> f64 {
        ((self.f)(x, w, e + FD_H2) - 2.0 * (self.f)(x, w, e) + (self.f)(x, w, e - FD_H2)) / (FD_H2 * FD_H2)
    }

    fn vanishing_at(&self) -> Vanishing {
        self.vanishing
    }
}

/// Built-in trial fields (vanishing at Em) and test fields (vanishing at E0).
#[derive(Debug, Clone)]
pub struct FieldCatalog {
    pub trial: Vec<SeparableField>,
    pub test: Vec<SeparableField>,
}

pub const SPATIAL_FACTORS: [SpatialFactor; 3] = [SpatialFactor::One, SpatialFactor::X1, SpatialFactor::Bubble];
pub const ANGULAR_FACTORS: [AngularFactor; 3] = [AngularFactor::Y00, AngularFactor::Y10, AngularFactor::Y22];
pub const TRIAL_ENERGY: [EnergyFactor; 3] = [EnergyFactor::Cm1, EnergyFactor::Cm2, EnergyFactor::Cmb];
pub const TEST_ENERGY: [EnergyFactor; 2] = [EnergyFactor::C01, EnergyFactor::C02];

pub fn builtin_fields(space: &PhaseSpace) -> FieldCatalog {
    let mut trial = Vec::new();
    let mut test = Vec::new();
    for a in SPATIAL_FACTORS {
        for y in ANGULAR_FACTORS {
            for c in TRIAL_ENERGY {
                trial.push(SeparableField::new(space, a, y, c));
            }
            for c in TEST_ENERGY {
                test.push(SeparableField::new(space, a, y, c));
            }
        }
    }
    FieldCatalog { trial, test }
}

/// Tensor-product nodes of G×S×I with weights. Functions on the grid are
/// stored space-major: index `(ix · n_dirs + iw) · n_energies + ie`.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub space: Vec<(Vec3, f64)>,
    pub dirs: Vec<(Vec3, f64)>,
    pub energies: Vec<(f64, f64)>,
    slice_weights: Vec<f64>,
}

/// One product term spatial(x) · slice(ω,E) of a [`GridFunction`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridTerm {
    pub spatial: Vec<f64>,
    pub slice: Vec<f64>,
}

/// Values of a function at the nodes of a [`PhaseGrid`], either dense or as
/// a sum of product terms.
#[derive(Debug, Clone, PartialEq)]
pub enum GridFunction {
    Dense(Vec<f64>),
    Factored(Vec<GridTerm>),
}

impl PhaseGrid {
    pub fn new(space: &PhaseSpace) -> Self {
        Self::with_energy_breaks(space, &[])
    }

    /// Grid whose energy panels also break at the given interior points.
    pub fn with_energy_breaks(space: &PhaseSpace, breaks: &[f64]) -> Self {
        Self::from_rules(
            space.ball_rule().points,
            space.sphere_rule().points,
            space.energy_rule(breaks),
        )
    }

    pub fn from_rules(space: Vec<(Vec3, f64)>, dirs: Vec<(Vec3, f64)>, energies: Vec<(f64, f64)>) -> Self {
        let mut slice_weights = Vec::with_capacity(dirs.len() * energies.len());
        for (_, ww) in &dirs {
            for &(_, we) in &energies {
                slice_weights.push(ww * we);
            }
        }
        PhaseGrid {
            space,
            dirs,
            energies,
            slice_weights,
        }
    }

    pub fn slice_len(&self) -> usize {
        self.slice_weights.len()
    }

    pub fn len(&self) -> usize {
        self.space.len() * self.slice_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample<F: FnMut(&Vec3, &Vec3, f64) -> f64>(&self, mut f: F) -> GridFunction {
        let mut out = Vec::with_capacity(self.len());
        for (x, _) in &self.space {
            for (w, _) in &self.dirs {
                for &(e, _) in &self.energies {
                    out.push(f(x, w, e));
                }
            }
        }
        GridFunction::Dense(out)
    }

    /// Values on the S×I slice, direction-major.
    pub fn sample_slice<T, F: FnMut(&Vec3, f64) -> T>(&self, mut f: F) -> Vec<T> {
        let mut out = Vec::with_capacity(self.slice_len());
        for (w, _) in &self.dirs {
            for &(e, _) in &self.energies {
                out.push(f(w, e));
            }
        }
        out
    }

    pub fn sample_spatial<F: FnMut(&Vec3) -> f64>(&self, mut f: F) -> Vec<f64> {
        self.space.iter().map(|(x, _)| f(x)).collect()
    }

    /// The single product term weight(x) · slice(ω,E).
    pub fn broadcast<W: FnMut(&Vec3) -> f64>(&self, slice: Vec<f64>, weight: W) -> GridFunction {
        GridFunction::Factored(vec![GridTerm {
            spatial: self.sample_spatial(weight),
            slice,
        }])
    }

    /// Samples a field, keeping separable fields in product form.
    pub fn sample_field(&self, f: &dyn PhaseField) -> GridFunction {
        match f.as_separable() {
            Some(s) => {
                let r = s.angular_energy_part();
                self.broadcast(self.sample_slice(|w, e| r.eval(&Vec3::zeros(), w, e)), |x| s.spatial_value(x))
            }
            None => self.sample(|x, w, e| f.eval(x, w, e)),
        }
    }

    fn slice_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for ((w, x), y) in self.slice_weights.iter().zip(a).zip(b) {
            acc.add(w * (x * y));
        }
        acc.value()
    }

    fn spatial_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (((_, w), x), y) in self.space.iter().zip(a).zip(b) {
            acc.add(w * (x * y));
        }
        acc.value()
    }

    fn dense_factored(&self, d: &[f64], terms: &[GridTerm]) -> f64 {
        let ns = self.slice_len();
        let mut total = KahanSum::new();
        for (ix, (_, wx)) in self.space.iter().enumerate() {
            let row = &d[ix * ns..(ix + 1) * ns];
            let mut sx = KahanSum::new();
            for t in terms {
                sx.add(t.spatial[ix] * self.slice_dot(row, &t.slice));
            }
            total.add(wx * sx.value());
        }
        total.value()
    }

    /// Quadrature of the product of two grid functions.
    pub fn inner(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        match (a, b) {
            (GridFunction::Dense(a), GridFunction::Dense(b)) => {
                let ns = self.slice_len();
                let mut total = KahanSum::new();
                for (ix, (_, wx)) in self.space.iter().enumerate() {
                    let r = ix * ns..(ix + 1) * ns;
                    total.add(wx * self.slice_dot(&a[r.clone()], &b[r]));
                }
                total.value()
            }
            (GridFunction::Factored(a), GridFunction::Factored(b)) => {
                let mut total = KahanSum::new();
                for ta in a {
                    for tb in b {
                        total.add(self.spatial_dot(&ta.spatial, &tb.spatial) * self.slice_dot(&ta.slice, &tb.slice));
                    }
                }
                total.value()
            }
            (GridFunction::Dense(d), GridFunction::Factored(t)) | (GridFunction::Factored(t), GridFunction::Dense(d)) => {
                self.dense_factored(d, t)
            }
        }
    }

    pub fn norm(&self, a: &GridFunction) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// ∫ of a grid function against 1.
    pub fn integral(&self, a: &GridFunction) -> f64 {
        let one = GridFunction::Factored(vec![GridTerm {
            spatial: vec![1.0; self.space.len()],
            slice: vec![1.0; self.slice_len()],
        }]);
        self.inner(a, &one)
    }

    pub fn densify(&self, a: &GridFunction) -> Vec<f64> {
        match a {
            GridFunction::Dense(d) => d.clone(),
            GridFunction::Factored(terms) => {
                let ns = self.slice_len();
                let mut out = vec![0.0; self.len()];
                for t in terms {
                    for (ix, k) in t.spatial.iter().enumerate() {
                        for (o, s) in out[ix * ns..(ix + 1) * ns].iter_mut().zip(&t.slice) {
                            *o += k * s;
                        }
                    }
                }
                out
            }
        }
    }

    pub fn add(&self, a: &GridFunction, b: &GridFunction) -> GridFunction {
        match (a, b) {
            (GridFunction::Factored(x), GridFunction::Factored(y)) => {
                GridFunction::Factored(x.iter().chain(y).cloned().collect())
            }
            _ => {
                let x = self.densify(a);
                let y = self.densify(b);
                GridFunction::Dense(x.iter().zip(&y).map(|(p, q)| p + q).collect())
            }
        }
    }

    pub fn sub(&self, a: &GridFunction, b: &GridFunction) -> GridFunction {
        self.add(a, &b.scale(-1.0))
    }
}

impl GridFunction {
    pub fn scale(&self, k: f64) -> GridFunction {
        match self {
            GridFunction::Dense(d) => GridFunction::Dense(d.iter().map(|a| k * a).collect()),
            GridFunction::Factored(t) => GridFunction::Factored(
                t.iter()
                    .map(|g| GridTerm {
                        spatial: g.spatial.iter().map(|a| k * a).collect(),
                        slice: g.slice.clone(),
                    })
                    .collect(),
            ),
        }
    }

    pub fn zero() -> GridFunction {
        GridFunction::Factored(Vec::new())
    }
}

/// ω·∇ₓψ on the grid; product form for separable fields.
pub fn advection_on_grid(grid: &PhaseGrid, f: &dyn PhaseField) -> GridFunction {
    match f.as_separable() {
        Some(s) => {
            let base = grid.sample_slice(|w, e| s.y.value(w) * s.c.jet(e, s.e0, s.em).0);
            let grads: Vec<Vec3> = grid.space.iter().map(|(x, _)| s.a.grad(x, s.radius) * s.scale).collect();
            let mut terms = Vec::new();
            for i in 0..3 {
                if grads.iter().all(|v| v[i] == 0.0) {
                    continue;
                }
                let ne = grid.energies.len();
                let slice = base.iter().enumerate().map(|(k, b)| grid.dirs[k / ne].0[i] * b).collect();
                terms.push(GridTerm {
                    spatial: grads.iter().map(|v| v[i]).collect(),
                    slice,
                });
            }
            GridFunction::Factored(terms)
        }
        None => grid.sample(|x, w, e| w.dot(&f.grad_x(x, w, e))),
    }
}

/// Deterministic quasi-random phase points (Halton bases 2, 3, 5, 7, 11, 13),
/// offset by `seed`; energies stay a fraction `margin` of |I| away from the ends.
pub fn phase_points(space: &PhaseSpace, n: usize, seed: u64, margin: f64) -> Vec<(Vec3, Vec3, f64)> {
    let len = space.em - space.e0;
    (0..n as u64)
        .map(|k| {
            let i = k + 1 + seed;
            let rad = space.radius * halton(i, 2).cbrt();
            let z = 2.0 * halton(i, 3) - 1.0;
            let phi = 2.0 * std::f64::consts::PI * halton(i, 5);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let x = Vec3::new(s * phi.cos(), s * phi.sin(), z) * rad;
            let wz = 2.0 * halton(i, 7) - 1.0;
            let wphi = 2.0 * std::f64::consts::PI * halton(i, 11);
            let ws = (1.0 - wz * wz).max(0.0).sqrt();
            let w = Vec3::new(ws * wphi.cos(), ws * wphi.sin(), wz).normalize();
            let e = space.e0 + len * (margin + (1.0 - 2.0 * margin) * halton(i, 13));
            (x, w, e)
        })
        .collect()
}

/// ∫_{G×S×I} ψ v.
pub fn l2_inner(psi: &dyn PhaseField, v: &dyn PhaseField, space: &PhaseSpace) -> f64 {
    let grid = PhaseGrid::new(space);
    grid.inner(&grid.sample_field(psi), &grid.sample_field(v))
}

/// Side of the boundary phase space: Γ₋ (ω·ν < 0) or Γ₊ (ω·ν > 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

/// ∫_{Γ_side} g₁ g₂ |ω·ν| dσ dω dE, with direction nodes aligned to ν so the
/// hemisphere cut is resolved exactly.
pub fn trace_inner(
    g1: &dyn Fn(&Vec3, &Vec3, f64) -> f64,
    g2: &dyn Fn(&Vec3, &Vec3, f64) -> f64,
    side: Side,
    space: &PhaseSpace,
) -> f64 {
    let energies = space.energy_rule(&[]);
    let [hp, ha] = space.quadrature.hemisphere;
    let mut total = KahanSum::new();
    for (y, wy) in space.surface_rule() {
        let nu = space.normal(&y);
        let hemi = SphereRule::hemisphere(&nu, side == Side::Plus, hp, ha);
        let mut sy = KahanSum::new();
        for (w, ww) in &hemi.points {
            let c = w.dot(&nu).abs();
            let mut se = KahanSum::new();
            for &(e, we) in &energies {
                se.add(we * g1(&y, w, e) * g2(&y, w, e));
            }
            sy.add(ww * c * se.value());
        }
        total.add(wy * sy.value());
    }
    total.value()
}

/// [`trace_inner`] of two fields; separable pairs split off the energy integral.
pub fn trace_fields(psi: &dyn PhaseField, v: &dyn PhaseField, side: Side, space: &PhaseSpace) -> f64 {
    if let (Some(a), Some(b)) = (psi.as_separable(), v.as_separable()) {
        let mut se = KahanSum::new();
        for (e, we) in space.energy_rule(&[]) {
            se.add(we * (a.c.jet(e, a.e0, a.em).0 * b.c.jet(e, b.e0, b.em).0));
        }
        let [hp, ha] = space.quadrature.hemisphere;
        let mut total = KahanSum::new();
        for (y, wy) in space.surface_rule() {
            let nu = space.normal(&y);
            let hemi = SphereRule::hemisphere(&nu, side == Side::Plus, hp, ha);
            let mut sy = KahanSum::new();
            for (w, ww) in &hemi.points {
                sy.add(ww * w.dot(&nu).abs() * (a.y.value(w) * b.y.value(w)));
            }
            total.add(wy * (a.spatial_value(&y) * b.spatial_value(&y)) * sy.value());
        }
        return a.scale * b.scale * total.value() * se.value();
    }
    let g1 = |y: &Vec3, w: &Vec3, e: f64| psi.eval(y, w, e);
    let g2 = |y: &Vec3, w: &Vec3, e: f64| v.eval(y, w, e);
    trace_inner(&g1, &g2, side, space)
}

/// ∫_{∂G×S×I} (ω·ν) ψ v = trace₊ − trace₋.
pub fn boundary_flux(psi: &dyn PhaseField, v: &dyn PhaseField, space: &PhaseSpace) -> f64 {
    trace_fields(psi, v, Side::Plus, space) - trace_fields(psi, v, Side::Minus, space)
}

/// |∫(ω·∇ₓψ)v + ∫(ω·∇ₓv)ψ − ∫_{∂G×S×I}(ω·ν)ψv|.
pub fn green_residual(psi: &dyn PhaseField, v: &dyn PhaseField, space: &PhaseSpace) -> f64 {
    let grid = PhaseGrid::new(space);
    let vol = grid.sample(|x, w, e| {
        w.dot(&psi.grad_x(x, w, e)) * v.eval(x, w, e) + w.dot(&v.grad_x(x, w, e)) * psi.eval(x, w, e)
    });
    (grid.integral(&vol) - boundary_flux(psi, v, space)).abs()
}
