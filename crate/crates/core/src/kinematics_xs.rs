//! Møller kinematic factor μ(E′,E) and cross-section families.

use crate::quadrature::{legendre_table, GaussLegendre, KahanSum, SphereRule};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("energies out of order: E' = {e_prime} < E = {e}")]
    EnergyOrder { e_prime: f64, e: f64 },
    #[error("energy must be positive, got {0}")]
    NonPositive(f64),
}

fn check(e_prime: f64, e: f64) -> Result<(), KinematicsError> {
    if !(e > 0.0) {
        return Err(KinematicsError::NonPositive(e));
    }
    if !(e_prime >= e) {
        return Err(KinematicsError::EnergyOrder { e_prime, e });
    }
    Ok(())
}

/// μ(E′,E) = √(E(E′+2)/(E′(E+2))), exactly 1 on the diagonal.
pub fn mu(e_prime: f64, e: f64) -> Result<f64, KinematicsError> {
    check(e_prime, e)?;
    if e_prime == e {
        return Ok(1.0);
    }
    Ok((e * (e_prime + 2.0) / (e_prime * (e + 2.0))).sqrt())
}

/// ∂μ/∂E′ = (1/(2μ)) (−2E)/(E′²(E+2)).
pub fn mu_de_prime(e_prime: f64, e: f64) -> Result<f64, KinematicsError> {
    let m = mu(e_prime, e)?;
    Ok(-2.0 * e / (2.0 * m * e_prime * e_prime * (e + 2.0)))
}

/// ∂μ/∂E = (1/(2μ)) (2E′+4)/(E′(E+2)²).
pub fn mu_de(e_prime: f64, e: f64) -> Result<f64, KinematicsError> {
    let m = mu(e_prime, e)?;
    Ok((2.0 * e_prime + 4.0) / (2.0 * m * e_prime * (e + 2.0) * (e + 2.0)))
}

/// (∂_{E′}μ + ∂_Eμ)(E,E); vanishes identically.
pub fn mu_sum_identity(e: f64) -> Result<f64, KinematicsError> {
    Ok(mu_de_prime(e, e)? + mu_de(e, e)?)
}

/// 1 − μ² in the cancellation-free form 2(E′−E)/(E′(E+2)).
pub fn one_minus_mu_sq(e_prime: f64, e: f64) -> Result<f64, KinematicsError> {
    check(e_prime, e)?;
    Ok(2.0 * (e_prime - e) / (e_prime * (e + 2.0)))
}

/// Smoothness classes declared by a cross-section family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessTags {
    /// σ̂_j ∈ C² in (E′, E).
    pub energy_c2: bool,
    /// σ¹, σ² continuous in the directions.
    pub angular_continuous: bool,
}

/// Coefficient functions and kernels of the collision operator.
///
/// `sigma_hat(j, …)` for j = 0, 1, 2 are the coefficients σ̂ⱼ(x,E′,E) of the
/// circle-averaging operators. The restricted operator uses σ¹(x,ω′,ω,E′,E),
/// σ²(x,ω′,ω,E) and σ̂³(x,E′,E); `total` is Σ(x,ω,E).
pub trait CrossSectionSet: Sync {
    fn sigma_hat(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64;
    fn sigma_hat_de_prime(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64;
    fn sigma_hat_de(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64;
    fn sigma1(&self, x: &Vec3, w_prime: &Vec3, w: &Vec3, e_prime: f64, e: f64) -> f64;
    fn sigma2(&self, x: &Vec3, w_prime: &Vec3, w: &Vec3, e: f64) -> f64;
    /// σ̂³(x,E′,E); zero unless E′ > E.
    fn sigma3_hat(&self, x: &Vec3, e_prime: f64, e: f64) -> f64;
    fn total(&self, x: &Vec3, w: &Vec3, e: f64) -> f64;
    fn smoothness(&self) -> SmoothnessTags;

    /// `Some(s(x))` when every collision kernel factors as s(x) times its
    /// value at x = 0, with s(0) = 1. Assemblies use this to evaluate the
    /// collision operators once per (ω, E) node.
    fn spatial_profile(&self, _x: &Vec3) -> Option<f64> {
        None
    }

    /// True when σ̂₁ and σ̂₂ vanish identically.
    fn singular_parts_vanish(&self) -> bool {
        false
    }

    /// `Some(Σ)` when Σ does not depend on (x, ω, E).
    fn constant_total(&self) -> Option<f64> {
        None
    }
}

/// Parameters of the synthetic family, also the JSON `cross_sections` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XsParams {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "d_c0")]
    pub c0: f64,
    #[serde(default = "d_c1")]
    pub c1: f64,
    #[serde(default = "d_c2")]
    pub c2: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(rename = "Sigma", alias = "sigma", default = "d_sigma")]
    pub sigma: f64,
    #[serde(rename = "M1", alias = "m1", default = "d_m")]
    pub m1: f64,
    #[serde(rename = "M2", alias = "m2", default = "d_m")]
    pub m2: f64,
    /// Strength of the elastic kernel σ².
    #[serde(default = "d_cel")]
    pub c_elastic: f64,
    /// Legendre coefficients b_ℓ of σ² in ω·ω′.
    #[serde(default = "d_leg")]
    pub legendre: Vec<f64>,
    /// Strength of the energy-changing kernel σ¹.
    #[serde(default = "d_cr")]
    pub c_restricted: f64,
}

fn default_family() -> String {
    "synthetic".into()
}
fn d_c0() -> f64 {
    0.5
}
fn d_c1() -> f64 {
    0.4
}
fn d_c2() -> f64 {
    0.3
}
fn d_beta() -> f64 {
    0.5
}
fn d_lambda() -> f64 {
    1.0
}
fn d_sigma() -> f64 {
    1.0
}
fn d_m() -> f64 {
    20.0
}
fn d_cel() -> f64 {
    0.3
}
fn d_leg() -> Vec<f64> {
    vec![1.0, 0.5, 0.2]
}
fn d_cr() -> f64 {
    0.2
}

impl Default for XsParams {
    fn default() -> Self {
        XsParams {
            family: default_family(),
            c0: d_c0(),
            c1: d_c1(),
            c2: d_c2(),
            beta: d_beta(),
            lambda: d_lambda(),
            sigma: d_sigma(),
            m1: d_m(),
            m2: d_m(),
            c_elastic: d_cel(),
            legendre: d_leg(),
            c_restricted: d_cr(),
        }
    }
}

impl XsParams {
    /// All collision kernels off; only Σ remains.
    pub fn advection_only(sigma: f64) -> Self {
        XsParams {
            c0: 0.0,
            c1: 0.0,
            c2: 0.0,
            c_elastic: 0.0,
            c_restricted: 0.0,
            sigma,
            ..XsParams::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum XsError {
    #[error("unknown cross-section family `{0}`")]
    UnknownFamily(String),
    #[error("parameter `{name}` must be {rule}, got {value}")]
    BadParameter { name: &'static str, rule: &'static str, value: f64 },
}

/// Smooth synthetic family
///
/// ```text
/// σ̂ⱼ(x,E′,E) = cⱼ (1+β‖x‖²)⁻¹ exp(−(E′−E)/λ) p(E′,E),  p = 1 + (E′−E)/2 + E/10
/// σ²(x,ω′,ω,E) = c_el (1+β‖x‖²)⁻¹ Σ_ℓ b_ℓ (2ℓ+1)/(4π) P_ℓ(ω·ω′)
/// σ¹(x,ω′,ω,E′,E) = c_r (1+β‖x‖²)⁻¹ (1 + ω·ω′/2)/(4π) exp(−(E′−E)/λ) E′/(E′+E)
/// σ̂³ = σ̂₀ χ(E′ > E),  Σ constant
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticXs {
    pub params: XsParams,
    legendre_weights: Vec<f64>,
}

impl SyntheticXs {
    fn profile(&self, x: &Vec3) -> f64 {
        1.0 / (1.0 + self.params.beta * x.norm_squared())
    }

    fn c(&self, j: usize) -> f64 {
        match j {
            0 => self.params.c0,
            1 => self.params.c1,
            2 => self.params.c2,
            _ => panic!("sigma_hat index {j} out of range"),
        }
    }

    fn energy_shape(&self, e_prime: f64, e: f64) -> (f64, f64) {
        let ex = (-(e_prime - e) / self.params.lambda).exp();
        let p = 1.0 + 0.5 * (e_prime - e) + 0.1 * e;
        (ex, p)
    }
}

impl CrossSectionSet for SyntheticXs {
    fn sigma_hat(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64 {
        let c = self.c(j);
        if c == 0.0 {
            return 0.0;
        }
        let (ex, p) = self.energy_shape(e_prime, e);
        c * self.profile(x) * ex * p
    }

    fn sigma_hat_de_prime(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64 {
        let c = self.c(j);
        if c == 0.0 {
            return 0.0;
        }
        let (ex, p) = self.energy_shape(e_prime, e);
        c * self.profile(x) * ex * (0.5 - p / self.params.lambda)
    }

    fn sigma_hat_de(&self, j: usize, x: &Vec3, e_prime: f64, e: f64) -> f64 {
        let c = self.c(j);
        if c == 0.0 {
            return 0.0;
        }
        let (ex, p) = self.energy_shape(e_prime, e);
        c * self.profile(x) * ex * (p / self.params.lambda - 0.4)
    }

    fn sigma1(&self, x: &Vec3, w_prime: &Vec3, w: &Vec3, e_prime: f64, e: f64) -> f64 {
        let c = self.params.c_restricted;
        if c == 0.0 {
            return 0.0;
        }
        let ex = (-(e_prime - e) / self.params.lambda).exp();
        c * self.profile(x) * (1.0 + 0.5 * w.dot(w_prime)) / (4.0 * PI) * ex * e_prime / (e_prime + e)
    }

    fn sigma2(&self, x: &Vec3, w_prime: &Vec3, w: &Vec3, _e: f64) -> f64 {
        let c = self.params.c_elastic;
        if c == 0.0 || self.legendre_weights.is_empty() {
            return 0.0;
        }
        let t = w.dot(w_prime).clamp(-1.0, 1.0);
        let p = legendre_table(self.legendre_weights.len() - 1, t);
        let mut acc = 0.0;
        for (b, pl) in self.legendre_weights.iter().zip(&p) {
            acc += b * pl;
        }
        c * self.profile(x) * acc
    }

    fn sigma3_hat(&self, x: &Vec3, e_prime: f64, e: f64) -> f64 {
        if e_prime > e {
            self.sigma_hat(0, x, e_prime, e)
        } else {
            0.0
        }
    }

    fn total(&self, _x: &Vec3, _w: &Vec3, _e: f64) -> f64 {
        self.params.sigma
    }

    fn smoothness(&self) -> SmoothnessTags {
        SmoothnessTags {
            energy_c2: true,
            angular_continuous: true,
        }
    }

    fn spatial_profile(&self, x: &Vec3) -> Option<f64> {
        Some(self.profile(x))
    }

    fn singular_parts_vanish(&self) -> bool {
        self.params.c1 == 0.0 && self.params.c2 == 0.0
    }

    fn constant_total(&self) -> Option<f64> {
        Some(self.params.sigma)
    }
}

/// Build a cross-section family by id. Only `"synthetic"` is provided.
pub fn builtin_xs(family_id: &str, params: &XsParams) -> Result<SyntheticXs, XsError> {
    if family_id != "synthetic" {
        return Err(XsError::UnknownFamily(family_id.to_string()));
    }
    let p = params;
    for (name, v) in [
        ("c0", p.c0),
        ("c1", p.c1),
        ("c2", p.c2),
        ("c_elastic", p.c_elastic),
        ("c_restricted", p.c_restricted),
        ("beta", p.beta),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(XsError::BadParameter { name, rule: "non-negative", value: v });
        }
    }
    if !(p.lambda > 0.0) || !p.lambda.is_finite() {
        return Err(XsError::BadParameter { name: "lambda", rule: "positive", value: p.lambda });
    }
    if !p.sigma.is_finite() {
        return Err(XsError::BadParameter { name: "Sigma", rule: "finite", value: p.sigma });
    }
    for (name, v) in [("M1", p.m1), ("M2", p.m2)] {
        if !(v > 0.0) {
            return Err(XsError::BadParameter { name, rule: "positive", value: v });
        }
    }
    let legendre_weights = p
        .legendre
        .iter()
        .enumerate()
        .map(|(l, b)| b * (2.0 * l as f64 + 1.0) / (4.0 * PI))
        .collect();
    Ok(SyntheticXs {
        params: p.clone(),
        legendre_weights,
    })
}

/// Sampled row/column integrals of the restricted kernel σ¹ + σ² + σ̂³ on
/// I = [e0, em], maximised over the sample points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurEstimate {
    pub row_sup: f64,
    pub col_sup: f64,
}

impl SchurEstimate {
    pub fn within(&self, m1: f64, m2: f64) -> bool {
        self.row_sup <= m1 && self.col_sup <= m2
    }
}

pub fn schur_bounds(xs: &dyn CrossSectionSet, e0: f64, em: f64, xs_points: &[Vec3]) -> SchurEstimate {
    let sphere = SphereRule::new(8, 16);
    let gl = GaussLegendre::new(24);
    let dirs = [Vec3::z(), Vec3::new(0.6, 0.0, 0.8), Vec3::new(0.0, -1.0, 0.0)];
    let energies: Vec<f64> = (0..9).map(|k| e0 + (em - e0) * k as f64 / 8.0).collect();
    let mut row_sup: f64 = 0.0;
    let mut col_sup: f64 = 0.0;
    for x in xs_points {
        for w in &dirs {
            for &e in &energies {
                // row: integrate over the incoming variables (ω′, E′)
                let mut row = KahanSum::new();
                row.add(sphere.integrate(|wp| xs.sigma2(x, wp, w, e).abs()));
                for (ep, we) in gl.mapped(e0, em) {
                    row.add(we * sphere.integrate(|wp| xs.sigma1(x, wp, w, ep, e).abs()));
                }
                if e < em {
                    for (ep, we) in gl.mapped(e, em) {
                        row.add(we * 2.0 * PI * xs.sigma3_hat(x, ep, e).abs());
                    }
                }
                row_sup = row_sup.max(row.value());
                // column: integrate over the outgoing variables (ω, E)
                let (wp, ep) = (w, e);
                let mut col = KahanSum::new();
                col.add(sphere.integrate(|wo| xs.sigma2(x, wp, wo, ep).abs()));
                for (eo, we) in gl.mapped(e0, em) {
                    col.add(we * sphere.integrate(|wo| xs.sigma1(x, wp, wo, ep, eo).abs()));
                }
                if ep > e0 {
                    for (eo, we) in gl.mapped(e0, ep) {
                        col.add(we * 2.0 * PI * xs.sigma3_hat(x, ep, eo).abs());
                    }
                }
                col_sup = col_sup.max(col.value());
            }
        }
    }
    SchurEstimate { row_sup, col_sup }
}
