//! JSON run configuration for the command-line tool.

use crate::collision_ops::{CollisionContext, CollisionError, CollisionQuadrature};
use crate::csda::{CsdaContext, CsdaError, KappaConfig};
use crate::kinematics_xs::{builtin_xs, XsError, XsParams};
use crate::phase_field::{PhaseError, PhaseSpace, SeparableField};
use crate::transport_variational::{TransportContext, TransportError, TransportForm};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    CrossSections(#[from] XsError),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Csda(#[from] CsdaError),
    #[error("{0}")]
    Invalid(String),
}

/// Check tolerances. `--tol` replaces every entry except the slope bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub finite_part: f64,
    pub derivative: f64,
    pub fubini: f64,
    pub pf2_identity: f64,
    /// Frame orthonormality and R(ω)e₃ = ω.
    pub frame: f64,
    pub exp_log: f64,
    /// Δ_S eigenvalue residuals.
    pub laplace: f64,
    /// μ partials against differences.
    pub mu_partials: f64,
    pub circle_swap: f64,
    pub forms: f64,
    pub pairing: f64,
    pub variational: f64,
    pub green: f64,
    pub split: f64,
    pub mu: f64,
    /// Lower bound for the fitted κ slope.
    pub slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            finite_part: 1e-10,
            derivative: 1e-6,
            fubini: 1e-8,
            pf2_identity: 1e-7,
            frame: 1e-12,
            exp_log: 1e-10,
            laplace: 1e-8,
            mu_partials: 1e-8,
            circle_swap: 1e-6,
            forms: 1e-5,
            pairing: 1e-4,
            variational: 1e-4,
            green: 1e-6,
            split: 1e-8,
            mu: 1e-14,
            slope: 0.45,
        }
    }
}

impl Tolerances {
    pub fn uniform(t: f64) -> Self {
        Tolerances {
            finite_part: t,
            derivative: t,
            fubini: t,
            pf2_identity: t,
            frame: t,
            exp_log: t,
            laplace: t,
            mu_partials: t,
            circle_swap: t,
            forms: t,
            pairing: t,
            variational: t,
            green: t,
            split: t,
            mu: t,
            ..Tolerances::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSelection {
    /// Trial fields, vanishing at Em.
    pub trial: Vec<String>,
    /// Test fields, vanishing at E0.
    pub test: Vec<String>,
    /// Fields of the κ sweep.
    pub converge: Vec<String>,
}

impl Default for FieldSelection {
    fn default() -> Self {
        FieldSelection {
            trial: vec!["a1*Y10*cm2".into(), "ab*Y00*cmb".into(), "ax1*Y22*cm1".into()],
            test: vec!["ab*Y10*c02".into(), "a1*Y00*c01".into(), "ab*Y22*c02".into()],
            converge: vec!["a1*Y00*cm1".into(), "a1*Y10*cm2".into(), "ax1*Y10*cm1".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub csv: String,
    pub json: String,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            csv: "convergence.csv".into(),
            json: "values.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phase_space: PhaseSpace,
    pub collision_quadrature: CollisionQuadrature,
    pub cross_sections: XsParams,
    pub fields: FieldSelection,
    /// Cut-off κ and the κ sweep.
    pub csda: KappaConfig,
    pub tolerances: Tolerances,
    pub outputs: Outputs,
    /// Offset of the quasi-random phase-point sequence.
    pub seed: u64,
    /// Number of phase points used by point-wise checks and the κ sweep.
    pub points: usize,
    /// Central-difference step of the outer energy derivative.
    pub fd_step: f64,
    pub form: TransportForm,
    /// Keep the Γ₊ trace term in B₀.
    pub outflow_term: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phase_space: PhaseSpace::default(),
            collision_quadrature: CollisionQuadrature::default(),
            cross_sections: XsParams::default(),
            fields: FieldSelection::default(),
            csda: KappaConfig::default(),
            tolerances: Tolerances::default(),
            outputs: Outputs::default(),
            seed: 0,
            points: 32,
            fd_step: 1e-4,
            form: TransportForm::Refined,
            outflow_term: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.phase_space.validate()?;
        self.csda.validate()?;
        if !self.collision_quadrature.is_valid() {
            return Err(ConfigError::Invalid("collision_quadrature has an empty rule".into()));
        }
        if self.points == 0 {
            return Err(ConfigError::Invalid("points must be positive".into()));
        }
        for id in self.fields.trial.iter().chain(&self.fields.test).chain(&self.fields.converge) {
            SeparableField::from_id(id, &self.phase_space)?;
        }
        builtin_xs(&self.cross_sections.family, &self.cross_sections)?;
        Ok(())
    }

    pub fn collision(&self) -> Result<CollisionContext, ConfigError> {
        let xs = builtin_xs(&self.cross_sections.family, &self.cross_sections)?;
        Ok(CollisionContext::new(Arc::new(xs), self.phase_space.clone(), self.collision_quadrature.clone())?)
    }

    pub fn transport(&self) -> Result<TransportContext, ConfigError> {
        let mut t = TransportContext::new(self.collision()?, self.fd_step, self.form)?;
        t.outflow_term = self.outflow_term;
        Ok(t)
    }

    pub fn csda(&self) -> Result<CsdaContext, ConfigError> {
        Ok(CsdaContext::new(self.transport()?))
    }

    pub fn field(&self, id: &str) -> Result<SeparableField, ConfigError> {
        Ok(SeparableField::from_id(id, &self.phase_space)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_json(r#"{"csda": {"kappa_sweep": [1.5, 0.9, 1.1]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"phase_space": {"E0": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"fields": {"trial": ["nope"]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"unknown": 1}"#).is_err());
    }
}
