//! Deterministic numerics for the Boltzmann transport equation with Møller
//! scattering: Hadamard finite parts, sphere geometry, collision operators,
//! transport forms, variational identities and the CSDA approximation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod finite_part;
pub mod kinematics_xs;
pub mod phase_field;
pub mod quadrature;
pub mod sphere_geom;
pub mod collision_ops;
pub mod transport_variational;
pub mod csda;
pub mod config;
pub mod cli;
