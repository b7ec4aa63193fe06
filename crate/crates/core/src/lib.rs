//! Core of a federated-learning simulator for layer-aware backdoor defenses.
//!
//! The crate is `no_std` (with `alloc`): parameter algebra, synthetic data,
//! a small MLP, attack behaviours, density clustering, the three-stage
//! defense pipeline and the evaluation metrics. File IO, configuration and
//! the experiment driver live in the companion `fedsurrogate-sim` crate.

#![no_std]

extern crate alloc;

pub mod attacks;
pub mod clustering;
pub mod data;
pub mod defense;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seed;
pub mod stats;

pub use error::{AttackError, DataError, DefenseError, MetricError, ModelError, ParamError};
pub use params::{ClientUpdate, DistanceMatrix, LayerSchema, ParameterVector, Role};
