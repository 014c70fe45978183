//! Tamed Euler simulation of McKean–Vlasov SDEs through interacting particle
//! systems, with drivers for strong-rate, propagation-of-chaos,
//! moment-stability and long-time contraction experiments.

pub mod cli;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scheme;
pub mod selftest;
pub mod taming;
mod vecops;

pub use config::{emit_config, parse_config, ExperimentKind, RunConfig};
pub use ensemble::{EmpiricalMeasure, ParticleEnsemble};
pub use error::{Error, Result};
pub use model::{CoefficientModel, FamilyId, MeasureMode, ModelParams};
pub use rng::BrownianTableau;
pub use scheme::{SchemeConfig, SchemeKind, TimeGrid};
pub use taming::{TamedModel, TamingVariant};
