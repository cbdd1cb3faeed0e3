//! Power under multiplicity for multilevel randomized trials.
//!
//! The crate estimates individual, d-minimal and complete power for studies
//! with several outcomes under Bonferroni, Holm, Benjamini-Hochberg and
//! Westfall-Young adjustments, searches for the minimum detectable effect
//! size or the sample size that reaches a target power, and ships a
//! data-generating process with a full-simulation estimator that is used to
//! validate the fast test-statistic sampler.

pub mod api;
pub mod design;
pub mod dgp;
pub mod dist;
pub mod engine;
pub mod error;
pub mod explore;
pub mod mtp;
pub mod request;
pub mod sampler;
pub mod search;
pub mod seed;

pub use design::{DesignModelId, DesignParams, EffectSpec, SizeLevel};
pub use engine::{pump_power, PowerDefinition, PowerTable};
pub use error::{PumpError, Result};
pub use mtp::MtpId;
pub use request::{CheckedRequest, PowerRequest};
pub use search::{pump_mdes, pump_sample, SearchGoal, SearchResult};

/// Version string echoed in every service response.
pub const ENGINE_VERSION: &str = concat!("pump-core ", env!("CARGO_PKG_VERSION"));
