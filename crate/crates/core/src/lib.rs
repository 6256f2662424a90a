//! Online continual learning benchmark harness.
//!
//! Two rehearsal learners that fit incoming classes without negative
//! contrasts ([`learner::Method::SupByol`] and [`learner::Method::Ccp`]),
//! plus experience replay and plain fine-tuning baselines, trained on
//! single-pass class-incremental streams and scored with single-head
//! accuracy and forgetting.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod learner;
pub mod model;
pub mod objectives;
pub mod prototypes;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
