//! Attribute-driven prompt diversification for text-to-image generation.
//!
//! A session starts from a context prompt, generates a set of images,
//! classifies each image against user-editable attribute labels, and
//! compares the measured label distribution to a target. Editing the
//! targets and regenerating closes the loop.

pub mod distribution;
pub mod gateway;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod sensitivity;
pub mod session;
pub mod verify;

pub use distribution::{AttributeSpec, Distribution, DistributionError, Label};
pub use gateway::{Gateway, GatewayConfig, GatewayError};
pub use metrics::DiversityReport;
pub use sampler::SamplingMode;
pub use session::{Engine, EngineConfig, Event, Session, SessionError, SessionManager, Store};
