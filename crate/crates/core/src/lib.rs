//! Controller synthesis, certification and simulation for spatial-domain
//! vehicle platoons whose feedback is delayed by denial-of-service attacks.

pub mod certify;
pub mod config;
pub mod delay;
pub mod discretize;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod polytope;
pub mod profile;
pub mod sim;
pub mod tolerance;

pub use error::{Error, Result};
pub use model::{ErrorState, Gain, OutputVariant, PlatoonParams, VehiclePhysState};
pub use profile::ReferenceVelocityProfile;
pub use tolerance::{NumericPolicy, DEFAULT_POLICY};
