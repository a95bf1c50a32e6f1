//! EV charging scenario engine.
//!
//! Session models (a joint start/energy mixture per segment), uncontrolled
//! load simulation, an exact LP scheduler for load-modulation control, and
//! regression surrogates that stand in for the LP at scenario scale.

pub mod chargeopt;
pub mod clock;
pub mod duration;
pub mod error;
pub mod gmm;
pub mod groundtruth;
pub mod profile;
pub mod rates;
pub mod registry;
pub mod scenario;
pub mod seeds;
pub mod session;
pub mod surrogate;

pub use error::{Error, Result};
