//! Sensor-triggered stress journaling: event selection, annotation capture,
//! weekly surveys, reflection charts, persistence, cohort simulation and the
//! study analyses built on them.

pub mod analysis;
pub mod annotations;
pub mod domain;
pub mod error;
pub mod events;
pub mod lexicon;
pub mod platform;
pub mod replay;
pub mod sim;
pub mod storage;
pub mod survey;
pub mod viz;

pub use error::{CoreError, Result};
