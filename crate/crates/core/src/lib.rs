pub mod correlation;
pub mod config;
pub mod coupling;
pub mod efficiency;
pub mod emitter;
pub mod error;
pub mod fiber_modes;
pub mod inference;
pub mod pipeline;
pub mod special;
pub mod timetag;

pub use error::{Error, Result};
