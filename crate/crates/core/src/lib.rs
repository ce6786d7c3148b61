pub mod bench;
pub mod cli;
pub mod cvar;
pub mod error;
pub mod format;
pub mod lfr;
pub mod loss;
pub mod lti;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
