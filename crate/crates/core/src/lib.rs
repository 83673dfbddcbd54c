//! False-negative mining and adversarial alignment for distantly supervised
//! relation extraction.

pub mod aligner;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod miner;
pub mod numerics;
pub mod trainer;

pub use error::{FanError, Result};
