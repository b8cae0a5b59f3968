//! Topic-focused dynamic information filtering over document streams.

pub mod corpus;
pub mod divfeat;
pub mod error;
pub mod learn;
pub mod metrics;
pub mod plsa;
pub mod relfeat;
pub mod select;
pub mod synth;

pub use error::{Error, Result};
