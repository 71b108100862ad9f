//! Trailer generation from movie shot embeddings with an encoder-decoder
//! transformer, trained on synthetic movie/trailer pairs.

pub mod condition;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod shotcore;
pub mod synthdata;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
