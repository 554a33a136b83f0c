//! Streaming transducer translation over discrete speech tokens.

pub mod cli;
pub mod codec;
pub mod decoder;
pub mod lattice;
pub mod logmath;
pub mod metrics;
pub mod pipeline;
pub mod streaming;
pub mod toymodel;
