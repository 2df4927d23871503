pub mod error;
pub mod filter;
pub mod graph;
pub mod kernel;
pub mod learning;
pub mod seed;
pub mod signals;
pub mod cluster;
pub mod metrics;
pub mod synth;
pub mod io;
pub mod cli;
