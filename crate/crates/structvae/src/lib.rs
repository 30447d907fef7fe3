//! File formats, the training driver and the command-line front end for
//! `structvae-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod failure;
pub mod idx;
pub mod metrics;
pub mod pgm;
pub mod run;
