//! Command-line front end for the `lidarprop` pipeline.
//!
//! Each subcommand is a plain function over a [`config::PipelineConfig`] so
//! tests and scripts can drive it without spawning the binary.

pub mod commands;
pub mod config;
pub mod frames;
