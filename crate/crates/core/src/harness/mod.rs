//! Datasets, run configuration, and the command-line entry point.
//!
//! Everything that touches the filesystem or the process boundary lives
//! here: synthetic dataset generators and the IDX image loader
//! ([`dataset`]), the JSON run-configuration format ([`config`]), and the
//! CLI subcommands ([`cli`]). The numeric modules never do I/O.

pub mod cli;
pub mod config;
pub mod dataset;

pub use dataset::{
    generate_blobs, generate_two_moons, load_idx, shuffle_batches, Batch, Dataset,
};
