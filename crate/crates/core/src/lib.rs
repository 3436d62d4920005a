//! Core of the draftforge sketch-to-print pipeline.
//!
//! A hand-drawn sketch moves through text, candidate images and candidate
//! meshes before being repaired and exported as a binary STL. The crate is
//! split along those lines:
//!
//! - [`pipeline`]: event-sourced design sessions and the comparison routes
//! - [`gateway`]: provider abstraction (mock and live) with retries
//! - [`mesh`]: PLY/STL I/O, manufacturability analysis and repair
//! - [`metrics`]: embedding similarity, alignment and diversity reports
//! - [`dataset`]: resumable batch builder for synthetic image datasets
//! - [`store`]: content-addressed blobs and append-only session logs
//!
//! Batch work (diversity over many image sets, embedding fan-out, dataset
//! records, mesh batches) goes through [`Exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod config;
pub mod dataset;
mod exec;
pub mod gateway;
pub mod imaging;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod store;

pub use config::Config;
pub use exec::Exec;
