//! Toolkit for comparing two driving-policy backbones and turning their
//! complementarity into a selection system.
//!
//! The crate is organised in the order a study runs:
//!
//! * [`features`] ingests paired feature matrices and provides centering,
//!   standardization, PCA truncation, ridge whitening, Procrustes alignment
//!   and 2D projection.
//! * [`similarity`] computes linear CKA, PCA-whitened CCA and the
//!   original-space aligned-energy ratio.
//! * [`sae`] implements the shared/unique sparse autoencoder with its full
//!   loss ledger, an analytic backward pass, metrics and controls.
//! * [`gating`] builds representation-only gates on top of the autoencoder.
//! * [`scene`] is a desk-scale 2D driving scene model with PDMS/EPDMS scoring.
//! * [`selection`] covers win counting, style-axis candidates, the learned
//!   sub-score scorer and fast/slow routing.
//! * [`synth`] generates planted feature pairs and dual-style benchmarks.

pub mod error;
pub mod features;
pub mod gating;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod scene;
pub mod sae;
pub mod selection;
pub mod similarity;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
