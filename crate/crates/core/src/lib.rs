//! Kernelized iterative null-space projection for removing sensitive
//! attributes from fixed-dimension embeddings, plus a gated low-rank adapter
//! that restores task utility on top of the frozen projectors.
//!
//! The pipeline is: lift perturbed embeddings with random Fourier features,
//! stack linear-probe directions in the lifted space, keep the backbone block
//! of the resulting null-space projector, and audit what is left with an MLP
//! probe through the counterfactual leakage gap.

pub mod embedding_io;
pub mod error;
pub mod gated_adapter;
pub mod inlp;
pub mod kernel_lift;
pub mod linalg;
pub mod probes;
pub mod synth;

pub use embedding_io::{AttributeLabels, EmbeddingSet, Format, ProjectorRecord};
pub use error::{Error, Result};
pub use gated_adapter::{AdapterParams, AdapterTrainConfig, ToyTaskHead};
pub use inlp::{compose_projectors, fit_attribute_projector, nullspace_projector, InlpConfig, ProbeStack};
pub use kernel_lift::{sample_rff, FeatureLift, RffSpec};
pub use probes::{LeakageReport, LinearProbeConfig, MlpConfig};
pub use synth::{generate, SynthConfig};
