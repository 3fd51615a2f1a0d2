//! Buried-object anomaly detection in multi-polarization ground-penetrating
//! radar volumes.
//!
//! The pipeline aligns and fuses the H and V polarizations, cuts the fused
//! volume into overlapping blocks, trains a small convolutional autoencoder
//! on blocks from object-free B-scans and scores every block by how far its
//! hidden representation moves when the block is reconstructed and encoded
//! again. Block scores are averaged back into a per-sample mask whose
//! per-B-scan maxima are thresholded.
//!
//! With the default `parallel` feature, block scoring, per-sample gradients
//! and scene synthesis run on rayon; results are identical for any thread
//! count.

pub mod anomaly;
pub mod autoencoder;
pub mod blocking;
pub mod error;
pub mod eval;
pub mod exec;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use anomaly::{anomaly_score, classify, score_volume, select_threshold, AnomalyMask, DetectorConfig};
pub use autoencoder::{build_model, train, ArchitectureSpec, AutoencoderModel, Dimensionality, Family, TrainConfig, TrainReport};
pub use blocking::{aggregate_mask, plan_blocks, BlockGeometry, BlockGrid, MaskField};
pub use error::{Error, Result};
pub use eval::{auc_oracle, confusion, roc, Confusion, RocCurve};
pub use preprocess::{estimate_lag, fuse_volumes, AlignmentResult};
pub use synth::{generate_dataset, ricker, SceneConfig, SceneSpec, TargetSpec};
pub use volume::{Acquisition, Dims, Polarization, ScanLabels, Volume};
