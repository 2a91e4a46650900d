//! Core library for learning and evaluating joint audio-video embeddings of
//! music-video segments.
//!
//! The pipeline operates on precomputed backbone features (audio and video
//! feature vectors per segment, ingested from binary embedding files). Small
//! dense projection heads are trained with a bidirectional temperature-scaled
//! contrastive loss to map both modalities into a shared space. Evaluation
//! covers cross-modal median-rank retrieval, downstream tagging/genre probes,
//! similarity-contrast analysis, and seed-based top-k retrieval reports.
//!
//! Module map:
//! - [`dataio`] — on-disk formats, dataset assembly, synthetic data generator
//! - [`sampling`] — segment/frame/crop planners and the constrained batch sampler
//! - [`neuralcore`] — dense layers, exact reverse-mode gradients, checkpoints
//! - [`contrastive`] — cosine similarity matrix and the bidirectional loss
//! - [`training`] — SGD loops for heads, autoencoder init, and probes
//! - [`eval`] — median rank, AUC/F1, track aggregation, similarity contrast
//! - [`seeding`] — named-stream RNG derivation from one 64-bit seed

pub mod contrastive;
pub mod dataio;
pub mod eval;
pub mod neuralcore;
pub mod sampling;
pub mod seeding;
pub mod training;
