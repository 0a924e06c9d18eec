//! Linear-chain conditional random fields for sequence labeling.
//!
//! The crate covers the whole pipeline used for CoNLL-2000 style text
//! chunking:
//!
//! * [`corpus`]: reading, validating and shuffling 3-column CoNLL data.
//! * [`features`]: attribute templates, the frozen feature dictionary and
//!   sparse feature vectors.
//! * [`chain_crf`]: potentials, log-space forward-backward, expected feature
//!   counts, log-likelihood, Viterbi decoding and the per-sentence gradient.
//! * [`transforms`]: the per-coordinate gradient transforms (plain SGD,
//!   rational, arctan, erf and Gudermannian) with optional lookup tables.
//! * [`trainer`]: the stochastic training loop with a calibrated decaying
//!   learning rate and L2 regularization through a lazily applied scale.
//! * [`eval`]: chunk-level precision/recall/F1 with conlleval semantics.
//! * [`model_file`]: the binary model format.

pub mod chain_crf;
pub mod corpus;
mod error;
pub mod eval;
pub mod features;
pub mod model_file;
pub mod trainer;
pub mod transforms;

pub use chain_crf::{ChainModel, Lattice, Posteriors};
pub use corpus::{Dataset, LabelAlphabet, Sentence, Token};
pub use error::{Error, Result};
pub use eval::{Chunk, ChunkMetrics};
pub use features::{FeatureIndex, SparseVector, TemplateSet};
pub use trainer::{MetricsLog, TrainConfig, Trainer};
pub use transforms::{Transform, TransformKind, TransformSpec};
