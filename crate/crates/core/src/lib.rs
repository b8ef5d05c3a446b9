//! Gradient-boosted decision trees trained to share thresholds and leaf
//! values across the whole ensemble, with a compact bit-level model format.

pub mod bits;
pub mod codec;
pub mod data;
pub mod eval;
pub mod model;
pub mod trainer;

pub use codec::{decode, encode, size_report, CodecError, EncodedModel, SizeReport};
pub use data::{load_csv, load_features, split_train_test, CandidateSet, DataError, Dataset, FeatureRows, LabelColumn, TaskKind};
pub use model::{Ensemble, GlobalTables, ModelError, Prediction, ThresholdRepr, Tree, TreeNode};
pub use trainer::{train, TrainConfig, TrainError};
