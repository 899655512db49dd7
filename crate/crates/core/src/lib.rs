//! Graph optimized convolutional networks (GOCN) and their multi-graph
//! extension (M-GOCN).
//!
//! Each propagation layer alternates between learning a non-negative
//! symmetric graph `S` from the input graph and the current aggregation,
//! and aggregating features over `S` with a truncated power iteration. The
//! whole unrolled computation is recorded on a [`tape::Tape`] so the layer
//! weights can be trained end to end.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod graph;
pub mod model;
pub mod propagation;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod verify;

pub use datasets::{Dataset, Split};
pub use graph::{Graph, NormalizedGraph};
pub use model::{ModelConfig, ModelParams, TrainReport, Variant};
pub use propagation::{GocConfig, GraphWeights};
pub use rng::SeededRng;
pub use tape::{Tape, Var};
pub use tensor::{Matrix, TensorError};
