//! Building blocks for offline recommender-system experiments.
//!
//! The crate covers the full offline workflow: ingesting interaction logs
//! ([`interactions`]), partitioning them into train/validation/test parts
//! ([`splitters`]), fitting classical collaborative-filtering models
//! ([`models`]), scoring them with rating and ranking metrics ([`metrics`]),
//! searching hyperparameters ([`tuning`]) and composing all of it into a
//! reproducible, config-driven run ([`pipeline`]).
//!
//! Every stochastic step takes an explicit seed; identical inputs produce
//! identical outputs regardless of the number of worker threads.

pub mod interactions;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod splitters;
pub mod tuning;

pub use interactions::{
    generate_synthetic, load_interactions, write_interactions, Aggregation, DataError, IdIndex,
    Interaction, InteractionSet, Schema, SparseMatrixView, SyntheticData, SyntheticSpec,
};
pub use metrics::{MetricError, MetricReport, RankedLists, RatingPairs};
pub use models::{fit, Model, ModelError, ModelParams};
pub use splitters::{GroupBy, Split, SplitError, SplitMethod, SplitSpec};
pub use tuning::{ParamSpace, Trial, TuneError};

/// Version string recorded in run manifests and model files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
