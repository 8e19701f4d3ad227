//! Online construction and maintenance of approximate k-nearest-neighbor
//! graphs.
//!
//! An [`OrthoGraph`] keeps, for every live vertex, a bounded list of its `k`
//! closest known neighbors together with the reverse lists needed to update
//! and remove vertices in place. New samples are linked by searching the
//! graph itself; see [`GraphBuilder`] and [`build`].

pub mod construct;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod metric;
pub mod search;

pub use construct::{
    build, estimate_intrinsic_dim, BuildConfig, BuildStats, GraphBuilder, Variant,
    DEFAULT_BOOTSTRAP,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{
    brute_force_knn, gen_uniform, recall_at_k, run_experiment, scanning_rate, DataSource,
    EvalReport, ExperimentConfig, GroundTruth, TruthCache,
};
pub use graph::{Edge, OrthoGraph, VertexId, Violation};
pub use metric::{DistanceCounter, Metric};
pub use search::{ehc_search, lgd_search, SearchParams, SearchResult, SearchScratch};
