//! Wasserstein sub-graph feature encoding (WSFE) for user segmentation.
//!
//! Users of a user–item interaction graph are represented by the stack of
//! their layer-wise propagated embeddings. Each stack is read as an
//! empirical distribution and encoded into a fixed-length vector whose
//! Euclidean geometry reproduces the Monte-Carlo sliced Wasserstein-2
//! distance between users. The crate covers the whole pipeline:
//!
//! - [`graph`]: interaction ingestion, persistence and overlap ground truth
//! - [`backbone`]: LightGCN-style propagation, BPR training, feature files
//! - [`encoder`]: projections, reference distribution and the encoder
//! - [`ot`]: reference 1D and sliced Wasserstein distances
//! - [`eval`]: brute-force retrieval with Recall@K / NDCG@K
//! - [`config`]: pipeline configuration and metadata sidecars
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is
//! enabled, and sequentially otherwise; results are identical either way.

mod binio;

pub mod backbone;
pub mod bench;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ot;
pub mod par;
pub mod synthetic;

pub use backbone::{
    export_layer_features, import_layer_features, propagate, train_bpr, BprConfig, EmbeddingTable,
    LayerFeatureSet, NormalizedAdjacency, TrainOutput,
};
pub use encoder::{
    encode_all, encode_user, ot_map_ranks, project, Encoder, EncodingMatrix, Layout, Normalization,
    ProjectionSet, ReferenceSet, UserEncoding,
};
pub use error::{Error, Result};
pub use eval::{evaluate, ndcg_at_k, rank_by_distance, recall_at_k, EvalReport, RetrievalResult};
pub use graph::{
    build_ground_truth, load_interactions, GraphStats, GroundTruthRanking, InputFormat,
    InteractionGraph,
};
pub use ot::{mc_sw2, w2_1d, w2_1d_bruteforce, PointSet};
pub use par::Exec;
