//! Ponzi account detection on Ethereum transaction-hash hypergraphs.
//!
//! Records sharing a transaction hash form one hyperedge over all accounts
//! they touch. Labeled accounts are sampled with a two-step procedure
//! (hyperedge filtering, then node refinement), the sample is propagated either
//! natively or through its clique expansion, and a two-layer encoder with a
//! softmax head is trained on 17 hand-crafted account features.

pub mod conversion;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod learning;
pub mod model;
pub mod pipeline;
pub mod sampling;
pub mod sparse;
pub mod synth;

pub use conversion::{hyper_to_homo, hypergraph_operators, normalize_adjacency, HyperHomoGraph, Normalization};
pub use features::{build_feature_matrix, extract_account_features, fit_and_normalize, FeatureMatrix};
pub use ingest::Dataset;
pub use learning::{Channel, ModelConfig, Tensor};
pub use model::{AccountId, Class, HomogeneousGraph, Hypergraph, LabelSet, Masks, TransactionRecord, TxHash};
pub use sampling::{sample_hypergraph, sample_khop, SamplerConfig};
pub use sparse::CsrMatrix;
