//! The target response space: canonicalization of frequent replies, the
//! response/feature graph, semi-supervised intent clustering and the final
//! response set with polarity tags.

mod canonical;
mod discover;
mod graph;
mod propagate;
mod set;

pub use canonical::{canonicalize, collect_frequent_responses, CanonicalResponse};
pub use discover::{discover_clusters, extract_top_members, Discovery, BACKGROUND_LABEL};
pub use graph::{build_intent_graph, extract_features, GraphOptions, IntentGraph, NodeKind, SeedList};
pub use propagate::{
    fixed_point_residual, objective, propagate_labels, LabelScores, Propagation, PropagationParams,
    DEFAULT_FLOOR_MARGIN,
};
pub use set::{
    apply_validation, build_draft, classify_polarity, tag_polarity, Polarity, ResponseEntry,
    ResponseSet,
};

#[derive(Debug, thiserror::Error)]
pub enum ResponseSpaceError {
    #[error("nothing left after canonicalizing {0:?}")]
    CanonicalEmpty(String),
    #[error("bad seeds file: {0}")]
    BadSeeds(String),
    #[error("duplicate seed label {0:?}")]
    DuplicateSeedLabel(String),
    #[error("seed {text:?} for {label:?} has no content words")]
    SeedNotCanonical { label: String, text: String },
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error("no seed nodes in graph")]
    NoSeeds,
    #[error("invalid propagation parameters: {0}")]
    InvalidParams(String),
    #[error("unknown cluster {0:?}")]
    UnknownCluster(String),
    #[error("ratings line {line}: {msg}")]
    MalformedRating { line: usize, msg: String },
    #[error("ratings line {line}: no such (response, cluster) entry")]
    UnknownRating { line: usize },
    #[error("bad response set: {0}")]
    BadFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
