//! Short-reply suggestion pipeline.

pub mod container;
pub mod corpus;
pub mod diversity;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod response_space;
pub mod scoring;
pub mod search;
pub mod synthetic;
pub mod trigger;
