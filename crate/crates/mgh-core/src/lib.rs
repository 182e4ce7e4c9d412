//! Multi-granular hypergraph engine for sequence-level identity
//! representation learning.
//!
//! The pipeline ingests per-frame feature maps, pools them into part-level
//! node features at several spatial granularities, links the nodes of each
//! granularity with temporal-range hyperedges, propagates messages through
//! the hypergraphs, pools nodes with learned attention into per-granularity
//! graph features, and concatenates those into a video descriptor used for
//! cosine-distance retrieval. Training combines cross entropy, batch-hard
//! triplet, and an adversarial mutual-information penalty between
//! granularities.

pub mod diff;
pub mod error;

pub use error::{Error, Result};
