//! Self-supervised graph representation learning with instance-adaptive
//! global descriptors.
//!
//! A message-passing encoder is pre-trained with contrastive and predictive
//! pretext tasks. Each node (or graph) is described not only by its local
//! neighborhood but also by first- and second-order feature differences
//! against hierarchical k-means clusters of the whole dataset. These
//! descriptors are attention-weighted across all cluster granularities,
//! fused, and injected into message passing as extra neighbor nodes.
//! Cluster centroids track the moving feature space through queue-triggered
//! momentum updates.

pub mod clusters;
pub mod ego;
pub mod encoder;
pub mod error;
pub mod pretext;
pub mod graph;
pub mod numerics;

pub use error::{Error, Result};
