//! Incremental class-agnostic instance mapping from posed RGB-D streams, with
//! open-vocabulary features attached per instance.
//!
//! Frames flow through three stages: depth segmentation fused with 2D entity
//! masks, TSDF mapping with spatial-voting instance association, and per-instance
//! feature extraction gated by view coverage. [`pipeline::run`] wires them together.

pub mod error;
pub mod eval;
pub mod geom_seg;
pub mod instance_map;
pub mod pipeline;
pub mod projection;
pub mod scene_io;
pub mod semantics;
pub mod synth;
pub mod view_select;

pub use error::{Error, ProviderError, Result};
