//! Dataset loading and map export.

mod dataset;
mod export;
pub mod ply;
mod types;

pub use dataset::*;
pub use export::*;
pub use types::*;
