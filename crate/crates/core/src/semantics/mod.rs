//! Crops, feature providers, per-instance feature fusion and text queries.

mod bridge;
mod crops;
mod fusion;
mod mock;
mod precomputed;
mod provider;
mod query;

pub use bridge::*;
pub use crops::*;
pub use fusion::*;
pub use mock::*;
pub use precomputed::*;
pub use provider::*;
pub use query::*;
