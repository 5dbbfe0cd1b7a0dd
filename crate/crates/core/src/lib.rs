//! Black-box oracle attacks and stateful defenses for watermark detectors
//! and decision trees.

pub mod dataset;
pub mod dtree;
pub mod error;
pub mod image;
pub mod margin_guard;
pub mod oneclass_guard;
pub mod oracle;
pub mod oracle_attack;
pub mod rng;
pub mod signal;
pub mod study;
pub mod tree_extract;
pub mod watermark;

pub use error::{Error, Result};
pub use rng::RngConfig;
pub use signal::{euclidean_distance, psnr, Psnr, Signal};

/// Library version recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
