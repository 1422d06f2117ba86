//! Training-free spatial action grounding over frozen vision-language
//! backbones.
//!
//! The engine runs a parallel self-self attention pathway over the last K
//! transformer layers of a frozen backbone, weights the per-layer
//! contributions statically and per prompt, decomposes an action label into
//! verb / object / action prompts, and fuses the per-prompt predictions into
//! one center point. A pointing-game harness scores predictions against
//! bounding-box annotations and drives layer-removal and depth sweeps.
//!
//! All math runs in f64 with fixed sequential evaluation order; file formats
//! (fixtures, raw heatmaps) are f32 little-endian.

pub mod backbone;
pub mod defaults;
pub mod error;
pub mod eval;
pub mod gem;
pub mod grounding;
pub mod mat;
pub mod pipeline;
pub mod prompt;
pub mod testkit;
pub mod weighting;

pub use error::{CoreError, Result};
