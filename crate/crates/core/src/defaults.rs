//! Default hyperparameters. A bare run configuration resolves to exactly
//! these values.

/// Pathway span K: self-self attention over the last seven layers.
pub const PATHWAY_SPAN: usize = 7;

/// Self-self iterations J.
pub const ITERATIONS: usize = 1;

/// Static layer weights, index 0 weighing the self-attention input X^{L-K}.
pub const STATIC_WEIGHTS: [f64; 8] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.9, 0.9];

/// Dynamic span D: per-prompt weights over the last three layers.
pub const DYNAMIC_SPAN: usize = 3;

/// Softmax temperature for dynamic weights.
pub const DYNAMIC_TEMPERATURE: f64 = 20.0;

/// Center fusion weights for verb / object / action prompts.
pub const FUSION_VERB: f64 = 0.2;
pub const FUSION_OBJECT: f64 = 0.2;
pub const FUSION_ACTION: f64 = 0.6;

/// Verb : object : action ratio for heatmap merging.
pub const MERGE_RATIO: [f64; 3] = [1.0, 1.0, 3.0];

/// Frames per sampled clip; floor(T/2) before the labeled frame, the rest
/// after.
pub const FRAMES_T: usize = 8;
