//! Uniform interface over frozen vision-language backbones.
//!
//! A backbone exposes one visual forward pass with a full per-layer trace
//! (block outputs, pre-residual contributions, CLS residuals, projection
//! weights) plus a text encoder mapping prompts into the visual-text joint
//! space. The crate ships a deterministic toy backbone for fixture-based
//! testing; adapters for real models plug in behind the same trait.
//!
//! Trace contract: `cls_residuals` must sum to the final CLS row of
//! `layer_outputs` (the decomposition consumed by dynamic layer weighting).
//! The toy backbone satisfies this exactly by starting the CLS slot at zero;
//! adapters for pretrained models are expected to fold the initial CLS
//! embedding into the first layer's residual.

pub(crate) mod fixture;
mod toy;

pub use fixture::{write_fixture, ToyDims, ToyLayerWeights, ToyWeights, FIXTURE_MAGIC};
pub use toy::{ToyBackbone, LN_EPS};

use crate::error::{CoreError, Result};
use crate::mat::Mat;

/// Static description of a backbone: dimensions, patch grid, frame handling.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneDescriptor {
    pub layer_count: usize,
    pub embed_dim: usize,
    pub head_count: usize,
    pub head_dim: usize,
    /// Patch grid per frame, `(rows, cols)`.
    pub patch_grid: (usize, usize),
    /// Pixel size of one patch, `(height, width)`.
    pub patch_px: (usize, usize),
    /// 1 for image backbones (any frame count accepted, embedded per frame),
    /// 8 for the video backbone (frame count must match exactly).
    pub native_frame_count: usize,
    /// Fixture file path or external adapter handle.
    pub weight_source: String,
}

impl BackboneDescriptor {
    pub fn tokens_per_frame(&self) -> usize {
        self.patch_grid.0 * self.patch_grid.1
    }

    pub fn frame_px(&self) -> (usize, usize) {
        (
            self.patch_grid.0 * self.patch_px.0,
            self.patch_grid.1 * self.patch_px.1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_count == 0 {
            return Err(invalid("layer_count", "must be at least 1"));
        }
        if self.embed_dim != self.head_count * self.head_dim {
            return Err(invalid(
                "embed_dim",
                "must equal head_count * head_dim",
            ));
        }
        if self.tokens_per_frame() == 0 {
            return Err(invalid("patch_grid", "must contain at least one patch"));
        }
        if self.native_frame_count != 1 && self.native_frame_count != 8 {
            return Err(invalid("native_frame_count", "must be 1 or 8"));
        }
        Ok(())
    }
}

fn invalid(field: &str, message: &str) -> CoreError {
    CoreError::InvalidConfig {
        field: field.to_string(),
        message: message.to_string(),
    }
}

/// Per-layer attention projection weights shared with the self-self pathway.
#[derive(Debug, Clone)]
pub struct LayerProjections {
    /// d x (h * d_h)
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    /// (h * d_h) x d attention output projection
    pub w_o: Mat,
}

/// Final layer norm plus the visual-to-joint-space projection, applied to
/// tokens before any cosine similarity with text embeddings.
#[derive(Debug, Clone)]
pub struct FinalProjection {
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    /// d x d
    pub w_vis: Mat,
}

impl FinalProjection {
    /// Map visual tokens into the joint space: final layer norm, then the
    /// visual projection.
    pub fn apply(&self, tokens: &Mat) -> Mat {
        toy::layer_norm_rows(tokens, &self.ln_gain, &self.ln_bias, toy::LN_EPS)
            .matmul(&self.w_vis)
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        self.apply(&Mat::from_vec(1, row.len(), row.to_vec()))
            .row(0)
            .to_vec()
    }
}

/// Everything captured during one visual forward pass.
///
/// Token layout: one CLS slot at row 0, then patch tokens in frame-major,
/// row-major order, `1 + T * N` rows total.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// X^0 .. X^L, each (1 + T*N) x d.
    pub layer_outputs: Vec<Mat>,
    /// Y^1 .. Y^L: block contributions before the residual add, X^l - X^{l-1}.
    pub pre_residual: Vec<Mat>,
    /// CLS rows of Y^1 .. Y^L, taken from the original self-attention pathway.
    pub cls_residuals: Vec<Vec<f64>>,
    /// Projection weights for layers 1 .. L.
    pub projections: Vec<LayerProjections>,
    pub final_projection: FinalProjection,
    pub tokens_per_frame: usize,
    pub frame_count: usize,
    /// Index of the labeled frame within the batch.
    pub target_frame: usize,
}

impl LayerTrace {
    /// Number of transformer blocks L.
    pub fn depth(&self) -> usize {
        self.pre_residual.len()
    }

    /// X^L.
    pub fn final_output(&self) -> &Mat {
        &self.layer_outputs[self.depth()]
    }

    /// x_CLS: the CLS row of X^L.
    pub fn cls_final(&self) -> &[f64] {
        self.final_output().row(0)
    }

    /// Total token rows including the CLS slot.
    pub fn token_count(&self) -> usize {
        1 + self.frame_count * self.tokens_per_frame
    }
}

/// Sentence-level text embedding in the joint space. Stored unnormalized;
/// cosine operations normalize on use.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub source_prompt: String,
}

/// How a frame batch was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    /// Consecutive frames sampled around the labeled frame.
    Video,
    /// The labeled frame repeated T times.
    RepeatedImage,
}

/// One decoded frame, 8-bit RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 bytes per pixel.
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(CoreError::BadInput {
                message: format!(
                    "frame buffer length {} does not match {}x{} RGB",
                    rgb.len(),
                    width,
                    height
                ),
            });
        }
        Ok(Frame { width, height, rgb })
    }
}

/// An ordered frame sequence with a designated target frame.
#[derive(Debug, Clone)]
pub struct FrameBatch {
    frames: Vec<Frame>,
    target_index: usize,
    mode: FrameMode,
}

impl FrameBatch {
    pub fn new(frames: Vec<Frame>, target_index: usize, mode: FrameMode) -> Result<Self> {
        if frames.is_empty() {
            return Err(CoreError::BadInput {
                message: "frame batch is empty".to_string(),
            });
        }
        if target_index >= frames.len() {
            return Err(CoreError::BadInput {
                message: format!(
                    "target index {} out of range for {} frames",
                    target_index,
                    frames.len()
                ),
            });
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(CoreError::BadInput {
                message: "frames in a batch must share dimensions".to_string(),
            });
        }
        Ok(FrameBatch {
            frames,
            target_index,
            mode,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn mode(&self) -> FrameMode {
        self.mode
    }
}

/// Frozen vision-language backbone. Implementations are immutable after
/// construction and safe to share across threads.
pub trait Backbone: Send + Sync {
    fn descriptor(&self) -> &BackboneDescriptor;

    /// Run the visual side over a frame batch, capturing the full trace.
    fn forward_with_trace(&self, batch: &FrameBatch) -> Result<LayerTrace>;

    /// Embed a prompt into the joint space.
    fn encode_text(&self, prompt: &str) -> Result<TextEmbedding>;
}
