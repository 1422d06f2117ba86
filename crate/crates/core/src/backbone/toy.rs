//! Deterministic toy backbone.
//!
//! A small pre-LN vision transformer with ReLU MLPs whose weights come
//! entirely from a seeded fixture, plus a text stub that projects a byte
//! histogram of the prompt through a seeded matrix. It exists so that every
//! downstream operation can be tested against hand-computed numbers without
//! any pretrained model present.

use crate::backbone::{
    Backbone, BackboneDescriptor, FinalProjection, FrameBatch, LayerProjections, LayerTrace,
    TextEmbedding, ToyDims, ToyWeights,
};
use crate::backbone::fixture::TEXT_BUCKETS;
use crate::error::{CoreError, Result};
use crate::mat::Mat;
use std::path::Path;

/// Layer-norm epsilon used by every norm in the toy backbone.
pub const LN_EPS: f64 = 1e-5;

pub(crate) fn layer_norm_rows(m: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    let d = m.cols();
    assert_eq!(gain.len(), d, "layer norm gain length");
    assert_eq!(bias.len(), d, "layer norm bias length");
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let mut mean = 0.0;
        for v in row.iter() {
            mean += v;
        }
        mean /= d as f64;
        let mut var = 0.0;
        for v in row.iter() {
            var += (v - mean) * (v - mean);
        }
        var /= d as f64;
        let denom = (var + eps).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) / denom * gain[i] + bias[i];
        }
    }
    out
}

fn relu(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for v in out.row_mut(r).iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Standard multi-head query-key attention, heads concatenated, before the
/// output projection.
fn multi_head_attention(a: &Mat, w_q: &Mat, w_k: &Mat, w_v: &Mat, heads: usize) -> Mat {
    let q = a.matmul(w_q);
    let k = a.matmul(w_k);
    let v = a.matmul(w_v);
    let head_dim = q.cols() / heads;
    let temp = (head_dim as f64).sqrt();
    let mut out = Mat::zeros(a.rows(), q.cols());
    for h in 0..heads {
        let qh = q.col_block(h * head_dim, head_dim);
        let kh = k.col_block(h * head_dim, head_dim);
        let vh = v.col_block(h * head_dim, head_dim);
        let attn = qh.matmul_bt(&kh).softmax_rows(temp);
        out.set_col_block(h * head_dim, &attn.matmul(&vh));
    }
    out
}

/// Toy backbone instance; immutable after construction.
pub struct ToyBackbone {
    weights: ToyWeights,
    descriptor: BackboneDescriptor,
}

impl ToyBackbone {
    pub fn new(weights: ToyWeights, weight_source: String) -> Result<Self> {
        let dims = weights.dims;
        let descriptor = BackboneDescriptor {
            layer_count: dims.layer_count,
            embed_dim: dims.embed_dim,
            head_count: dims.head_count,
            head_dim: dims.head_dim,
            patch_grid: (dims.grid_rows, dims.grid_cols),
            patch_px: (dims.patch_px_h, dims.patch_px_w),
            native_frame_count: dims.native_frame_count,
            weight_source,
        };
        descriptor.validate()?;
        Ok(ToyBackbone {
            weights,
            descriptor,
        })
    }

    pub fn generate(seed: u64, dims: ToyDims) -> Result<Self> {
        Self::new(
            ToyWeights::generate(seed, dims)?,
            format!("toy:seed={seed}"),
        )
    }

    /// All projection and MLP weights zero; identity-like norms.
    pub fn zeroed(dims: ToyDims) -> Result<Self> {
        Self::new(ToyWeights::zeroed(dims)?, "toy:zero".to_string())
    }

    pub fn from_fixture(path: &Path) -> Result<Self> {
        Self::new(ToyWeights::load(path)?, path.display().to_string())
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    /// X^0: the CLS slot starts at exactly zero, so the final CLS token
    /// decomposes into the per-layer residuals with no remainder. Patch
    /// tokens are per-frame projections plus positional embeddings shared
    /// across frames, frame-major then row-major.
    fn embed(&self, batch: &FrameBatch) -> Mat {
        let dims = &self.weights.dims;
        let d = dims.embed_dim;
        let n = dims.tokens_per_frame();
        let t = batch.len();
        let mut x0 = Mat::zeros(1 + t * n, d);
        let (ph, pw) = (dims.patch_px_h, dims.patch_px_w);
        let frame_w = dims.grid_cols * pw;
        let mut patch_vec = vec![0.0f64; dims.patch_input_len()];
        for (fi, frame) in batch.frames().iter().enumerate() {
            for gr in 0..dims.grid_rows {
                for gc in 0..dims.grid_cols {
                    let mut at = 0;
                    for py in 0..ph {
                        let y = gr * ph + py;
                        for px in 0..pw {
                            let x = gc * pw + px;
                            let base = (y * frame_w + x) * 3;
                            for c in 0..3 {
                                patch_vec[at] = frame.rgb[base + c] as f64 / 255.0;
                                at += 1;
                            }
                        }
                    }
                    let p = gr * dims.grid_cols + gc;
                    let row = x0.row_mut(1 + fi * n + p);
                    for (j, slot) in row.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (i, pv) in patch_vec.iter().enumerate() {
                            acc += pv * self.weights.w_patch.get(i, j);
                        }
                        *slot = acc + self.weights.pos_embed.get(p, j);
                    }
                }
            }
        }
        x0
    }
}

impl Backbone for ToyBackbone {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    fn forward_with_trace(&self, batch: &FrameBatch) -> Result<LayerTrace> {
        let dims = &self.weights.dims;
        let (want_h, want_w) = self.descriptor.frame_px();
        let f0 = &batch.frames()[0];
        if f0.height != want_h || f0.width != want_w {
            return Err(CoreError::BadInput {
                message: format!(
                    "frame size {}x{} does not match the {}x{} patch grid of {}x{} patches",
                    f0.height, f0.width, dims.grid_rows, dims.grid_cols, dims.patch_px_h,
                    dims.patch_px_w
                ),
            });
        }
        if dims.native_frame_count > 1 && batch.len() != dims.native_frame_count {
            return Err(CoreError::BadInput {
                message: format!(
                    "video backbone expects exactly {} frames, got {}",
                    dims.native_frame_count,
                    batch.len()
                ),
            });
        }

        let mut layer_outputs = Vec::with_capacity(dims.layer_count + 1);
        let mut pre_residual = Vec::with_capacity(dims.layer_count);
        let mut cls_residuals = Vec::with_capacity(dims.layer_count);
        let mut projections = Vec::with_capacity(dims.layer_count);

        let mut x = self.embed(batch);
        layer_outputs.push(x.clone());
        for lw in &self.weights.layers {
            let a = layer_norm_rows(&x, &lw.ln1_gain, &lw.ln1_bias, LN_EPS);
            let heads = multi_head_attention(&a, &lw.w_q, &lw.w_k, &lw.w_v, dims.head_count);
            let attn_out = heads.matmul(&lw.w_o);
            let x1 = x.add(&attn_out);
            let m = layer_norm_rows(&x1, &lw.ln2_gain, &lw.ln2_bias, LN_EPS);
            let mlp = relu(&m.matmul(&lw.w_mlp1)).matmul(&lw.w_mlp2);
            let x_new = x1.add(&mlp);
            let y = x_new.sub(&x);
            cls_residuals.push(y.row(0).to_vec());
            pre_residual.push(y);
            projections.push(LayerProjections {
                w_q: lw.w_q.clone(),
                w_k: lw.w_k.clone(),
                w_v: lw.w_v.clone(),
                w_o: lw.w_o.clone(),
            });
            layer_outputs.push(x_new.clone());
            x = x_new;
        }

        Ok(LayerTrace {
            layer_outputs,
            pre_residual,
            cls_residuals,
            projections,
            final_projection: FinalProjection {
                ln_gain: self.weights.lnf_gain.clone(),
                ln_bias: self.weights.lnf_bias.clone(),
                w_vis: self.weights.w_vis.clone(),
            },
            tokens_per_frame: dims.tokens_per_frame(),
            frame_count: batch.len(),
            target_frame: batch.target_index(),
        })
    }

    fn encode_text(&self, prompt: &str) -> Result<TextEmbedding> {
        if prompt.is_empty() {
            return Err(CoreError::BadInput {
                message: "empty prompt".to_string(),
            });
        }
        let mut counts = vec![0.0f64; TEXT_BUCKETS];
        for b in prompt.bytes() {
            counts[b as usize] += 1.0;
        }
        let d = self.weights.dims.embed_dim;
        let mut vector = vec![0.0f64; d];
        for (bucket, count) in counts.iter().enumerate() {
            if *count == 0.0 {
                continue;
            }
            for (j, v) in vector.iter_mut().enumerate() {
                *v += count * self.weights.w_text.get(bucket, j);
            }
        }
        Ok(TextEmbedding {
            vector,
            source_prompt: prompt.to_string(),
        })
    }
}
