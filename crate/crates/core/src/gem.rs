//! Parallel self-self attention pathway.
//!
//! Instead of query-key attention, each projection attends to itself:
//! tokens are projected, L2-normalized per head, optionally sharpened by J
//! softmax iterations, and the resulting attention is applied to the value
//! projection. Query-query, key-key, and value-value branches are averaged,
//! then mapped through the backbone's attention output projection. The block
//! MLP is never applied on this pathway.

use crate::backbone::{LayerProjections, LayerTrace};
use crate::error::{CoreError, Result};
use crate::mat::Mat;

/// Epsilon added to row norms before dividing, so zero-weight fixtures stay
/// finite.
pub const NORM_EPS: f64 = 1e-8;

/// Attention temperature in the divisor convention `softmax(scores / tau)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    /// `sqrt(head_dim)`, the standard attention scaling.
    Auto,
    Fixed(f64),
}

/// Self-self attention settings plus the head layout they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSelfConfig {
    /// Number of sharpening iterations J; 0 means plain normalized projection.
    pub iterations: usize,
    pub temperature: Temperature,
    pub head_count: usize,
    pub head_dim: usize,
}

impl SelfSelfConfig {
    pub fn new(iterations: usize, temperature: Temperature, head_count: usize, head_dim: usize) -> Result<Self> {
        if let Temperature::Fixed(t) = temperature {
            if !t.is_finite() || t <= 0.0 {
                return Err(CoreError::InvalidConfig {
                    field: "attention_temperature".to_string(),
                    message: format!("must be positive and finite, got {t}"),
                });
            }
        }
        if head_count == 0 || head_dim == 0 {
            return Err(CoreError::InvalidConfig {
                field: "heads".to_string(),
                message: "head layout must be positive".to_string(),
            });
        }
        Ok(SelfSelfConfig {
            iterations,
            temperature,
            head_count,
            head_dim,
        })
    }

    pub fn tau(&self) -> f64 {
        match self.temperature {
            Temperature::Auto => (self.head_dim as f64).sqrt(),
            Temperature::Fixed(t) => t,
        }
    }

    fn proj_cols(&self) -> usize {
        self.head_count * self.head_dim
    }
}

/// The pathway outputs for one accumulation run over the last K layers.
#[derive(Debug, Clone)]
pub struct PathwayState {
    /// Index of the self-attention input layer, L - K.
    pub base_index: usize,
    /// Z^{L-K+1} .. Z^L: per-layer pathway outputs before the residual add.
    pub z_layers: Vec<Mat>,
    /// X^{L-K} + sum of all Z^l.
    pub output: Mat,
}

impl PathwayState {
    /// Number of pathway layers K.
    pub fn span(&self) -> usize {
        self.z_layers.len()
    }
}

fn check_tokens(tokens: &Mat, w_proj: &Mat, cfg: &SelfSelfConfig) -> Result<()> {
    if tokens.data().iter().any(|v| !v.is_finite()) {
        return Err(CoreError::BadInput {
            message: "tokens contain non-finite values".to_string(),
        });
    }
    if w_proj.rows() != tokens.cols() || w_proj.cols() != cfg.proj_cols() {
        return Err(CoreError::ShapeMismatch {
            context: "self-self projection",
            expected: format!("{} x {}", tokens.cols(), cfg.proj_cols()),
            got: format!("{} x {}", w_proj.rows(), w_proj.cols()),
        });
    }
    Ok(())
}

/// Iterate one already-projected head block: normalize, then J rounds of
/// self-attention plus re-normalization.
fn iterate_head(projected: &Mat, iterations: usize, tau: f64) -> Mat {
    let mut p = projected.l2_normalize_rows(NORM_EPS);
    for _ in 0..iterations {
        let attn = p.matmul_bt(&p).softmax_rows(tau);
        p = attn.matmul(&p).l2_normalize_rows(NORM_EPS);
    }
    p
}

/// P^(J): per-head normalized self-self iteration of `tokens * w_proj`,
/// heads concatenated.
pub fn self_self_iterate(tokens: &Mat, w_proj: &Mat, cfg: &SelfSelfConfig) -> Result<Mat> {
    check_tokens(tokens, w_proj, cfg)?;
    let projected = tokens.matmul(w_proj);
    let mut out = Mat::zeros(tokens.rows(), cfg.proj_cols());
    for h in 0..cfg.head_count {
        let block = projected.col_block(h * cfg.head_dim, cfg.head_dim);
        out.set_col_block(h * cfg.head_dim, &iterate_head(&block, cfg.iterations, cfg.tau()));
    }
    Ok(out)
}

/// One self-self branch: attention from P^(J) of `w_proj`, applied to the
/// value projection, heads concatenated. No output projection yet.
fn branch_output(tokens: &Mat, w_proj: &Mat, values: &Mat, cfg: &SelfSelfConfig) -> Result<Mat> {
    check_tokens(tokens, w_proj, cfg)?;
    let projected = tokens.matmul(w_proj);
    let mut out = Mat::zeros(tokens.rows(), cfg.proj_cols());
    for h in 0..cfg.head_count {
        let block = projected.col_block(h * cfg.head_dim, cfg.head_dim);
        let p = iterate_head(&block, cfg.iterations, cfg.tau());
        let attn = p.matmul_bt(&p).softmax_rows(cfg.tau());
        let vh = values.col_block(h * cfg.head_dim, cfg.head_dim);
        out.set_col_block(h * cfg.head_dim, &attn.matmul(&vh));
    }
    Ok(out)
}

/// O_qkv for one layer: average of the query-query, key-key, and value-value
/// branches, then the attention output projection.
pub fn self_self_output(tokens: &Mat, proj: &LayerProjections, cfg: &SelfSelfConfig) -> Result<Mat> {
    check_tokens(tokens, &proj.w_q, cfg)?;
    check_tokens(tokens, &proj.w_k, cfg)?;
    check_tokens(tokens, &proj.w_v, cfg)?;
    if proj.w_o.rows() != cfg.proj_cols() {
        return Err(CoreError::ShapeMismatch {
            context: "attention output projection",
            expected: format!("{} rows", cfg.proj_cols()),
            got: format!("{} rows", proj.w_o.rows()),
        });
    }
    let values = tokens.matmul(&proj.w_v);
    let o_qq = branch_output(tokens, &proj.w_q, &values, cfg)?;
    let o_kk = branch_output(tokens, &proj.w_k, &values, cfg)?;
    let o_vv = branch_output(tokens, &proj.w_v, &values, cfg)?;
    let avg = o_qq.add(&o_kk).add(&o_vv).scale(1.0 / 3.0);
    Ok(avg.matmul(&proj.w_o))
}

/// Run the pathway over the last `span` layers of a trace.
///
/// The first pathway layer consumes X^{L-K}; every later layer consumes the
/// accumulated pathway state. The output is X^{L-K} plus all Z^l. A span of
/// zero returns X^L unchanged.
pub fn gem_accumulate(trace: &LayerTrace, span: usize, cfg: &SelfSelfConfig) -> Result<PathwayState> {
    let depth = trace.depth();
    if span > depth {
        return Err(CoreError::InvalidConfig {
            field: "layers_k".to_string(),
            message: format!("pathway span {span} exceeds backbone depth {depth}"),
        });
    }
    let base_index = depth - span;
    let mut state = trace.layer_outputs[base_index].clone();
    let mut z_layers = Vec::with_capacity(span);
    for l in base_index + 1..=depth {
        let z = self_self_output(&state, &trace.projections[l - 1], cfg)?;
        state.add_assign(&z);
        z_layers.push(z);
    }
    Ok(PathwayState {
        base_index,
        z_layers,
        output: state,
    })
}
