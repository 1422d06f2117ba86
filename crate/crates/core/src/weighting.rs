//! Static, dynamic, and combined weighting of the pathway layers.
//!
//! Static weights fix per-layer importance, rising toward deeper layers.
//! Dynamic weights are recomputed per prompt: a layer whose CLS residual can
//! be removed without hurting text alignment gets more weight, one whose
//! removal leaves alignment high gets less. Combined weighting subtracts 1/D
//! from the static weights on the dynamic layers so the overall weight mass
//! stays put.

use crate::backbone::{LayerTrace, TextEmbedding};
use crate::error::{CoreError, Result};
use crate::gem::PathwayState;
use crate::mat::{dot, l2_norm, Mat};

/// The four weighting settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    None,
    Static,
    Dynamic,
    Combined,
}

impl WeightMode {
    pub fn parse(s: &str) -> Option<WeightMode> {
        match s {
            "none" => Some(WeightMode::None),
            "static" => Some(WeightMode::Static),
            "dynamic" => Some(WeightMode::Dynamic),
            "combined" => Some(WeightMode::Combined),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            WeightMode::None => "none",
            WeightMode::Static => "static",
            WeightMode::Dynamic => "dynamic",
            WeightMode::Combined => "combined",
        }
    }
}

/// Weighting configuration for a pathway of span K.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    /// Pathway span K.
    pub span: usize,
    /// Dynamic span D <= K; 0 disables dynamic weighting.
    pub dynamic_span: usize,
    /// Softmax temperature for dynamic weights.
    pub dynamic_temperature: f64,
    /// Static weights, length K+1; index 0 weighs the self-attention input
    /// X^{L-K}, index i weighs Z^{L-K+i}.
    pub static_weights: Vec<f64>,
    pub mode: WeightMode,
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.static_weights.len() != self.span + 1 {
            return Err(CoreError::InvalidConfig {
                field: "static_weights".to_string(),
                message: format!(
                    "need {} entries for span {}, got {}",
                    self.span + 1,
                    self.span,
                    self.static_weights.len()
                ),
            });
        }
        if self.dynamic_span > self.span {
            return Err(CoreError::InvalidConfig {
                field: "dynamic_layers_d".to_string(),
                message: format!(
                    "dynamic span {} exceeds pathway span {}",
                    self.dynamic_span, self.span
                ),
            });
        }
        if !self.dynamic_temperature.is_finite() || self.dynamic_temperature <= 0.0 {
            return Err(CoreError::InvalidConfig {
                field: "dynamic_temperature".to_string(),
                message: format!("must be positive and finite, got {}", self.dynamic_temperature),
            });
        }
        Ok(())
    }
}

/// Per-prompt dynamic weights over the last D layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicWeights {
    /// s^{L-D+1} .. s^L.
    pub similarities: Vec<f64>,
    /// softmax(-s * tau_d); sums to 1.
    pub weights: Vec<f64>,
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Weighted sum of the pathway summands: `weights[0] * X^{L-K} + sum_i
/// weights[i] * Z^{L-K+i}`.
pub fn weighted_sum(trace: &LayerTrace, pathway: &PathwayState, weights: &[f64]) -> Result<Mat> {
    if weights.len() != pathway.span() + 1 {
        return Err(CoreError::ShapeMismatch {
            context: "pathway weights",
            expected: format!("{} entries", pathway.span() + 1),
            got: format!("{} entries", weights.len()),
        });
    }
    let base = &trace.layer_outputs[pathway.base_index];
    let mut out = base.scale(weights[0]);
    for (i, z) in pathway.z_layers.iter().enumerate() {
        out.add_assign(&z.scale(weights[i + 1]));
    }
    Ok(out)
}

/// O_stat: the statically weighted pathway output.
pub fn static_weighted_output(
    trace: &LayerTrace,
    pathway: &PathwayState,
    static_weights: &[f64],
) -> Result<Mat> {
    weighted_sum(trace, pathway, static_weights)
}

/// s^l for the last D layers: cosine between the CLS representation with
/// layer l's residual removed and the prompt embedding. CLS residuals come
/// from the original self-attention pathway of the trace.
pub fn layer_similarities(trace: &LayerTrace, e_eos: &TextEmbedding, d: usize) -> Result<Vec<f64>> {
    if d == 0 || d > trace.depth() {
        return Err(CoreError::InvalidConfig {
            field: "dynamic_layers_d".to_string(),
            message: format!("need 1..={} dynamic layers, got {d}", trace.depth()),
        });
    }
    let x_cls = trace.cls_final();
    if e_eos.vector.len() != x_cls.len() {
        return Err(CoreError::ShapeMismatch {
            context: "layer similarities",
            expected: format!("text embedding of length {}", x_cls.len()),
            got: format!("{}", e_eos.vector.len()),
        });
    }
    let depth = trace.depth();
    let mut sims = Vec::with_capacity(d);
    for l in depth - d + 1..=depth {
        let y_cls = &trace.cls_residuals[l - 1];
        let removed: Vec<f64> = x_cls.iter().zip(y_cls).map(|(x, y)| x - y).collect();
        sims.push(cosine_or_zero(&removed, &e_eos.vector));
    }
    Ok(sims)
}

/// w_d = softmax(-s * tau_d): layers whose removal leaves alignment high get
/// low weight.
pub fn dynamic_weights(similarities: &[f64], tau_d: f64) -> DynamicWeights {
    let mut max = f64::NEG_INFINITY;
    for s in similarities {
        let logit = -s * tau_d;
        if logit > max {
            max = logit;
        }
    }
    let mut weights: Vec<f64> = similarities
        .iter()
        .map(|s| (-s * tau_d - max).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    DynamicWeights {
        similarities: similarities.to_vec(),
        weights,
    }
}

/// Effective per-summand weights for a mode, length K+1.
///
/// none: all ones. static: w_s. dynamic: ones outside the last D layers, w_d
/// inside. combined: w_s outside, w_s - 1/D + w_d inside.
pub fn effective_weights(
    trace: &LayerTrace,
    pathway: &PathwayState,
    cfg: &WeightConfig,
    e_eos: Option<&TextEmbedding>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if cfg.span != pathway.span() {
        return Err(CoreError::InvalidConfig {
            field: "layers_k".to_string(),
            message: format!(
                "weight config span {} does not match pathway span {}",
                cfg.span,
                pathway.span()
            ),
        });
    }
    let k = cfg.span;
    let mut weights = match cfg.mode {
        WeightMode::None | WeightMode::Dynamic => vec![1.0; k + 1],
        WeightMode::Static | WeightMode::Combined => cfg.static_weights.clone(),
    };
    let needs_text = matches!(cfg.mode, WeightMode::Dynamic | WeightMode::Combined);
    if needs_text && e_eos.is_none() {
        return Err(CoreError::InvalidConfig {
            field: "prompt".to_string(),
            message: "dynamic and combined weighting require a text embedding".to_string(),
        });
    }
    if needs_text && cfg.dynamic_span > 0 {
        let d = cfg.dynamic_span;
        let sims = layer_similarities(trace, e_eos.unwrap(), d)?;
        let dynamic = dynamic_weights(&sims, cfg.dynamic_temperature);
        for (i, w_d) in dynamic.weights.iter().enumerate() {
            let at = k + 1 - d + i;
            weights[at] = match cfg.mode {
                WeightMode::Dynamic => *w_d,
                WeightMode::Combined => cfg.static_weights[at] - 1.0 / d as f64 + w_d,
                _ => unreachable!(),
            };
        }
    }
    Ok(weights)
}

/// The mode-dispatched weighted pathway output.
pub fn combined_output(
    trace: &LayerTrace,
    pathway: &PathwayState,
    cfg: &WeightConfig,
    e_eos: Option<&TextEmbedding>,
) -> Result<Mat> {
    let weights = effective_weights(trace, pathway, cfg, e_eos)?;
    weighted_sum(trace, pathway, &weights)
}
