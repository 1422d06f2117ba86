//! End-to-end grounding of one labeled sample.
//!
//! One visual forward pass feeds all three decomposed prompts; the pathway
//! accumulation is shared, while effective layer weights are recomputed per
//! prompt (dynamic weights depend on the prompt embedding). Per-prompt
//! heatmaps and centers are fused according to the merge policy.

use std::path::Path;

use crate::backbone::{Backbone, FrameBatch, FrameMode, LayerTrace};
use crate::error::{CoreError, Result};
use crate::gem::{gem_accumulate, SelfSelfConfig, Temperature};
use crate::grounding::{
    heatmap_for_target_frame, patch_text_similarity, predict_center, sample_frames, Heatmap,
    PixelPoint,
};
use crate::prompt::{
    combine_centers, merge_heatmaps, FusedCenter, FusionWeights, LabelStyle, MergePolicy,
    MergeStrategy, PartExtractor, PromptBundle, PromptKind,
};
use crate::weighting::{effective_weights, weighted_sum, WeightConfig};

/// Everything the pipeline needs besides the backbone and extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub iterations: usize,
    pub temperature: Temperature,
    pub weighting: WeightConfig,
    pub fusion: FusionWeights,
    pub merge: MergePolicy,
    pub frames_t: usize,
    pub frame_mode: FrameMode,
    pub label_style: LabelStyle,
    /// Force one pathway summand's weight to zero (layer-removal ablation).
    /// Index 0 is the self-attention input X^{L-K}, index K the final layer.
    pub removed_summand: Option<usize>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.weighting.validate()?;
        self.merge.validate()?;
        if self.frames_t == 0 {
            return Err(CoreError::InvalidConfig {
                field: "frames_t".to_string(),
                message: "frame count must be positive".to_string(),
            });
        }
        if let Some(i) = self.removed_summand {
            if i > self.weighting.span {
                return Err(CoreError::InvalidConfig {
                    field: "removed_summand".to_string(),
                    message: format!("index {i} outside 0..={}", self.weighting.span),
                });
            }
        }
        Ok(())
    }

    /// Variant with the pathway restricted to the deepest `k` layers: keeps
    /// the tail of the static weight vector and clips the dynamic span.
    pub fn depth_variant(&self, k: usize) -> Result<PipelineConfig> {
        if k > self.weighting.span {
            return Err(CoreError::InvalidConfig {
                field: "range".to_string(),
                message: format!("depth {k} exceeds configured span {}", self.weighting.span),
            });
        }
        let mut out = self.clone();
        let skip = self.weighting.span - k;
        out.weighting.span = k;
        out.weighting.static_weights = self.weighting.static_weights[skip..].to_vec();
        out.weighting.dynamic_span = self.weighting.dynamic_span.min(k);
        Ok(out)
    }

    /// Variant with one summand removed, indexed from the top: 1 is the
    /// final pathway layer, span+1 the self-attention input.
    pub fn removal_variant(&self, index_from_top: usize) -> Result<PipelineConfig> {
        let k = self.weighting.span;
        if index_from_top == 0 || index_from_top > k + 1 {
            return Err(CoreError::InvalidConfig {
                field: "range".to_string(),
                message: format!("removal index {index_from_top} outside 1..={}", k + 1),
            });
        }
        let mut out = self.clone();
        out.removed_summand = Some(k + 1 - index_from_top);
        Ok(out)
    }
}

/// Result of grounding one prompt.
#[derive(Debug, Clone)]
pub struct PromptResult {
    pub kind: PromptKind,
    pub prompt: String,
    pub center: PixelPoint,
    pub heatmap: Heatmap,
}

/// Full result of grounding one labeled sample.
#[derive(Debug, Clone)]
pub struct GroundOutcome {
    pub bundle: PromptBundle,
    /// Verb, object, action, in that order.
    pub per_prompt: [PromptResult; 3],
    pub fused: FusedCenter,
    /// Present when the merge strategy combines heatmaps.
    pub merged_heatmap: Option<Heatmap>,
}

/// A backbone plus configuration, ready to ground samples.
pub struct Pipeline<'a> {
    backbone: &'a dyn Backbone,
    extractor: &'a dyn PartExtractor,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backbone: &'a dyn Backbone,
        extractor: &'a dyn PartExtractor,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            backbone,
            extractor,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone
    }

    pub fn with_config(&self, config: PipelineConfig) -> Result<Pipeline<'a>> {
        Pipeline::new(self.backbone, self.extractor, config)
    }

    /// Sample frames from media and ground the label.
    pub fn ground_media(
        &self,
        media: &Path,
        labeled_index: usize,
        label: &str,
    ) -> Result<GroundOutcome> {
        let batch = sample_frames(
            media,
            labeled_index,
            self.config.frames_t,
            self.config.frame_mode,
        )?;
        self.ground_batch(&batch, label)
    }

    /// Ground a label against an already-sampled batch.
    pub fn ground_batch(&self, batch: &FrameBatch, label: &str) -> Result<GroundOutcome> {
        let descriptor = self.backbone.descriptor();
        let trace = self.backbone.forward_with_trace(batch)?;
        let visual_joint = trace.final_projection.apply_row(trace.cls_final());
        let bundle = PromptBundle::build(
            label,
            self.config.label_style,
            self.extractor,
            self.backbone,
            Some(&visual_joint),
            self.config.fusion,
        )?;
        let self_self = SelfSelfConfig::new(
            self.config.iterations,
            self.config.temperature,
            descriptor.head_count,
            descriptor.head_dim,
        )?;
        let pathway = gem_accumulate(&trace, self.config.weighting.span, &self_self)?;

        let mut results = Vec::with_capacity(3);
        for kind in [PromptKind::Verb, PromptKind::Object, PromptKind::Action] {
            let prompt = bundle.prompt(kind).to_string();
            let embedding = self.backbone.encode_text(&prompt)?;
            let mut weights =
                effective_weights(&trace, &pathway, &self.config.weighting, Some(&embedding))?;
            if let Some(i) = self.config.removed_summand {
                weights[i] = 0.0;
            }
            let tokens = weighted_sum(&trace, &pathway, &weights)?;
            let field = patch_text_similarity(&tokens, &embedding, &trace)?;
            let heatmap = heatmap_for_target_frame(&field, batch, descriptor)?;
            let center = predict_center(&heatmap);
            results.push(PromptResult {
                kind,
                prompt,
                center,
                heatmap,
            });
        }
        let per_prompt: [PromptResult; 3] = results.try_into().expect("three prompts");

        let (fused, merged_heatmap) = match self.config.merge.strategy {
            MergeStrategy::CenterAverage => (
                combine_centers(
                    per_prompt[0].center,
                    per_prompt[1].center,
                    per_prompt[2].center,
                    &self.config.fusion,
                ),
                None,
            ),
            MergeStrategy::HeatmapAverage | MergeStrategy::HeatmapMultiply => {
                let merged = merge_heatmaps(
                    &per_prompt[0].heatmap,
                    &per_prompt[1].heatmap,
                    &per_prompt[2].heatmap,
                    &self.config.merge,
                )?;
                let pixel = predict_center(&merged);
                (
                    FusedCenter {
                        raw_x: pixel.x as f64,
                        raw_y: pixel.y as f64,
                        pixel,
                    },
                    Some(merged),
                )
            }
        };

        Ok(GroundOutcome {
            bundle,
            per_prompt,
            fused,
            merged_heatmap,
        })
    }

    /// The trace for a batch, exposed for diagnostics.
    pub fn trace(&self, batch: &FrameBatch) -> Result<LayerTrace> {
        self.backbone.forward_with_trace(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{ToyBackbone, ToyDims};
    use crate::prompt::RuleBasedExtractor;
    use crate::testkit::synth_batch;
    use crate::weighting::WeightMode;

    fn test_config(span: usize) -> PipelineConfig {
        PipelineConfig {
            iterations: 1,
            temperature: Temperature::Auto,
            weighting: WeightConfig {
                span,
                dynamic_span: 2.min(span),
                dynamic_temperature: 20.0,
                static_weights: vec![0.5; span + 1],
                mode: WeightMode::Combined,
            },
            fusion: FusionWeights::new(0.2, 0.2, 0.6).unwrap(),
            merge: MergePolicy {
                strategy: MergeStrategy::CenterAverage,
                ratio: [1.0, 1.0, 3.0],
            },
            frames_t: 2,
            frame_mode: FrameMode::Video,
            label_style: LabelStyle::Underscore,
            removed_summand: None,
        }
    }

    #[test]
    fn grounding_is_deterministic() {
        let bb = ToyBackbone::generate(77, ToyDims::small()).unwrap();
        let ex = RuleBasedExtractor;
        let pipeline = Pipeline::new(&bb, &ex, test_config(3)).unwrap();
        let batch = synth_batch(8, 8, 2, FrameMode::Video);
        let a = pipeline.ground_batch(&batch, "cutting_onion").unwrap();
        let b = pipeline.ground_batch(&batch, "cutting_onion").unwrap();
        assert_eq!(a.fused.pixel, b.fused.pixel);
        for (x, y) in a.per_prompt.iter().zip(&b.per_prompt) {
            assert_eq!(x.center, y.center);
            assert!(x.heatmap.grid().max_abs_diff(y.heatmap.grid()) == 0.0);
        }
    }

    #[test]
    fn fused_center_is_weighted_mean_of_prompt_centers() {
        let bb = ToyBackbone::generate(78, ToyDims::small()).unwrap();
        let ex = RuleBasedExtractor;
        let pipeline = Pipeline::new(&bb, &ex, test_config(3)).unwrap();
        let batch = synth_batch(8, 8, 2, FrameMode::Video);
        let out = pipeline.ground_batch(&batch, "cutting_onion").unwrap();
        let w = pipeline.config().fusion;
        let want_x = w.verb * out.per_prompt[0].center.x as f64
            + w.object * out.per_prompt[1].center.x as f64
            + w.action * out.per_prompt[2].center.x as f64;
        assert!((out.fused.raw_x - want_x).abs() < 1e-12);
    }

    #[test]
    fn depth_variant_slices_static_tail() {
        let mut config = test_config(3);
        config.weighting.static_weights = vec![0.1, 0.2, 0.3, 0.4];
        let v = config.depth_variant(2).unwrap();
        assert_eq!(v.weighting.span, 2);
        assert_eq!(v.weighting.static_weights, vec![0.2, 0.3, 0.4]);
        assert_eq!(v.weighting.dynamic_span, 2);
        let v0 = config.depth_variant(0).unwrap();
        assert_eq!(v0.weighting.static_weights, vec![0.4]);
        assert_eq!(v0.weighting.dynamic_span, 0);
        assert!(config.depth_variant(4).is_err());
    }

    #[test]
    fn removal_variant_maps_top_down_indices() {
        let config = test_config(3);
        assert_eq!(config.removal_variant(1).unwrap().removed_summand, Some(3));
        assert_eq!(config.removal_variant(4).unwrap().removed_summand, Some(0));
        assert!(config.removal_variant(0).is_err());
        assert!(config.removal_variant(5).is_err());
    }

    #[test]
    fn removing_a_layer_changes_the_effective_weights_only() {
        let bb = ToyBackbone::generate(79, ToyDims::small()).unwrap();
        let ex = RuleBasedExtractor;
        let base = test_config(3);
        let batch = synth_batch(8, 8, 2, FrameMode::Video);
        // zero static weight on the final layer == removal index 1
        let mut zeroed = base.clone();
        zeroed.weighting.static_weights[3] = 0.0;
        let removed = base.removal_variant(1).unwrap();
        let mut removed_cfg = removed.clone();
        removed_cfg.weighting.static_weights = base.weighting.static_weights.clone();

        // static mode so dynamic weights cannot re-normalize around the zero
        let mut a_cfg = zeroed;
        a_cfg.weighting.mode = WeightMode::Static;
        let mut b_cfg = removed_cfg;
        b_cfg.weighting.mode = WeightMode::Static;

        let a = Pipeline::new(&bb, &ex, a_cfg)
            .unwrap()
            .ground_batch(&batch, "cutting_onion")
            .unwrap();
        let b = Pipeline::new(&bb, &ex, b_cfg)
            .unwrap()
            .ground_batch(&batch, "cutting_onion")
            .unwrap();
        assert_eq!(a.fused.pixel, b.fused.pixel);
        for (x, y) in a.per_prompt.iter().zip(&b.per_prompt) {
            assert!(x.heatmap.grid().max_abs_diff(y.heatmap.grid()) < 1e-12);
        }
    }
}
