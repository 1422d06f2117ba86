//! Prompt decomposition for action labels.
//!
//! An action label splits into a verb, an object, and the full action; each
//! gets its own templated prompt, its own heatmap, and its own center
//! prediction. Centers fuse by weighted mean (the default), or heatmaps
//! merge pixelwise before a single argmax.

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{CoreError, Result};
use crate::grounding::{Heatmap, PixelPoint};
use crate::mat::Mat;
use crate::weighting::cosine_or_zero;

/// Which decomposed prompt produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Verb,
    Object,
    Action,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Verb => "verb",
            PromptKind::Object => "object",
            PromptKind::Action => "action",
        }
    }
}

/// How an action label encodes its parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelStyle {
    /// `verb_object` labels; split on the first underscore.
    Underscore,
    /// Free-form sentences; candidates come from an extractor and are ranked
    /// by visual similarity.
    Natural,
}

impl LabelStyle {
    pub fn parse(s: &str) -> Option<LabelStyle> {
        match s {
            "underscore" => Some(LabelStyle::Underscore),
            "natural" => Some(LabelStyle::Natural),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LabelStyle::Underscore => "underscore",
            LabelStyle::Natural => "natural",
        }
    }
}

/// Candidate verb/object extraction for natural-language labels. Pluggable
/// so an external NLP tagger can replace the rule-based fallback.
pub trait PartExtractor: Send + Sync {
    fn verbs(&self, label: &str) -> Vec<String>;
    fn objects(&self, label: &str) -> Vec<String>;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "on", "in", "at", "of", "to", "with",
    "for", "from", "into", "onto", "and", "or", "is", "are", "be", "being", "been", "it", "its",
    "some", "something", "someone", "person", "up", "down", "out", "over", "under", "by",
];

const KNOWN_VERBS: &[&str] = &[
    "spread", "cut", "chop", "slice", "pour", "mix", "stir", "add", "place", "put", "flip",
    "wash", "peel", "grab", "hold", "open", "close", "throw", "catch", "pull", "push", "wave",
    "jump", "drink", "eat", "squeeze", "season", "arrange", "unpack", "snap", "wipe", "spray",
];

/// Deterministic rule-based extractor: "-ing" suffixes and a small closed
/// verb list mark verbs; remaining non-stopwords are object candidates.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedExtractor;

fn tokenize(label: &str) -> Vec<String> {
    label
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

fn push_unique(list: &mut Vec<String>, word: &str) {
    if !list.iter().any(|w| w == word) {
        list.push(word.to_string());
    }
}

impl PartExtractor for RuleBasedExtractor {
    fn verbs(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        for token in tokenize(label) {
            if STOPWORDS.contains(&token.as_str()) {
                continue;
            }
            if (token.len() > 4 && token.ends_with("ing")) || KNOWN_VERBS.contains(&token.as_str())
            {
                push_unique(&mut out, &token);
            }
        }
        out
    }

    fn objects(&self, label: &str) -> Vec<String> {
        let verbs = self.verbs(label);
        let mut out = Vec::new();
        for token in tokenize(label) {
            if STOPWORDS.contains(&token.as_str()) || verbs.contains(&token) {
                continue;
            }
            push_unique(&mut out, &token);
        }
        out
    }
}

/// Render the three prompts. Missing components fall back to the generic
/// person templates.
pub fn render_prompts(
    verb: Option<&str>,
    object: Option<&str>,
    action: &str,
) -> (String, String, String) {
    let verb_prompt = match verb {
        Some(v) => format!("A photo of a person {v} something."),
        None => "A photo of a person doing something.".to_string(),
    };
    let object_prompt = match object {
        Some(o) => format!("A photo of a person using {o}."),
        None => "A photo of a person.".to_string(),
    };
    let action_prompt = format!("A photo of a person {action}.");
    (verb_prompt, object_prompt, action_prompt)
}

fn best_candidate(
    candidates: &[String],
    render: impl Fn(&str) -> String,
    backbone: &dyn Backbone,
    visual_joint: &[f64],
) -> Result<Option<String>> {
    let mut best: Option<(f64, &String)> = None;
    for cand in candidates {
        let embedding = backbone.encode_text(&render(cand))?;
        let sim = cosine_or_zero(&embedding.vector, visual_joint);
        // strict > keeps the earliest candidate on ties
        if best.map(|(s, _)| sim > s).unwrap_or(true) {
            best = Some((sim, cand));
        }
    }
    Ok(best.map(|(_, c)| c.clone()))
}

/// Extract the verb and object of a label.
///
/// Underscore style splits on the first underscore; a label without one is
/// all verb. Natural style ranks every extractor candidate by cosine between
/// its rendered prompt embedding and the visual joint embedding of the
/// input, keeping the best of each kind.
pub fn decompose_label(
    label: &str,
    style: LabelStyle,
    extractor: &dyn PartExtractor,
    backbone: &dyn Backbone,
    visual_joint: Option<&[f64]>,
) -> Result<(Option<String>, Option<String>)> {
    if label.is_empty() {
        return Err(CoreError::BadInput {
            message: "empty action label".to_string(),
        });
    }
    match style {
        LabelStyle::Underscore => match label.split_once('_') {
            Some((verb, object)) => {
                let verb = (!verb.is_empty()).then(|| verb.to_string());
                let object = (!object.is_empty()).then(|| object.to_string());
                Ok((verb, object))
            }
            None => Ok((Some(label.to_string()), None)),
        },
        LabelStyle::Natural => {
            let visual = visual_joint.ok_or_else(|| CoreError::BadInput {
                message: "natural-style decomposition needs a visual embedding".to_string(),
            })?;
            let verb = best_candidate(
                &extractor.verbs(label),
                |v| render_prompts(Some(v), None, label).0,
                backbone,
                visual,
            )?;
            let object = best_candidate(
                &extractor.objects(label),
                |o| render_prompts(None, Some(o), label).1,
                backbone,
                visual,
            )?;
            Ok((verb, object))
        }
    }
}

/// Nonnegative fusion weights summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub verb: f64,
    pub object: f64,
    pub action: f64,
}

impl FusionWeights {
    pub fn new(verb: f64, object: f64, action: f64) -> Result<Self> {
        if verb < 0.0 || object < 0.0 || action < 0.0 {
            return Err(CoreError::InvalidConfig {
                field: "fusion_weights".to_string(),
                message: "weights must be nonnegative".to_string(),
            });
        }
        let sum = verb + object + action;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidConfig {
                field: "fusion_weights".to_string(),
                message: format!("weights must sum to 1, got {sum}"),
            });
        }
        Ok(FusionWeights {
            verb,
            object,
            action,
        })
    }
}

/// The three prompt strings for one label plus their fusion weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub verb: Option<String>,
    pub object: Option<String>,
    pub action: String,
    pub verb_prompt: String,
    pub object_prompt: String,
    pub action_prompt: String,
    pub fusion: FusionWeights,
}

impl PromptBundle {
    pub fn build(
        label: &str,
        style: LabelStyle,
        extractor: &dyn PartExtractor,
        backbone: &dyn Backbone,
        visual_joint: Option<&[f64]>,
        fusion: FusionWeights,
    ) -> Result<PromptBundle> {
        let (verb, object) = decompose_label(label, style, extractor, backbone, visual_joint)?;
        let action = match style {
            // verb_object labels read as "verb object" prompts
            LabelStyle::Underscore => label.replace('_', " "),
            LabelStyle::Natural => label.to_string(),
        };
        let (verb_prompt, object_prompt, action_prompt) =
            render_prompts(verb.as_deref(), object.as_deref(), &action);
        Ok(PromptBundle {
            verb,
            object,
            action,
            verb_prompt,
            object_prompt,
            action_prompt,
            fusion,
        })
    }

    pub fn prompt(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Verb => &self.verb_prompt,
            PromptKind::Object => &self.object_prompt,
            PromptKind::Action => &self.action_prompt,
        }
    }
}

/// A fused center: the raw weighted mean and its nearest pixel (ties round
/// toward the lower index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedCenter {
    pub raw_x: f64,
    pub raw_y: f64,
    pub pixel: PixelPoint,
}

fn round_half_down(v: f64) -> usize {
    (v - 0.5).ceil().max(0.0) as usize
}

/// Weighted mean of the three per-prompt centers.
pub fn combine_centers(
    c_verb: PixelPoint,
    c_obj: PixelPoint,
    c_act: PixelPoint,
    weights: &FusionWeights,
) -> FusedCenter {
    let raw_x =
        weights.verb * c_verb.x as f64 + weights.object * c_obj.x as f64 + weights.action * c_act.x as f64;
    let raw_y =
        weights.verb * c_verb.y as f64 + weights.object * c_obj.y as f64 + weights.action * c_act.y as f64;
    FusedCenter {
        raw_x,
        raw_y,
        pixel: PixelPoint {
            x: round_half_down(raw_x),
            y: round_half_down(raw_y),
        },
    }
}

/// Pixelwise merging strategies for the three heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeStrategy {
    /// Fuse the per-prompt argmax centers by weighted mean.
    CenterAverage,
    /// Weighted geometric combination of the maps, then one argmax.
    HeatmapMultiply,
    /// Weighted arithmetic mean of the maps, then one argmax.
    HeatmapAverage,
}

impl MergeStrategy {
    pub fn parse(s: &str) -> Option<MergeStrategy> {
        match s {
            "center_average" => Some(MergeStrategy::CenterAverage),
            "heatmap_multiply" => Some(MergeStrategy::HeatmapMultiply),
            "heatmap_average" => Some(MergeStrategy::HeatmapAverage),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MergeStrategy::CenterAverage => "center_average",
            MergeStrategy::HeatmapMultiply => "heatmap_multiply",
            MergeStrategy::HeatmapAverage => "heatmap_average",
        }
    }
}

/// Merge strategy plus the verb:object:action ratio (1:1:3 by default,
/// normalized before use).
#[derive(Debug, Clone, PartialEq)]
pub struct MergePolicy {
    pub strategy: MergeStrategy,
    pub ratio: [f64; 3],
}

impl MergePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.ratio.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(CoreError::InvalidConfig {
                field: "merge_ratio".to_string(),
                message: "ratio entries must be positive and finite".to_string(),
            });
        }
        Ok(())
    }

    fn normalized_ratio(&self) -> [f64; 3] {
        let sum: f64 = self.ratio.iter().sum();
        [
            self.ratio[0] / sum,
            self.ratio[1] / sum,
            self.ratio[2] / sum,
        ]
    }
}

/// Pixelwise merge of the verb, object, and action heatmaps; the result is
/// re-min-max normalized. Averaging takes the ratio-weighted mean;
/// multiplication raises each map to its normalized ratio before taking the
/// product.
pub fn merge_heatmaps(
    verb: &Heatmap,
    object: &Heatmap,
    action: &Heatmap,
    policy: &MergePolicy,
) -> Result<Heatmap> {
    policy.validate()?;
    let (h, w) = (verb.height(), verb.width());
    for map in [object, action] {
        if map.height() != h || map.width() != w {
            return Err(CoreError::ShapeMismatch {
                context: "heatmap merge",
                expected: format!("{h}x{w}"),
                got: format!("{}x{}", map.height(), map.width()),
            });
        }
    }
    let r = policy.normalized_ratio();
    let maps = [verb, object, action];
    let mut raw = Mat::zeros(h, w);
    match policy.strategy {
        MergeStrategy::HeatmapAverage => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (i, map) in maps.iter().enumerate() {
                        acc += r[i] * map.grid().get(y, x);
                    }
                    raw.set(y, x, acc);
                }
            }
        }
        MergeStrategy::HeatmapMultiply => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 1.0;
                    for (i, map) in maps.iter().enumerate() {
                        acc *= map.grid().get(y, x).powf(r[i]);
                    }
                    raw.set(y, x, acc);
                }
            }
        }
        MergeStrategy::CenterAverage => {
            return Err(CoreError::InvalidConfig {
                field: "merge".to_string(),
                message: "center_average fuses centers, not heatmaps".to_string(),
            });
        }
    }
    Ok(Heatmap::from_raw(raw))
}
