//! Run configuration: a flat key-value text file with defaults that
//! reproduce the reference setting.
//!
//! ```text
//! # keys and defaults
//! backbone               = toy:toy_backbone.bin
//! attention_temperature  = auto          # divisor temperature; auto = sqrt(head_dim)
//! iterations_j           = 1
//! layers_k               = 7
//! static_weights         = 0.3,0.4,0.5,0.6,0.7,0.9,0.9,0.9
//! dynamic_layers_d       = 3
//! dynamic_temperature    = 20
//! weighting              = combined      # none | static | dynamic | combined
//! label_style            = underscore    # underscore | natural
//! fusion_weights         = 0.2,0.2,0.6
//! merge                  = center_average # center_average | heatmap_average | heatmap_multiply
//! merge_ratio            = 1,1,3
//! frames_t               = 8
//! frame_mode             = video         # video | repeated_image
//! output_dir             = out
//! ```
//!
//! Lines starting with `#` and blank lines are ignored; later keys override
//! earlier ones. Relative toy fixture paths resolve against
//! `GROUNDER_FIXTURE_ROOT` when set, then the config file's directory, then
//! the working directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use grounder_core::backbone::{Backbone, FrameMode, ToyBackbone};
use grounder_core::defaults;
use grounder_core::gem::Temperature;
use grounder_core::pipeline::PipelineConfig;
use grounder_core::prompt::{FusionWeights, LabelStyle, MergePolicy, MergeStrategy};
use grounder_core::weighting::{WeightConfig, WeightMode};
use grounder_core::CoreError;

/// Environment variable overriding the fixture search root.
pub const FIXTURE_ROOT_ENV: &str = "GROUNDER_FIXTURE_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backbone: String,
    pub attention_temperature: Temperature,
    pub iterations_j: usize,
    pub layers_k: usize,
    pub static_weights: Vec<f64>,
    pub dynamic_layers_d: usize,
    pub dynamic_temperature: f64,
    pub weighting: WeightMode,
    pub label_style: LabelStyle,
    pub fusion_weights: (f64, f64, f64),
    pub merge: MergeStrategy,
    pub merge_ratio: [f64; 3],
    pub frames_t: usize,
    pub frame_mode: FrameMode,
    pub output_dir: String,
    /// Directory the config file was loaded from, for relative paths.
    pub config_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backbone: "toy:toy_backbone.bin".to_string(),
            attention_temperature: Temperature::Auto,
            iterations_j: defaults::ITERATIONS,
            layers_k: defaults::PATHWAY_SPAN,
            static_weights: defaults::STATIC_WEIGHTS.to_vec(),
            dynamic_layers_d: defaults::DYNAMIC_SPAN,
            dynamic_temperature: defaults::DYNAMIC_TEMPERATURE,
            weighting: WeightMode::Combined,
            label_style: LabelStyle::Underscore,
            fusion_weights: (
                defaults::FUSION_VERB,
                defaults::FUSION_OBJECT,
                defaults::FUSION_ACTION,
            ),
            merge: MergeStrategy::CenterAverage,
            merge_ratio: defaults::MERGE_RATIO,
            frames_t: defaults::FRAMES_T,
            frame_mode: FrameMode::Video,
            output_dir: "out".to_string(),
            config_dir: None,
        }
    }
}

fn config_err(field: &str, message: String) -> CoreError {
    CoreError::InvalidConfig {
        field: field.to_string(),
        message,
    }
}

fn parse_usize(field: &str, value: &str) -> Result<usize, CoreError> {
    value
        .parse()
        .map_err(|_| config_err(field, format!("expected a non-negative integer, got `{value}`")))
}

fn parse_f64(field: &str, value: &str) -> Result<f64, CoreError> {
    value
        .parse()
        .map_err(|_| config_err(field, format!("expected a number, got `{value}`")))
}

fn parse_f64_list(field: &str, value: &str) -> Result<Vec<f64>, CoreError> {
    value
        .split(',')
        .map(|v| parse_f64(field, v.trim()))
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_f64_list(vs: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

impl RunConfig {
    /// Parse the flat key-value format. Unknown keys are rejected by name.
    pub fn parse(text: &str, config_dir: Option<PathBuf>) -> Result<RunConfig, CoreError> {
        let mut config = RunConfig {
            config_dir,
            ..RunConfig::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(
                    "config",
                    format!("line {}: expected `key = value`, got `{line}`", i + 1),
                )
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "backbone" => config.backbone = value.to_string(),
                "attention_temperature" => {
                    config.attention_temperature = if value == "auto" {
                        Temperature::Auto
                    } else {
                        Temperature::Fixed(parse_f64(key, value)?)
                    }
                }
                "iterations_j" => config.iterations_j = parse_usize(key, value)?,
                "layers_k" => config.layers_k = parse_usize(key, value)?,
                "static_weights" => config.static_weights = parse_f64_list(key, value)?,
                "dynamic_layers_d" => config.dynamic_layers_d = parse_usize(key, value)?,
                "dynamic_temperature" => config.dynamic_temperature = parse_f64(key, value)?,
                "weighting" => {
                    config.weighting = WeightMode::parse(value).ok_or_else(|| {
                        config_err(key, format!("unknown weighting mode `{value}`"))
                    })?
                }
                "label_style" => {
                    config.label_style = LabelStyle::parse(value).ok_or_else(|| {
                        config_err(key, format!("unknown label style `{value}`"))
                    })?
                }
                "fusion_weights" => {
                    let list = parse_f64_list(key, value)?;
                    if list.len() != 3 {
                        return Err(config_err(key, "expected three weights".to_string()));
                    }
                    config.fusion_weights = (list[0], list[1], list[2]);
                }
                "merge" => {
                    config.merge = MergeStrategy::parse(value).ok_or_else(|| {
                        config_err(key, format!("unknown merge strategy `{value}`"))
                    })?
                }
                "merge_ratio" => {
                    let list = parse_f64_list(key, value)?;
                    if list.len() != 3 {
                        return Err(config_err(key, "expected three ratio entries".to_string()));
                    }
                    config.merge_ratio = [list[0], list[1], list[2]];
                }
                "frames_t" => config.frames_t = parse_usize(key, value)?,
                "frame_mode" => {
                    config.frame_mode = match value {
                        "video" => FrameMode::Video,
                        "repeated_image" => FrameMode::RepeatedImage,
                        _ => return Err(config_err(key, format!("unknown frame mode `{value}`"))),
                    }
                }
                "output_dir" => config.output_dir = value.to_string(),
                _ => return Err(config_err(key, "unknown config key".to_string())),
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            config_err("config", format!("cannot read `{}`: {e}", path.display()))
        })?;
        Self::parse(&text, path.parent().map(|p| p.to_path_buf()))
    }

    /// Resolve the backbone string into a live backbone. Only `toy:` fixture
    /// backbones are built in; adapters register by name here.
    pub fn open_backbone(&self) -> Result<Box<dyn Backbone>, CoreError> {
        match self.backbone.split_once(':') {
            Some(("toy", path)) => {
                let resolved = self.resolve_fixture(Path::new(path));
                Ok(Box::new(ToyBackbone::from_fixture(&resolved)?))
            }
            _ => Err(config_err(
                "backbone",
                format!("unknown backbone `{}` (expected `toy:<fixture path>`)", self.backbone),
            )),
        }
    }

    fn resolve_fixture(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        if let Ok(root) = std::env::var(FIXTURE_ROOT_ENV) {
            let candidate = Path::new(&root).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
        if let Some(dir) = &self.config_dir {
            let candidate = dir.join(path);
            if candidate.exists() {
                return candidate;
            }
        }
        path.to_path_buf()
    }

    pub fn fusion(&self) -> Result<FusionWeights, CoreError> {
        FusionWeights::new(
            self.fusion_weights.0,
            self.fusion_weights.1,
            self.fusion_weights.2,
        )
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, CoreError> {
        let config = PipelineConfig {
            iterations: self.iterations_j,
            temperature: self.attention_temperature,
            weighting: WeightConfig {
                span: self.layers_k,
                dynamic_span: self.dynamic_layers_d,
                dynamic_temperature: self.dynamic_temperature,
                static_weights: self.static_weights.clone(),
                mode: self.weighting,
            },
            fusion: self.fusion()?,
            merge: MergePolicy {
                strategy: self.merge,
                ratio: self.merge_ratio,
            },
            frames_t: self.frames_t,
            frame_mode: self.frame_mode,
            label_style: self.label_style,
            removed_summand: None,
        };
        config.validate()?;
        Ok(config)
    }

    /// Canonical string rendering of every setting, echoed verbatim into run
    /// metadata.
    pub fn echo(&self) -> ConfigEcho {
        let before = self.frames_t / 2;
        let after = self.frames_t - 1 - before;
        ConfigEcho {
            backbone: self.backbone.clone(),
            attention_temperature: match self.attention_temperature {
                Temperature::Auto => "auto".to_string(),
                Temperature::Fixed(t) => fmt_f64(t),
            },
            iterations_j: self.iterations_j.to_string(),
            layers_k: self.layers_k.to_string(),
            static_weights: fmt_f64_list(&self.static_weights),
            dynamic_layers_d: self.dynamic_layers_d.to_string(),
            dynamic_temperature: fmt_f64(self.dynamic_temperature),
            weighting: self.weighting.as_str().to_string(),
            label_style: self.label_style.as_str().to_string(),
            fusion_weights: fmt_f64_list(&[
                self.fusion_weights.0,
                self.fusion_weights.1,
                self.fusion_weights.2,
            ]),
            merge: self.merge.as_str().to_string(),
            merge_ratio: fmt_f64_list(&self.merge_ratio),
            frames_t: self.frames_t.to_string(),
            frame_mode: match self.frame_mode {
                FrameMode::Video => "video".to_string(),
                FrameMode::RepeatedImage => "repeated_image".to_string(),
            },
            frame_sampling: format!("before={before},target=1,after={after}"),
            output_dir: self.output_dir.clone(),
        }
    }
}

/// Flat, ordered, all-string echo of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub backbone: String,
    pub attention_temperature: String,
    pub iterations_j: String,
    pub layers_k: String,
    pub static_weights: String,
    pub dynamic_layers_d: String,
    pub dynamic_temperature: String,
    pub weighting: String,
    pub label_style: String,
    pub fusion_weights: String,
    pub merge: String,
    pub merge_ratio: String,
    pub frames_t: String,
    pub frame_mode: String,
    pub frame_sampling: String,
    pub output_dir: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_setting() {
        let config = RunConfig::parse("", None).unwrap();
        assert_eq!(config, RunConfig::default());
        let echo = config.echo();
        assert_eq!(echo.layers_k, "7");
        assert_eq!(echo.iterations_j, "1");
        assert_eq!(echo.static_weights, "0.3,0.4,0.5,0.6,0.7,0.9,0.9,0.9");
        assert_eq!(echo.dynamic_layers_d, "3");
        assert_eq!(echo.dynamic_temperature, "20");
        assert_eq!(echo.fusion_weights, "0.2,0.2,0.6");
        assert_eq!(echo.frames_t, "8");
        assert_eq!(echo.frame_sampling, "before=4,target=1,after=3");
        assert_eq!(echo.merge_ratio, "1,1,3");
        assert_eq!(echo.weighting, "combined");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("no_such_key = 3", None).unwrap_err();
        assert!(err.to_string().contains("no_such_key"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let err = RunConfig::parse("layers_k = seven", None).unwrap_err();
        assert!(err.to_string().contains("layers_k"), "{err}");
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# comment\nlayers_k = 3\nstatic_weights = 1,1,1,1\n\nlayers_k = 2\nstatic_weights = 0.5,0.5,0.5\n";
        let config = RunConfig::parse(text, None).unwrap();
        assert_eq!(config.layers_k, 2);
        assert_eq!(config.static_weights, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn pipeline_config_validates_lengths() {
        let config = RunConfig::parse("layers_k = 2\n", None).unwrap();
        // default static weights have 8 entries, span 2 needs 3
        assert!(config.pipeline_config().is_err());
        let ok = RunConfig::parse(
            "layers_k = 2\nstatic_weights = 0.5,0.7,0.9\ndynamic_layers_d = 2\n",
            None,
        )
        .unwrap();
        assert!(ok.pipeline_config().is_ok());
    }

    #[test]
    fn unknown_backbone_scheme_rejected() {
        let config = RunConfig::parse("backbone = magic:model.pt", None).unwrap();
        assert!(config.open_backbone().is_err());
    }

    #[test]
    fn fixture_resolves_relative_to_the_config_file() {
        use grounder_core::backbone::{ToyDims, ToyWeights};
        let dir = std::env::temp_dir().join(format!(
            "grounder-config-resolve-{}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        ToyWeights::generate(3, ToyDims::small())
            .unwrap()
            .write_to(&dir.join("toy_backbone.bin"))
            .unwrap();
        let cfg_path = dir.join("run.cfg");
        std::fs::write(&cfg_path, "backbone = toy:toy_backbone.bin\n").unwrap();
        let config = RunConfig::load(&cfg_path).unwrap();
        let backbone = config.open_backbone().unwrap();
        assert_eq!(backbone.descriptor().layer_count, 4);
        std::fs::remove_dir_all(&dir).ok();
    }
}
