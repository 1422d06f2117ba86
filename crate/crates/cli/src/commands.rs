//! The three commands behind the binary: single-sample grounding with
//! heatmap export, batch evaluation, and ablation sweeps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use grounder_core::backbone::Backbone;
use grounder_core::eval::{
    ablation_sweep, evaluate_records, load_annotations, EvalReport, SweepMode, SweepTable,
};
use grounder_core::grounding::{overlay_heatmap, write_frame_png, PixelPoint};
use grounder_core::pipeline::{GroundOutcome, Pipeline};
use grounder_core::prompt::RuleBasedExtractor;
use grounder_core::CoreError;

use crate::config::{ConfigEcho, RunConfig};

/// Command failures carry the process exit code: 1 for usage and
/// configuration problems, 2 for data problems (media, annotations,
/// fixtures).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write `{}`: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create `{}`: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointRecord {
    pub x: usize,
    pub y: usize,
}

impl From<PixelPoint> for PointRecord {
    fn from(p: PixelPoint) -> Self {
        PointRecord { x: p.x, y: p.y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedRecord {
    pub x: usize,
    pub y: usize,
    pub raw_x: f64,
    pub raw_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub center: PointRecord,
    pub heatmap_png: String,
    pub heatmap_raw: String,
}

/// Everything `ground` writes, also echoed to standard output as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundRecord {
    pub label: String,
    pub media: String,
    pub labeled_frame: usize,
    pub verb: PromptRecord,
    pub object: PromptRecord,
    pub action: PromptRecord,
    pub fused: FusedRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_heatmap_png: Option<String>,
    pub config: ConfigEcho,
}

fn export_outcome(
    outcome: &GroundOutcome,
    target_frame: &grounder_core::backbone::Frame,
    out_dir: &Path,
) -> Result<[(String, String); 3], CliError> {
    let mut names = Vec::with_capacity(3);
    for result in &outcome.per_prompt {
        let kind = result.kind.as_str();
        let png = format!("heatmap_{kind}.png");
        let raw = format!("heatmap_{kind}.raw");
        result.heatmap.write_png(&out_dir.join(&png))?;
        result.heatmap.write_raw(&out_dir.join(&raw))?;
        let overlay = overlay_heatmap(target_frame, &result.heatmap)?;
        write_frame_png(&overlay, &out_dir.join(format!("overlay_{kind}.png")))?;
        names.push((png, raw));
    }
    Ok(names.try_into().expect("three prompts"))
}

/// Ground one labeled frame: per-prompt heatmaps, overlays, and a JSON
/// result land in the output directory; the JSON is returned.
pub fn cmd_ground(
    config: &RunConfig,
    media: &Path,
    labeled_frame: usize,
    label: &str,
    out_dir: &Path,
) -> Result<GroundRecord, CliError> {
    let backbone = config.open_backbone()?;
    let pipeline_config = config.pipeline_config()?;
    let extractor = RuleBasedExtractor;
    let pipeline = Pipeline::new(backbone.as_ref(), &extractor, pipeline_config)?;

    let batch = grounder_core::grounding::sample_frames(
        media,
        labeled_frame,
        config.frames_t,
        config.frame_mode,
    )?;
    let outcome = pipeline.ground_batch(&batch, label)?;

    ensure_dir(out_dir)?;
    let target_frame = &batch.frames()[batch.target_index()];
    let files = export_outcome(&outcome, target_frame, out_dir)?;
    let merged_heatmap_png = match &outcome.merged_heatmap {
        Some(map) => {
            let name = "heatmap_merged.png".to_string();
            map.write_png(&out_dir.join(&name))?;
            map.write_raw(&out_dir.join("heatmap_merged.raw"))?;
            Some(name)
        }
        None => None,
    };

    let prompt_record = |i: usize| PromptRecord {
        prompt: outcome.per_prompt[i].prompt.clone(),
        center: outcome.per_prompt[i].center.into(),
        heatmap_png: files[i].0.clone(),
        heatmap_raw: files[i].1.clone(),
    };
    let record = GroundRecord {
        label: label.to_string(),
        media: media.display().to_string(),
        labeled_frame,
        verb: prompt_record(0),
        object: prompt_record(1),
        action: prompt_record(2),
        fused: FusedRecord {
            x: outcome.fused.pixel.x,
            y: outcome.fused.pixel.y,
            raw_x: outcome.fused.raw_x,
            raw_y: outcome.fused.raw_y,
        },
        merged_heatmap_png,
        config: config.echo(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| CliError::Data(format!("cannot serialize result: {e}")))?;
    write_out(&out_dir.join("result.json"), json.as_bytes())?;
    Ok(record)
}

/// Full evaluation report for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub annotations: String,
    pub report: EvalReport,
    pub config: ConfigEcho,
}

fn build_pipeline<'a>(
    config: &RunConfig,
    backbone: &'a dyn Backbone,
    extractor: &'a RuleBasedExtractor,
) -> Result<Pipeline<'a>, CliError> {
    Ok(Pipeline::new(backbone, extractor, config.pipeline_config()?)?)
}

/// Evaluate every annotated sample; the report JSON lands in the output
/// directory and the accuracy is returned for printing.
pub fn cmd_eval(
    config: &RunConfig,
    annotations: &Path,
    out_dir: &Path,
) -> Result<EvalRecord, CliError> {
    let records = load_annotations(annotations)?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "annotation file `{}` holds no records",
            annotations.display()
        )));
    }
    let backbone = config.open_backbone()?;
    let extractor = RuleBasedExtractor;
    let pipeline = build_pipeline(config, backbone.as_ref(), &extractor)?;
    let base_dir = annotations.parent().unwrap_or(Path::new("."));
    let report = evaluate_records(&pipeline, &records, base_dir)?;

    ensure_dir(out_dir)?;
    let record = EvalRecord {
        annotations: annotations.display().to_string(),
        report,
        config: config.echo(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    write_out(&out_dir.join("report.json"), json.as_bytes())?;
    Ok(record)
}

/// Run a layer-removal or depth sweep; the CSV lands in the output
/// directory and is returned for printing.
pub fn cmd_sweep(
    config: &RunConfig,
    annotations: &Path,
    mode: SweepMode,
    range: (usize, usize),
    out_dir: &Path,
) -> Result<SweepTable, CliError> {
    let records = load_annotations(annotations)?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "annotation file `{}` holds no records",
            annotations.display()
        )));
    }
    let backbone = config.open_backbone()?;
    let extractor = RuleBasedExtractor;
    let pipeline = build_pipeline(config, backbone.as_ref(), &extractor)?;
    let base_dir = annotations.parent().unwrap_or(Path::new("."));
    let table = ablation_sweep(&pipeline, &records, base_dir, mode, range)?;

    ensure_dir(out_dir)?;
    let name = match mode {
        SweepMode::Depth => "sweep_depth.csv",
        SweepMode::RemoveLayer => "sweep_remove.csv",
    };
    write_out(&out_dir.join(name), table.to_csv().as_bytes())?;
    Ok(table)
}

/// Resolve the output directory: the `--out` flag wins over the config.
pub fn resolve_out_dir(config: &RunConfig, flag: Option<&str>) -> PathBuf {
    match flag {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(&config.output_dir),
    }
}
