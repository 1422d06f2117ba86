//! Pointing-game evaluation: annotation ingestion, point-in-box accuracy,
//! and the layer-removal / pathway-depth sweeps.
//!
//! Annotations arrive as JSON Lines, one record per line:
//!
//! ```text
//! {"sample_id": "s1", "media_path": "frames/s1", "labeled_frame_index": 4,
//!  "label": "cutting_onion",
//!  "boxes": [{"x_min": 0, "y_min": 0, "x_max": 8, "y_max": 8, "role": "human"}],
//!  "union_policy": "union"}
//! ```
//!
//! `media_path` is resolved relative to the annotation file's directory.
//! `union_policy` is optional and defaults to `union` (a point is correct
//! inside at least one box); `hull` checks the single enclosing box instead,
//! `single` requires exactly one box.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grounding::PixelPoint;
use crate::pipeline::Pipeline;

/// Axis-aligned pixel box, boundary inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
}

impl BoundingBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(format!(
                "degenerate box ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            ));
        }
        Ok(())
    }
}

/// How multiple ground-truth boxes combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnionPolicy {
    Single,
    #[default]
    Union,
    /// One enclosing box over all annotated boxes.
    Hull,
}

impl UnionPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnionPolicy::Single => "single",
            UnionPolicy::Union => "union",
            UnionPolicy::Hull => "hull",
        }
    }
}

/// One labeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub media_path: String,
    pub labeled_frame_index: usize,
    pub label: String,
    pub boxes: Vec<BoundingBox>,
    #[serde(default)]
    pub union_policy: UnionPolicy,
}

impl AnnotationRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.sample_id.is_empty() {
            return Err("empty sample_id".to_string());
        }
        if self.boxes.is_empty() {
            return Err("record needs at least one box".to_string());
        }
        if self.union_policy == UnionPolicy::Single && self.boxes.len() != 1 {
            return Err(format!(
                "union_policy single requires exactly one box, got {}",
                self.boxes.len()
            ));
        }
        for b in &self.boxes {
            b.validate()?;
        }
        Ok(())
    }
}

/// Parse a JSON Lines annotation file. Blank lines are ignored; malformed
/// lines are reported with their 1-based line number.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Media {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| CoreError::AnnotationParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| CoreError::AnnotationParse {
            line: i + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Is the predicted point inside the ground truth, under the record's union
/// policy? Boundaries are inclusive.
pub fn point_in_box(point: PixelPoint, record: &AnnotationRecord) -> bool {
    let (x, y) = (point.x as f64, point.y as f64);
    match record.union_policy {
        UnionPolicy::Single => record.boxes[0].contains(x, y),
        UnionPolicy::Union => record.boxes.iter().any(|b| b.contains(x, y)),
        UnionPolicy::Hull => {
            let hull = BoundingBox {
                x_min: record.boxes.iter().map(|b| b.x_min).fold(f64::INFINITY, f64::min),
                y_min: record.boxes.iter().map(|b| b.y_min).fold(f64::INFINITY, f64::min),
                x_max: record.boxes.iter().map(|b| b.x_max).fold(f64::NEG_INFINITY, f64::max),
                y_max: record.boxes.iter().map(|b| b.y_max).fold(f64::NEG_INFINITY, f64::max),
                role: None,
            };
            hull.contains(x, y)
        }
    }
}

/// A predicted point for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointPrediction {
    pub sample_id: String,
    pub x: usize,
    pub y: usize,
}

/// Per-sample verdict within a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleVerdict {
    pub sample_id: String,
    pub x: usize,
    pub y: usize,
    pub correct: bool,
}

/// Per-prompt accuracies attached to a full evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBreakdown {
    pub verb: f64,
    pub object: f64,
    pub action: f64,
}

/// Pointing-game accuracy over matched predictions and records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    /// Exactly correct / n.
    pub accuracy: f64,
    /// Counts of the union policies seen, surfaced because the union
    /// reading is a protocol choice.
    pub union_policies: BTreeMap<String, usize>,
    pub samples: Vec<SampleVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<PromptBreakdown>,
}

/// Score predictions against records, matched 1:1 by sample id. Output
/// ordering is by sample id, independent of input order.
pub fn accuracy(predictions: &[PointPrediction], records: &[AnnotationRecord]) -> Result<EvalReport> {
    if predictions.is_empty() || records.is_empty() {
        return Err(CoreError::Eval {
            message: "empty prediction or record set".to_string(),
        });
    }
    let mut by_id: BTreeMap<&str, &AnnotationRecord> = BTreeMap::new();
    for r in records {
        if by_id.insert(&r.sample_id, r).is_some() {
            return Err(CoreError::Eval {
                message: format!("duplicate record id {}", r.sample_id),
            });
        }
    }
    let mut missing: Vec<&str> = Vec::new();
    let mut matched: BTreeMap<&str, (&PointPrediction, &AnnotationRecord)> = BTreeMap::new();
    for p in predictions {
        match by_id.get(p.sample_id.as_str()) {
            Some(r) => {
                if matched.insert(&p.sample_id, (p, r)).is_some() {
                    return Err(CoreError::Eval {
                        message: format!("duplicate prediction id {}", p.sample_id),
                    });
                }
            }
            None => missing.push(&p.sample_id),
        }
    }
    let unpredicted: Vec<&str> = by_id
        .keys()
        .filter(|id| !matched.contains_key(**id))
        .copied()
        .collect();
    if !missing.is_empty() || !unpredicted.is_empty() {
        return Err(CoreError::Eval {
            message: format!(
                "unmatched ids: predictions without records [{}], records without predictions [{}]",
                missing.join(", "),
                unpredicted.join(", ")
            ),
        });
    }

    let mut samples = Vec::with_capacity(matched.len());
    let mut correct = 0;
    let mut union_policies: BTreeMap<String, usize> = BTreeMap::new();
    for (id, (p, r)) in &matched {
        let ok = point_in_box(PixelPoint { x: p.x, y: p.y }, r);
        if ok {
            correct += 1;
        }
        *union_policies
            .entry(r.union_policy.as_str().to_string())
            .or_insert(0) += 1;
        samples.push(SampleVerdict {
            sample_id: id.to_string(),
            x: p.x,
            y: p.y,
            correct: ok,
        });
    }
    let n = samples.len();
    Ok(EvalReport {
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        union_policies,
        samples,
        breakdown: None,
    })
}

/// Ground every record with the pipeline and score fused plus per-prompt
/// predictions. `base_dir` anchors relative media paths.
pub fn evaluate_records(
    pipeline: &Pipeline<'_>,
    records: &[AnnotationRecord],
    base_dir: &Path,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(CoreError::Eval {
            message: "empty record set".to_string(),
        });
    }
    let mut fused = Vec::with_capacity(records.len());
    let mut per_kind: [Vec<PointPrediction>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for record in records {
        let media = base_dir.join(&record.media_path);
        let outcome = pipeline.ground_media(&media, record.labeled_frame_index, &record.label)?;
        fused.push(PointPrediction {
            sample_id: record.sample_id.clone(),
            x: outcome.fused.pixel.x,
            y: outcome.fused.pixel.y,
        });
        for (i, result) in outcome.per_prompt.iter().enumerate() {
            per_kind[i].push(PointPrediction {
                sample_id: record.sample_id.clone(),
                x: result.center.x,
                y: result.center.y,
            });
        }
    }
    let mut report = accuracy(&fused, records)?;
    let verb = accuracy(&per_kind[0], records)?;
    let object = accuracy(&per_kind[1], records)?;
    let action = accuracy(&per_kind[2], records)?;
    report.breakdown = Some(PromptBreakdown {
        verb: verb.accuracy,
        object: object.accuracy,
        action: action.accuracy,
    });
    Ok(report)
}

/// Which sweep to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Zero one pathway summand per setting; index 1 is the final layer,
    /// span+1 the self-attention input.
    RemoveLayer,
    /// Vary the pathway span from `range.start` to `range.end`.
    Depth,
}

impl SweepMode {
    pub fn parse(s: &str) -> Option<SweepMode> {
        match s {
            "remove_layer" => Some(SweepMode::RemoveLayer),
            "depth" => Some(SweepMode::Depth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub setting: String,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// CSV with the fixed header `setting,accuracy,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,accuracy,n\n");
        for row in &self.rows {
            out.push_str(&format!("{},{:.6},{}\n", row.setting, row.accuracy, row.n));
        }
        out
    }
}

/// Run the pipeline once per setting over an inclusive range and tabulate
/// fused accuracy.
pub fn ablation_sweep(
    pipeline: &Pipeline<'_>,
    records: &[AnnotationRecord],
    base_dir: &Path,
    mode: SweepMode,
    range: (usize, usize),
) -> Result<SweepTable> {
    let (start, end) = range;
    if start > end {
        return Err(CoreError::InvalidConfig {
            field: "range".to_string(),
            message: format!("empty range {start}..{end}"),
        });
    }
    let mut rows = Vec::with_capacity(end - start + 1);
    for value in start..=end {
        let (setting, config) = match mode {
            SweepMode::Depth => (
                format!("depth={value}"),
                pipeline.config().depth_variant(value)?,
            ),
            SweepMode::RemoveLayer => (
                format!("remove={value}"),
                pipeline.config().removal_variant(value)?,
            ),
        };
        let variant = pipeline.with_config(config)?;
        let report = evaluate_records(&variant, records, base_dir)?;
        rows.push(SweepRow {
            setting,
            accuracy: report.accuracy,
            n: report.n,
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, boxes: Vec<BoundingBox>, policy: UnionPolicy) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: id.to_string(),
            media_path: format!("frames/{id}"),
            labeled_frame_index: 0,
            label: "cutting_onion".to_string(),
            boxes,
            union_policy: policy,
        }
    }

    fn bx(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> BoundingBox {
        BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
            role: None,
        }
    }

    #[test]
    fn point_inside_single_box() {
        let r = record("a", vec![bx(0.0, 0.0, 10.0, 10.0)], UnionPolicy::Single);
        assert!(point_in_box(PixelPoint { x: 5, y: 5 }, &r));
        assert!(!point_in_box(PixelPoint { x: 11, y: 5 }, &r));
    }

    #[test]
    fn boundary_is_inclusive() {
        let r = record("a", vec![bx(0.0, 0.0, 10.0, 10.0)], UnionPolicy::Single);
        assert!(point_in_box(PixelPoint { x: 10, y: 5 }, &r));
        assert!(point_in_box(PixelPoint { x: 0, y: 0 }, &r));
        assert!(point_in_box(PixelPoint { x: 10, y: 10 }, &r));
    }

    #[test]
    fn union_misses_the_gap_hull_covers_it() {
        let boxes = vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 30.0, 10.0)];
        let union = record("a", boxes.clone(), UnionPolicy::Union);
        assert!(!point_in_box(PixelPoint { x: 15, y: 5 }, &union));
        assert!(point_in_box(PixelPoint { x: 25, y: 5 }, &union));
        let hull = record("a", boxes, UnionPolicy::Hull);
        assert!(point_in_box(PixelPoint { x: 15, y: 5 }, &hull));
    }

    #[test]
    fn translation_equivariance() {
        let (dx, dy) = (13.0, 7.0);
        for (px, py, bxs) in [
            (5usize, 5usize, vec![bx(0.0, 0.0, 10.0, 10.0)]),
            (15, 5, vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 30.0, 10.0)]),
            (25, 9, vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 30.0, 10.0)]),
        ] {
            let before = record("a", bxs.clone(), UnionPolicy::Union);
            let shifted: Vec<BoundingBox> = bxs
                .iter()
                .map(|b| bx(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy))
                .collect();
            let after = record("a", shifted, UnionPolicy::Union);
            assert_eq!(
                point_in_box(PixelPoint { x: px, y: py }, &before),
                point_in_box(
                    PixelPoint {
                        x: px + dx as usize,
                        y: py + dy as usize
                    },
                    &after
                )
            );
        }
    }

    #[test]
    fn accuracy_exact_ratio() {
        let records: Vec<AnnotationRecord> = (0..4)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    vec![bx(0.0, 0.0, 10.0, 10.0)],
                    UnionPolicy::Union,
                )
            })
            .collect();
        let predictions = vec![
            PointPrediction { sample_id: "s0".into(), x: 1, y: 1 },
            PointPrediction { sample_id: "s1".into(), x: 2, y: 2 },
            PointPrediction { sample_id: "s2".into(), x: 3, y: 3 },
            PointPrediction { sample_id: "s3".into(), x: 50, y: 50 },
        ];
        let report = accuracy(&predictions, &records).unwrap();
        assert_eq!(report.n, 4);
        assert_eq!(report.correct, 3);
        assert_eq!(report.accuracy, 0.75);
        assert_eq!(report.union_policies.get("union"), Some(&4));
    }

    #[test]
    fn all_correct_is_one() {
        let records = vec![record("a", vec![bx(0.0, 0.0, 9.0, 9.0)], UnionPolicy::Union)];
        let predictions = vec![PointPrediction { sample_id: "a".into(), x: 4, y: 4 }];
        assert_eq!(accuracy(&predictions, &records).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_and_unmatched_inputs_rejected() {
        let records = vec![record("a", vec![bx(0.0, 0.0, 9.0, 9.0)], UnionPolicy::Union)];
        assert!(accuracy(&[], &records).is_err());
        let wrong_id = vec![PointPrediction { sample_id: "b".into(), x: 0, y: 0 }];
        let err = accuracy(&wrong_id, &records).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('b') && msg.contains('a'), "got: {msg}");
    }

    #[test]
    fn adding_a_correct_sample_weakly_increases_accuracy() {
        let mut records = vec![
            record("a", vec![bx(0.0, 0.0, 9.0, 9.0)], UnionPolicy::Union),
            record("b", vec![bx(0.0, 0.0, 9.0, 9.0)], UnionPolicy::Union),
        ];
        let mut predictions = vec![
            PointPrediction { sample_id: "a".into(), x: 4, y: 4 },
            PointPrediction { sample_id: "b".into(), x: 40, y: 40 },
        ];
        let before = accuracy(&predictions, &records).unwrap().accuracy;
        records.push(record("c", vec![bx(0.0, 0.0, 9.0, 9.0)], UnionPolicy::Union));
        predictions.push(PointPrediction { sample_id: "c".into(), x: 1, y: 1 });
        let after = accuracy(&predictions, &records).unwrap().accuracy;
        assert!(after >= before);
    }

    #[test]
    fn hand_counted_twenty_sample_fixture() {
        // two boxes per record: (0,0,10,10) and (20,0,30,10), union policy.
        // predictions alternate through in-first-box, in-gap, in-second-box,
        // and far outside; by hand: indices 0,4,8,12,16 at (5,5) inside,
        // 2,6,10,14,18 at (25,5) inside, the rest outside. 10 of 20 correct.
        let mut records = Vec::new();
        let mut predictions = Vec::new();
        for i in 0..20 {
            let id = format!("s{i:02}");
            records.push(record(
                &id,
                vec![bx(0.0, 0.0, 10.0, 10.0), bx(20.0, 0.0, 30.0, 10.0)],
                UnionPolicy::Union,
            ));
            let (x, y) = match i % 4 {
                0 => (5, 5),
                1 => (15, 5),
                2 => (25, 5),
                _ => (40, 40),
            };
            predictions.push(PointPrediction { sample_id: id, x, y });
        }
        let report = accuracy(&predictions, &records).unwrap();
        assert_eq!(report.n, 20);
        assert_eq!(report.correct, 10);
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn annotation_parsing_reports_line_numbers() {
        let dir = std::env::temp_dir().join(format!(
            "grounder-eval-test-{}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"sample_id": "a", "media_path": "m", "labeled_frame_index": 0, "label": "x"}"#,
        )
        .unwrap();
        match load_annotations(&path) {
            Err(CoreError::AnnotationParse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("boxes"), "got: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn annotation_round_trip() {
        let dir = std::env::temp_dir().join(format!(
            "grounder-eval-roundtrip-{}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ok.jsonl");
        let records = vec![
            record("a", vec![bx(0.0, 0.0, 4.0, 4.0)], UnionPolicy::Union),
            record("b", vec![bx(1.0, 1.0, 5.0, 5.0)], UnionPolicy::Hull),
            record("c", vec![bx(2.0, 0.0, 3.0, 9.0)], UnionPolicy::Single),
        ];
        let text: String = records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        std::fs::write(&path, text).unwrap();
        let loaded = load_annotations(&path).unwrap();
        assert_eq!(loaded, records);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn single_policy_requires_exactly_one_box() {
        let dir = std::env::temp_dir().join(format!(
            "grounder-eval-single-{}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("single.jsonl");
        let mut bad = record(
            "a",
            vec![bx(0.0, 0.0, 4.0, 4.0), bx(5.0, 5.0, 9.0, 9.0)],
            UnionPolicy::Single,
        );
        bad.union_policy = UnionPolicy::Single;
        std::fs::write(&path, serde_json::to_string(&bad).unwrap() + "\n").unwrap();
        assert!(matches!(
            load_annotations(&path),
            Err(CoreError::AnnotationParse { line: 1, .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = std::env::temp_dir().join(format!(
            "grounder-eval-empty-{}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_annotations(&path).unwrap().is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }
}
