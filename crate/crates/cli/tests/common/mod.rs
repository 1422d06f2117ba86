//! Builds the end-to-end test scenario in a temp directory: a deep toy
//! fixture, four synthetic clips, an annotation set, and a default config.
//! Everything is derived from fixed seeds, so two builds are bit-identical.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grounder_core::backbone::{ToyDims, ToyWeights};
use grounder_core::grounding::write_frame_png;
use grounder_core::testkit::synth_frame;

pub const FIXTURE_SEED: u64 = 42;
pub const CLIP_LEN: usize = 12;
pub const LABELED_FRAME: usize = 5;

pub struct Scenario {
    pub dir: PathBuf,
}

impl Scenario {
    /// Lay out fixture, clips, annotations, and config under a fresh temp
    /// directory.
    pub fn build(label: &str) -> Scenario {
        let dir = std::env::temp_dir().join(format!(
            "grounder-e2e-{label}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();

        let weights = ToyWeights::generate(FIXTURE_SEED, ToyDims::deep()).unwrap();
        weights.write_to(&dir.join("toy_backbone.bin")).unwrap();

        for (i, _) in SAMPLES.iter().enumerate() {
            let clip = dir.join(format!("frames/s{i:02}"));
            std::fs::create_dir_all(&clip).unwrap();
            for f in 0..CLIP_LEN {
                let frame = synth_frame(16, 16, (i * 16 + f) as u8);
                write_frame_png(&frame, &clip.join(format!("{f:04}.png"))).unwrap();
            }
        }

        std::fs::write(dir.join("annotations.jsonl"), annotations_jsonl()).unwrap();
        std::fs::write(dir.join("default.cfg"), "").unwrap();
        Scenario { dir }
    }

    /// Run the binary with this scenario as working directory and fixture
    /// root.
    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_grounder"))
            .args(args)
            .current_dir(&self.dir)
            .env("GROUNDER_FIXTURE_ROOT", &self.dir)
            .output()
            .expect("binary runs")
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.dir.join(rel))
            .unwrap_or_else(|e| panic!("missing output `{rel}`: {e}"))
    }
}

impl Drop for Scenario {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.dir).ok();
    }
}

/// Sample table: label, union policy, and ground-truth boxes. The boxes were
/// placed around the deterministic fused predictions of the frozen pipeline
/// so that s00..s02 score as hits and s03 as a miss.
#[allow(clippy::type_complexity)]
pub const SAMPLES: &[(&str, &str, &[(f64, f64, f64, f64, Option<&str>)])] = &[
    (
        "cutting_onion",
        "union",
        &[
            (0.0, 0.0, 7.0, 9.0, Some("human")),
            (12.0, 6.0, 15.0, 13.0, Some("object")),
        ],
    ),
    (
        "washing_pan",
        "union",
        &[
            (6.0, 0.0, 15.0, 6.0, Some("human")),
            (2.0, 2.0, 9.0, 10.0, Some("object")),
        ],
    ),
    ("waving", "single", &[(8.0, 4.0, 15.0, 12.0, None)]),
    (
        "pouring_milk",
        "hull",
        &[
            (12.0, 12.0, 15.0, 15.0, Some("human")),
            (10.0, 14.0, 13.0, 15.0, Some("object")),
        ],
    ),
];

pub fn annotations_jsonl() -> String {
    let mut out = String::new();
    for (i, (label, policy, boxes)) in SAMPLES.iter().enumerate() {
        let boxes_json: Vec<String> = boxes
            .iter()
            .map(|(x0, y0, x1, y1, role)| match role {
                Some(r) => format!(
                    r#"{{"x_min": {x0}, "y_min": {y0}, "x_max": {x1}, "y_max": {y1}, "role": "{r}"}}"#
                ),
                None => format!(
                    r#"{{"x_min": {x0}, "y_min": {y0}, "x_max": {x1}, "y_max": {y1}}}"#
                ),
            })
            .collect();
        out.push_str(&format!(
            r#"{{"sample_id": "s{i:02}", "media_path": "frames/s{i:02}", "labeled_frame_index": {LABELED_FRAME}, "label": "{label}", "boxes": [{}], "union_policy": "{policy}"}}"#,
            boxes_json.join(", ")
        ));
        out.push('\n');
    }
    out
}

/// Path to a checked-in golden file.
pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
