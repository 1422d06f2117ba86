//! From weighted tokens to a target-frame heatmap and a predicted point.
//!
//! Patch tokens are projected into the joint space, scored by cosine against
//! the prompt embedding, and the target frame's scores are reshaped to the
//! patch grid, bilinearly upsampled to frame resolution, and min-max
//! normalized. The prediction is the argmax pixel.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::{BackboneDescriptor, Frame, FrameBatch, FrameMode, LayerTrace, TextEmbedding};
use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::weighting::cosine_or_zero;

/// Magic prefix of the raw heatmap sidecar format.
pub const HEATMAP_MAGIC: &[u8; 8] = b"HEATMAP1";

/// Cosine similarity per patch token, CLS excluded; frame-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    pub scores: Vec<f64>,
    pub tokens_per_frame: usize,
    pub frame_count: usize,
}

/// Min-max normalized per-pixel similarity grid for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    grid: Mat,
}

/// A pixel location; x grows rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelPoint {
    pub x: usize,
    pub y: usize,
}

impl Heatmap {
    /// Min-max normalize a raw grid. A constant grid (max == min) normalizes
    /// to all zeros: no signal.
    pub fn from_raw(raw: Mat) -> Heatmap {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in raw.data() {
            if *v < min {
                min = *v;
            }
            if *v > max {
                max = *v;
            }
        }
        let mut grid = raw;
        if max > min {
            let span = max - min;
            for r in 0..grid.rows() {
                for v in grid.row_mut(r) {
                    *v = (*v - min) / span;
                }
            }
        } else {
            grid = Mat::zeros(grid.rows(), grid.cols());
        }
        Heatmap { grid }
    }

    /// Wrap a grid that is already normalized; every entry must lie in
    /// [0, 1].
    pub fn from_normalized(grid: Mat) -> Result<Heatmap> {
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::BadInput {
                message: "normalized heatmap values must lie in [0, 1]".to_string(),
            });
        }
        Ok(Heatmap { grid })
    }

    pub fn grid(&self) -> &Mat {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.rows()
    }

    pub fn width(&self) -> usize {
        self.grid.cols()
    }

    /// Raw sidecar bytes: 8-byte magic, u32 LE height, u32 LE width, then
    /// row-major f32 LE values.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.grid.data().len() * 4);
        out.extend_from_slice(HEATMAP_MAGIC);
        out.extend_from_slice(&(self.height() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width() as u32).to_le_bytes());
        for v in self.grid.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_raw_bytes())?;
        Ok(())
    }

    /// 8-bit grayscale PNG export.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut pixels = Vec::with_capacity(h * w);
        for v in self.grid.data() {
            pixels.push((v * 255.0).round() as u8);
        }
        let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
            .expect("pixel buffer matches dimensions");
        img.save(path).map_err(|e| CoreError::Media {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Deterministic frame indices around a labeled frame: floor(T/2) before,
/// the rest after, edges clamped by repetition. For T=8 that is 4 before and
/// 3 after, with the labeled frame at position 4.
pub fn sample_indices(labeled_index: usize, frame_total: usize, t: usize) -> Vec<usize> {
    let before = t / 2;
    (0..t)
        .map(|k| {
            let rel = labeled_index as i64 - before as i64 + k as i64;
            rel.clamp(0, frame_total as i64 - 1) as usize
        })
        .collect()
}

/// Position of the labeled frame within a sampled batch of length `t`.
pub fn target_position(t: usize) -> usize {
    t / 2
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

/// Decode one image file to 8-bit RGB.
pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|e| CoreError::Media {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_rgb8();
    Frame::new(img.width() as usize, img.height() as usize, img.into_raw())
}

pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let img = image::RgbImage::from_raw(
        frame.width as u32,
        frame.height as u32,
        frame.rgb.clone(),
    )
    .expect("frame buffer matches dimensions");
    img.save(path).map_err(|e| CoreError::Media {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Frame sources: a directory of image files (sorted by file name) is a
/// video; a single image file is a one-frame video.
pub fn list_frame_paths(media: &Path) -> Result<Vec<PathBuf>> {
    if media.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(media)
            .map_err(|e| CoreError::Media {
                path: media.display().to_string(),
                message: e.to_string(),
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(CoreError::Media {
                path: media.display().to_string(),
                message: "directory contains no frame images".to_string(),
            });
        }
        Ok(paths)
    } else if media.is_file() {
        Ok(vec![media.to_path_buf()])
    } else {
        Err(CoreError::Media {
            path: media.display().to_string(),
            message: "no such file or directory".to_string(),
        })
    }
}

/// Sample a frame batch around the labeled frame.
///
/// Video mode loads the clamped index window; repeated-image mode loads the
/// labeled frame once and repeats it `t` times.
pub fn sample_frames(
    media: &Path,
    labeled_index: usize,
    t: usize,
    mode: FrameMode,
) -> Result<FrameBatch> {
    if t == 0 {
        return Err(CoreError::BadInput {
            message: "frame count must be positive".to_string(),
        });
    }
    let paths = list_frame_paths(media)?;
    if labeled_index >= paths.len() {
        return Err(CoreError::BadInput {
            message: format!(
                "labeled frame {labeled_index} out of range for {} frames",
                paths.len()
            ),
        });
    }
    let frames = match mode {
        FrameMode::RepeatedImage => {
            let frame = load_frame(&paths[labeled_index])?;
            vec![frame; t]
        }
        FrameMode::Video => {
            let indices = sample_indices(labeled_index, paths.len(), t);
            // load each distinct index once
            let mut cache: Vec<(usize, Frame)> = Vec::new();
            let mut frames = Vec::with_capacity(t);
            for idx in indices {
                let cached = cache.iter().find(|(i, _)| *i == idx).map(|(_, f)| f.clone());
                let frame = match cached {
                    Some(f) => f,
                    None => {
                        let f = load_frame(&paths[idx])?;
                        cache.push((idx, f.clone()));
                        f
                    }
                };
                frames.push(frame);
            }
            frames
        }
    };
    FrameBatch::new(frames, target_position(t), mode)
}

/// Cosine similarity of each patch token (CLS excluded) against the prompt
/// embedding, after mapping tokens through the backbone's final layer norm
/// and visual projection.
pub fn patch_text_similarity(
    output_tokens: &Mat,
    e_eos: &TextEmbedding,
    trace: &LayerTrace,
) -> Result<SimilarityField> {
    if output_tokens.rows() != trace.token_count() {
        return Err(CoreError::ShapeMismatch {
            context: "patch similarity",
            expected: format!("{} token rows", trace.token_count()),
            got: format!("{}", output_tokens.rows()),
        });
    }
    if output_tokens.cols() != trace.final_projection.ln_gain.len() {
        return Err(CoreError::ShapeMismatch {
            context: "patch similarity",
            expected: format!("{} token columns", trace.final_projection.ln_gain.len()),
            got: format!("{}", output_tokens.cols()),
        });
    }
    let projected = trace.final_projection.apply(output_tokens);
    if e_eos.vector.len() != projected.cols() {
        return Err(CoreError::ShapeMismatch {
            context: "patch similarity",
            expected: format!("text embedding of length {}", projected.cols()),
            got: format!("{}", e_eos.vector.len()),
        });
    }
    let mut scores = Vec::with_capacity(projected.rows() - 1);
    for r in 1..projected.rows() {
        scores.push(cosine_or_zero(projected.row(r), &e_eos.vector));
    }
    Ok(SimilarityField {
        scores,
        tokens_per_frame: trace.tokens_per_frame,
        frame_count: trace.frame_count,
    })
}

/// Bilinear upsampling with half-pixel sample centers and edge clamping.
fn bilinear_upsample(src: &Mat, out_h: usize, out_w: usize) -> Mat {
    let (in_h, in_w) = (src.rows(), src.cols());
    let mut out = Mat::zeros(out_h, out_w);
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5)
            .clamp(0.0, (in_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5)
                .clamp(0.0, (in_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = sx - x0 as f64;
            let top = src.get(y0, x0) * (1.0 - fx) + src.get(y0, x1) * fx;
            let bottom = src.get(y1, x0) * (1.0 - fx) + src.get(y1, x1) * fx;
            out.set(oy, ox, top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// The target frame's scores reshaped to the patch grid, upsampled to frame
/// resolution, and min-max normalized.
pub fn heatmap_for_target_frame(
    field: &SimilarityField,
    batch: &FrameBatch,
    descriptor: &BackboneDescriptor,
) -> Result<Heatmap> {
    let n = descriptor.tokens_per_frame();
    if field.scores.len() != batch.len() * n {
        return Err(CoreError::ShapeMismatch {
            context: "target-frame heatmap",
            expected: format!("{} scores", batch.len() * n),
            got: format!("{}", field.scores.len()),
        });
    }
    let (rows, cols) = descriptor.patch_grid;
    let t = batch.target_index();
    let grid = Mat::from_vec(rows, cols, field.scores[t * n..(t + 1) * n].to_vec());
    let frame = &batch.frames()[t];
    Ok(Heatmap::from_raw(bilinear_upsample(
        &grid,
        frame.height,
        frame.width,
    )))
}

/// Argmax pixel of a heatmap; ties break to the lowest row-major index.
pub fn predict_center(map: &Heatmap) -> PixelPoint {
    let (y, x) = map.grid.argmax();
    PixelPoint { x, y }
}

/// A frame with the heatmap blended on top of its red channel, for
/// qualitative inspection.
pub fn overlay_heatmap(frame: &Frame, map: &Heatmap) -> Result<Frame> {
    if map.height() != frame.height || map.width() != frame.width {
        return Err(CoreError::ShapeMismatch {
            context: "heatmap overlay",
            expected: format!("{}x{}", frame.height, frame.width),
            got: format!("{}x{}", map.height(), map.width()),
        });
    }
    let mut rgb = frame.rgb.clone();
    for y in 0..frame.height {
        for x in 0..frame.width {
            let a = 0.5 * map.grid.get(y, x);
            let at = (y * frame.width + x) * 3;
            rgb[at] = (rgb[at] as f64 * (1.0 - a) + 255.0 * a).round() as u8;
            rgb[at + 1] = (rgb[at + 1] as f64 * (1.0 - a)).round() as u8;
            rgb[at + 2] = (rgb[at + 2] as f64 * (1.0 - a)).round() as u8;
        }
    }
    Frame::new(frame.width, frame.height, rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sampling_window() {
        assert_eq!(
            sample_indices(10, 30, 8),
            vec![6, 7, 8, 9, 10, 11, 12, 13]
        );
        assert_eq!(target_position(8), 4);
    }

    #[test]
    fn edge_clamped_window() {
        assert_eq!(sample_indices(0, 30, 8), vec![0, 0, 0, 0, 0, 1, 2, 3]);
        assert_eq!(sample_indices(29, 30, 8), vec![25, 26, 27, 28, 29, 29, 29, 29]);
    }

    #[test]
    fn constant_scores_normalize_to_zero() {
        let map = Heatmap::from_raw(Mat::from_vec(3, 3, vec![0.7; 9]));
        assert!(map.grid().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nonconstant_scores_span_zero_to_one() {
        let map = Heatmap::from_raw(Mat::from_vec(2, 2, vec![0.1, 0.4, 0.2, 0.3]));
        let data = map.grid().data();
        assert_eq!(data.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(data.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn one_hot_bilinear_stencil() {
        // hand-computed 2x2 -> 4x4 upsampling of a one-hot grid: separable
        // row/column weights [1, 0.75, 0.25, 0]
        let src = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]);
        let up = bilinear_upsample(&src, 4, 4);
        let w = [1.0, 0.75, 0.25, 0.0];
        for y in 0..4 {
            for x in 0..4 {
                assert!(
                    (up.get(y, x) - w[y] * w[x]).abs() < 1e-12,
                    "pixel ({x},{y}) = {}, want {}",
                    up.get(y, x),
                    w[y] * w[x]
                );
            }
        }
        // min-max keeps this stencil unchanged: max is 1, min is 0
        let map = Heatmap::from_raw(up.clone());
        assert!(map.grid().max_abs_diff(&up) < 1e-12);
    }

    #[test]
    fn argmax_and_tie_rules() {
        let mut raw = Mat::zeros(6, 6);
        raw.set(5, 3, 2.0);
        let map = Heatmap::from_raw(raw);
        assert_eq!(predict_center(&map), PixelPoint { x: 3, y: 5 });

        let uniform = Heatmap::from_raw(Mat::zeros(4, 4));
        assert_eq!(predict_center(&uniform), PixelPoint { x: 0, y: 0 });

        // equal maxima at (x=1,y=1) and (x=2,y=0): row-major index 2 wins
        let mut two = Mat::zeros(4, 4);
        two.set(1, 1, 3.0);
        two.set(0, 2, 3.0);
        let map = Heatmap::from_raw(two);
        assert_eq!(predict_center(&map), PixelPoint { x: 2, y: 0 });
    }

    #[test]
    fn argmax_invariant_under_monotone_rescale() {
        let mut raw = Mat::zeros(3, 5);
        for (i, v) in raw.row_mut(1).iter_mut().enumerate() {
            *v = (i as f64 * 1.3).sin();
        }
        raw.set(2, 4, 0.99);
        let a = predict_center(&Heatmap::from_raw(raw.clone()));
        let rescaled = Mat::from_vec(
            3,
            5,
            raw.data().iter().map(|v| 3.0 * v.exp() + 7.0).collect(),
        );
        let b = predict_center(&Heatmap::from_raw(rescaled));
        assert_eq!(a, b);
    }

    #[test]
    fn raw_sidecar_layout() {
        let map = Heatmap::from_raw(Mat::from_vec(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let bytes = map.to_raw_bytes();
        assert_eq!(&bytes[0..8], HEATMAP_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        let first = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        assert_eq!(first, 0.0);
    }
}
