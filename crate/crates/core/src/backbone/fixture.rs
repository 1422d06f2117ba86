//! Portable toy-backbone fixture files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TOYVIT01"
//! 8       8     u64 seed
//! 16      4     u32 layer_count
//! 20      4     u32 embed_dim
//! 24      4     u32 head_count
//! 28      4     u32 head_dim
//! 32      4     u32 grid_rows
//! 36      4     u32 grid_cols
//! 40      4     u32 patch_px_h
//! 44      4     u32 patch_px_w
//! 48      4     u32 native_frame_count
//! 52      4     u32 mlp_hidden
//! 56      ...   f32 payload, row-major matrices in order:
//!               w_patch   (patch_px_h*patch_px_w*3) x d
//!               pos_embed (grid_rows*grid_cols) x d
//!               per layer 1..L:
//!                 ln1_gain d, ln1_bias d,
//!                 w_q d x (h*d_h), w_k d x (h*d_h), w_v d x (h*d_h),
//!                 w_o (h*d_h) x d,
//!                 ln2_gain d, ln2_bias d,
//!                 w_mlp1 d x mlp_hidden, w_mlp2 mlp_hidden x d
//!               lnf_gain d, lnf_bias d
//!               w_vis d x d
//!               w_text 256 x d
//! ```
//!
//! All payload values are drawn from one SplitMix64 stream in file order:
//! each value consumes one `next_u64`, mapped to a unit f32 by
//! `(x >> 40) as f32 / 2^24` and then scaled. Projection, patch, positional,
//! MLP, visual, and text weights are uniform in a symmetric range (0.4 for
//! q/k/v/o, 0.25 otherwise); layer-norm gains are `1 + uniform(-0.1, 0.1)`
//! and biases `uniform(-0.1, 0.1)`. A `(seed, dims)` pair therefore always
//! produces byte-identical files, independent of platform or implementation
//! language.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::mat::Mat;

pub const FIXTURE_MAGIC: &[u8; 8] = b"TOYVIT01";

/// Byte size of one text-encoder input histogram (one bucket per byte value).
pub const TEXT_BUCKETS: usize = 256;

const HEADER_LEN: usize = 56;

/// Dimensions of a toy backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDims {
    pub layer_count: usize,
    pub embed_dim: usize,
    pub head_count: usize,
    pub head_dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_px_h: usize,
    pub patch_px_w: usize,
    pub native_frame_count: usize,
    pub mlp_hidden: usize,
}

impl ToyDims {
    /// Small image-backbone dimensions used by the unit-test fixtures.
    pub fn small() -> Self {
        ToyDims {
            layer_count: 4,
            embed_dim: 8,
            head_count: 2,
            head_dim: 4,
            grid_rows: 2,
            grid_cols: 2,
            patch_px_h: 4,
            patch_px_w: 4,
            native_frame_count: 1,
            mlp_hidden: 16,
        }
    }

    /// Deep enough for a 7-layer pathway span, with a finer 4x4 patch grid;
    /// used by end-to-end fixtures.
    pub fn deep() -> Self {
        ToyDims {
            layer_count: 8,
            grid_rows: 4,
            grid_cols: 4,
            ..ToyDims::small()
        }
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_input_len(&self) -> usize {
        self.patch_px_h * self.patch_px_w * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim != self.head_count * self.head_dim {
            return Err(bad_dims("embed_dim must equal head_count * head_dim"));
        }
        if self.layer_count == 0 {
            return Err(bad_dims("layer_count must be at least 1"));
        }
        if self.tokens_per_frame() == 0 {
            return Err(bad_dims("patch grid must contain at least one patch"));
        }
        if self.patch_px_h == 0 || self.patch_px_w == 0 {
            return Err(bad_dims("patch pixel size must be positive"));
        }
        if self.native_frame_count != 1 && self.native_frame_count != 8 {
            return Err(bad_dims("native_frame_count must be 1 or 8"));
        }
        if self.mlp_hidden == 0 {
            return Err(bad_dims("mlp_hidden must be positive"));
        }
        Ok(())
    }

    /// Total f32 count of the weight payload.
    pub fn payload_len(&self) -> usize {
        let d = self.embed_dim;
        let proj = self.head_count * self.head_dim;
        let per_layer = 2 * d            // ln1
            + 3 * d * proj               // q, k, v
            + proj * d                   // o
            + 2 * d                      // ln2
            + d * self.mlp_hidden
            + self.mlp_hidden * d;
        self.patch_input_len() * d
            + self.tokens_per_frame() * d
            + self.layer_count * per_layer
            + 2 * d                      // final ln
            + d * d                      // visual projection
            + TEXT_BUCKETS * d
    }
}

fn bad_dims(message: &str) -> CoreError {
    CoreError::InvalidConfig {
        field: "toy_dims".to_string(),
        message: message.to_string(),
    }
}

/// SplitMix64; the one generator used for every fixture payload.
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform f32 in [0, 1) built from the top 24 bits.
    fn next_unit(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / 16_777_216.0)
    }

    fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_unit()
    }

    pub(crate) fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit() as f64
    }
}

/// Per-layer toy weights, converted to f64 for compute.
#[derive(Debug, Clone)]
pub struct ToyLayerWeights {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_mlp1: Mat,
    pub w_mlp2: Mat,
}

/// Full toy weight set plus the raw f32 payload it was built from. The
/// payload is what gets serialized, so write(load(file)) is byte-stable.
#[derive(Debug, Clone)]
pub struct ToyWeights {
    pub dims: ToyDims,
    pub seed: u64,
    pub w_patch: Mat,
    pub pos_embed: Mat,
    pub layers: Vec<ToyLayerWeights>,
    pub lnf_gain: Vec<f64>,
    pub lnf_bias: Vec<f64>,
    pub w_vis: Mat,
    pub w_text: Mat,
    payload: Vec<f32>,
}

/// Payload markers: which slots are layer-norm gains (initialized near 1)
/// versus plain weights. Walked in file order by both generators below.
#[derive(Clone, Copy)]
enum Slot {
    Weight { count: usize, scale: f32 },
    Gain { count: usize },
    Bias { count: usize },
}

fn payload_slots(dims: &ToyDims) -> Vec<Slot> {
    let d = dims.embed_dim;
    let proj = dims.head_count * dims.head_dim;
    let mut slots = vec![
        Slot::Weight {
            count: dims.patch_input_len() * d,
            scale: 0.25,
        },
        Slot::Weight {
            count: dims.tokens_per_frame() * d,
            scale: 0.25,
        },
    ];
    for _ in 0..dims.layer_count {
        slots.push(Slot::Gain { count: d });
        slots.push(Slot::Bias { count: d });
        for _ in 0..3 {
            slots.push(Slot::Weight {
                count: d * proj,
                scale: 0.4,
            });
        }
        slots.push(Slot::Weight {
            count: proj * d,
            scale: 0.4,
        });
        slots.push(Slot::Gain { count: d });
        slots.push(Slot::Bias { count: d });
        slots.push(Slot::Weight {
            count: d * dims.mlp_hidden,
            scale: 0.25,
        });
        slots.push(Slot::Weight {
            count: dims.mlp_hidden * d,
            scale: 0.25,
        });
    }
    slots.push(Slot::Gain { count: d });
    slots.push(Slot::Bias { count: d });
    slots.push(Slot::Weight {
        count: d * d,
        scale: 0.25,
    });
    slots.push(Slot::Weight {
        count: TEXT_BUCKETS * d,
        scale: 0.25,
    });
    slots
}

fn generate_payload(seed: u64, dims: &ToyDims) -> Vec<f32> {
    let mut rng = SplitMix64::new(seed);
    let mut payload = Vec::with_capacity(dims.payload_len());
    for slot in payload_slots(dims) {
        match slot {
            Slot::Weight { count, scale } => {
                for _ in 0..count {
                    payload.push(rng.uniform(-scale, scale));
                }
            }
            Slot::Gain { count } => {
                for _ in 0..count {
                    payload.push(1.0 + rng.uniform(-0.1, 0.1));
                }
            }
            Slot::Bias { count } => {
                for _ in 0..count {
                    payload.push(rng.uniform(-0.1, 0.1));
                }
            }
        }
    }
    payload
}

fn zero_payload(dims: &ToyDims) -> Vec<f32> {
    let mut payload = Vec::with_capacity(dims.payload_len());
    for slot in payload_slots(dims) {
        match slot {
            Slot::Weight { count, .. } | Slot::Bias { count } => {
                payload.extend(std::iter::repeat_n(0.0, count));
            }
            Slot::Gain { count } => {
                payload.extend(std::iter::repeat_n(1.0, count));
            }
        }
    }
    payload
}

struct PayloadReader<'a> {
    data: &'a [f32],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn mat(&mut self, rows: usize, cols: usize) -> Mat {
        let n = rows * cols;
        let m = Mat::from_vec(
            rows,
            cols,
            self.data[self.pos..self.pos + n]
                .iter()
                .map(|v| *v as f64)
                .collect(),
        );
        self.pos += n;
        m
    }

    fn vec(&mut self, n: usize) -> Vec<f64> {
        let v = self.data[self.pos..self.pos + n]
            .iter()
            .map(|v| *v as f64)
            .collect();
        self.pos += n;
        v
    }
}

impl ToyWeights {
    /// Materialize all weights from a seed.
    pub fn generate(seed: u64, dims: ToyDims) -> Result<Self> {
        dims.validate()?;
        Self::from_payload(dims, seed, generate_payload(seed, &dims))
    }

    /// All projection and MLP weights zero, layer-norm gains one. Every block
    /// contributes a zero residual, so X^l stays at X^0.
    pub fn zeroed(dims: ToyDims) -> Result<Self> {
        dims.validate()?;
        Self::from_payload(dims, 0, zero_payload(&dims))
    }

    fn from_payload(dims: ToyDims, seed: u64, payload: Vec<f32>) -> Result<Self> {
        if payload.len() != dims.payload_len() {
            return Err(CoreError::CorruptFixture {
                path: String::new(),
                message: format!(
                    "payload holds {} values, dims require {}",
                    payload.len(),
                    dims.payload_len()
                ),
            });
        }
        let d = dims.embed_dim;
        let proj = dims.head_count * dims.head_dim;
        let mut r = PayloadReader {
            data: &payload,
            pos: 0,
        };
        let w_patch = r.mat(dims.patch_input_len(), d);
        let pos_embed = r.mat(dims.tokens_per_frame(), d);
        let mut layers = Vec::with_capacity(dims.layer_count);
        for _ in 0..dims.layer_count {
            layers.push(ToyLayerWeights {
                ln1_gain: r.vec(d),
                ln1_bias: r.vec(d),
                w_q: r.mat(d, proj),
                w_k: r.mat(d, proj),
                w_v: r.mat(d, proj),
                w_o: r.mat(proj, d),
                ln2_gain: r.vec(d),
                ln2_bias: r.vec(d),
                w_mlp1: r.mat(d, dims.mlp_hidden),
                w_mlp2: r.mat(dims.mlp_hidden, d),
            });
        }
        let lnf_gain = r.vec(d);
        let lnf_bias = r.vec(d);
        let w_vis = r.mat(d, d);
        let w_text = r.mat(TEXT_BUCKETS, d);
        Ok(ToyWeights {
            dims,
            seed,
            w_patch,
            pos_embed,
            layers,
            lnf_gain,
            lnf_bias,
            w_vis,
            w_text,
            payload,
        })
    }

    /// Serialize to the fixture byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() * 4);
        out.extend_from_slice(FIXTURE_MAGIC);
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in [
            self.dims.layer_count,
            self.dims.embed_dim,
            self.dims.head_count,
            self.dims.head_dim,
            self.dims.grid_rows,
            self.dims.grid_cols,
            self.dims.patch_px_h,
            self.dims.patch_px_w,
            self.dims.native_frame_count,
            self.dims.mlp_hidden,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let corrupt = |message: String| CoreError::CorruptFixture {
            path: path.to_string(),
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(corrupt(format!(
                "file is {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[0..8] != FIXTURE_MAGIC {
            return Err(corrupt("bad magic".to_string()));
        }
        let seed = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut fields = [0usize; 10];
        for (i, f) in fields.iter_mut().enumerate() {
            let at = 16 + 4 * i;
            *f = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let dims = ToyDims {
            layer_count: fields[0],
            embed_dim: fields[1],
            head_count: fields[2],
            head_dim: fields[3],
            grid_rows: fields[4],
            grid_cols: fields[5],
            patch_px_h: fields[6],
            patch_px_w: fields[7],
            native_frame_count: fields[8],
            mlp_hidden: fields[9],
        };
        dims.validate().map_err(|e| corrupt(e.to_string()))?;
        let expected = HEADER_LEN + dims.payload_len() * 4;
        if bytes.len() != expected {
            return Err(corrupt(format!(
                "file is {} bytes, dims require {expected} (missing or extra weights)",
                bytes.len()
            )));
        }
        let payload: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(corrupt("payload contains non-finite weights".to_string()));
        }
        Self::from_payload(dims, seed, payload).map_err(|e| corrupt(e.to_string()))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::CorruptFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Generate a fixture from a seed and write it to `path`.
pub fn write_fixture(seed: u64, dims: ToyDims, path: &Path) -> Result<()> {
    ToyWeights::generate(seed, dims)?.write_to(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = ToyWeights::generate(7, ToyDims::small()).unwrap();
        let b = ToyWeights::generate(7, ToyDims::small()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn different_seeds_differ() {
        let a = ToyWeights::generate(1, ToyDims::small()).unwrap();
        let b = ToyWeights::generate(2, ToyDims::small()).unwrap();
        assert_ne!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let a = ToyWeights::generate(42, ToyDims::small()).unwrap();
        let bytes = a.to_bytes();
        let b = ToyWeights::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(bytes, b.to_bytes());
        assert_eq!(a.dims, b.dims);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let a = ToyWeights::generate(42, ToyDims::small()).unwrap();
        let mut bytes = a.to_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = ToyWeights::from_bytes(&bytes, "mem").unwrap_err();
        assert!(matches!(err, CoreError::CorruptFixture { .. }));
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let a = ToyWeights::generate(42, ToyDims::small()).unwrap();
        let mut bytes = a.to_bytes();
        bytes[0] = b'X';
        assert!(ToyWeights::from_bytes(&bytes, "mem").is_err());
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let dims = ToyDims {
            head_dim: 3,
            ..ToyDims::small()
        };
        assert!(ToyWeights::generate(1, dims).is_err());
    }
}
