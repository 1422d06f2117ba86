//! Patch-token similarity against the prompt embedding.

use grounder_core::backbone::{Backbone, FrameMode, TextEmbedding, ToyBackbone, ToyDims};
use grounder_core::error::CoreError;
use grounder_core::grounding::patch_text_similarity;
use grounder_core::testkit::{synth_batch, TestRng};

fn scalar_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn embedding(vector: Vec<f64>) -> TextEmbedding {
    TextEmbedding {
        vector,
        source_prompt: "probe".to_string(),
    }
}

#[test]
fn parallel_projected_token_scores_one() {
    let bb = ToyBackbone::generate(88, ToyDims::small()).unwrap();
    let batch = synth_batch(8, 8, 2, FrameMode::Video);
    let trace = bb.forward_with_trace(&batch).unwrap();
    let tokens = trace.final_output().clone();
    // take a projected patch token (CLS is row 0) and scale it: cosine with
    // itself is exactly 1 up to rounding
    let projected = trace.final_projection.apply(&tokens);
    let e = embedding(projected.row(3).iter().map(|v| v * 2.5).collect());
    let field = patch_text_similarity(&tokens, &e, &trace).unwrap();
    assert!((field.scores[2] - 1.0).abs() < 1e-12);
    assert!(field.scores.iter().all(|s| (-1.0 - 1e-12..=1.0 + 1e-12).contains(s)));
}

#[test]
fn orthogonal_projected_token_scores_zero() {
    let bb = ToyBackbone::generate(89, ToyDims::small()).unwrap();
    let batch = synth_batch(8, 8, 1, FrameMode::Video);
    let trace = bb.forward_with_trace(&batch).unwrap();
    let tokens = trace.final_output().clone();
    let projected = trace.final_projection.apply(&tokens);
    // Gram-Schmidt an arbitrary vector against the first patch token's
    // projection
    let target = projected.row(1);
    let mut rng = TestRng::new(5);
    let probe = rng.vec(target.len(), -1.0, 1.0);
    let dot: f64 = probe.iter().zip(target).map(|(a, b)| a * b).sum();
    let norm2: f64 = target.iter().map(|v| v * v).sum();
    let ortho: Vec<f64> = probe
        .iter()
        .zip(target)
        .map(|(p, t)| p - dot / norm2 * t)
        .collect();
    let field = patch_text_similarity(&tokens, &embedding(ortho), &trace).unwrap();
    assert!(field.scores[0].abs() < 1e-10);
}

#[test]
fn random_tokens_match_scalar_cosine_oracle() {
    let bb = ToyBackbone::generate(90, ToyDims::small()).unwrap();
    let batch = synth_batch(8, 8, 1, FrameMode::Video);
    let trace = bb.forward_with_trace(&batch).unwrap();
    let tokens = trace.final_output().clone();
    let mut rng = TestRng::new(17);
    let e = embedding(rng.vec(8, -1.0, 1.0));
    let field = patch_text_similarity(&tokens, &e, &trace).unwrap();
    assert_eq!(field.scores.len(), 4);
    let projected = trace.final_projection.apply(&tokens);
    for (i, score) in field.scores.iter().enumerate() {
        let want = scalar_cosine(projected.row(i + 1), &e.vector);
        assert!((score - want).abs() < 1e-7, "token {i}: {score} vs {want}");
    }
}

#[test]
fn dimension_mismatch_rejected() {
    let bb = ToyBackbone::generate(91, ToyDims::small()).unwrap();
    let batch = synth_batch(8, 8, 1, FrameMode::Video);
    let trace = bb.forward_with_trace(&batch).unwrap();
    let tokens = trace.final_output().clone();
    let err = patch_text_similarity(&tokens, &embedding(vec![1.0; 5]), &trace).unwrap_err();
    assert!(matches!(err, CoreError::ShapeMismatch { .. }));
}
