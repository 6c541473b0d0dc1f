//! Deterministic stub backends.
//!
//! Every stub is a pure function of (instance seed, input digest): outputs
//! are bit-identical across processes and machines, which is what the
//! golden pipeline tests rely on. Vectors come from a named, versioned
//! pseudo-random expansion ([`EXPANSION_VERSION`]) of a 64-bit content
//! hash; captions, detections and answer scores can additionally be canned
//! per input via JSON fixture files.

use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;

use super::{
    check_template, AnswerScorer, Captioner, Detector, JointEmbedder, JointVector,
    SentenceEmbedder, SentVector,
};
use crate::error::{FinevlError, Result};
use crate::model::{DetectedObject, ImageRef, PixelBox};

/// Version tag of the hash-expansion scheme. Bump when the expansion
/// changes so cached stub outputs are invalidated.
pub const EXPANSION_VERSION: &str = "splitmix64-v1";

/// FNV-1a over raw bytes; the 64-bit content hash all stubs key on.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold several hash words into one stream seed.
fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        state ^= p;
        splitmix64(&mut state);
    }
    state
}

/// Expand a seed into `dim` reals uniform in [-1, 1].
pub fn expand_hash(seed: u64, dim: usize) -> Vec<f64> {
    let mut state = seed;
    (0..dim)
        .map(|_| {
            let bits = splitmix64(&mut state);
            ((bits >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Content digest of an image locator.
///
/// Synthetic refs (any `scheme:` prefix, e.g. `stub:`) hash the locator
/// string itself; plain paths hash the file bytes and must be readable.
/// The crop suffix participates in the digest either way, so a crop and
/// its parent image never collide.
pub fn image_digest(image: &ImageRef) -> Result<u64> {
    let base = image.base();
    let synthetic = base
        .split_once(':')
        .map(|(scheme, _)| {
            !scheme.is_empty()
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "+.-".contains(c))
        })
        .unwrap_or(false);
    let mut digest = if synthetic {
        fnv1a64(base.as_bytes())
    } else {
        let bytes = std::fs::read(base)
            .map_err(|e| FinevlError::input(format!("unreadable image {base:?}: {e}")))?;
        fnv1a64(&bytes)
    };
    if let Some((x, y, w, h)) = image.crop_rect() {
        digest = mix(&[
            digest,
            u64::from(x),
            u64::from(y),
            u64::from(w),
            u64::from(h),
        ]);
    }
    Ok(digest)
}

fn require_text(text: &str, role: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(FinevlError::input(format!("{role}: empty text input")));
    }
    Ok(())
}

/// Hash-seeded joint embedder. Image and text streams are domain-separated
/// so an image and a text with equal digests still embed differently.
pub struct StubJointEmbedder {
    seed: u64,
    dim: usize,
    normalize: bool,
}

impl StubJointEmbedder {
    pub fn new(seed: u64, dim: usize, normalize: bool) -> Self {
        StubJointEmbedder {
            seed,
            dim: dim.max(1),
            normalize,
        }
    }

    fn finish(&self, mut values: Vec<f64>) -> JointVector {
        if self.normalize {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut values {
                    *v /= norm;
                }
            }
        }
        JointVector(values)
    }
}

impl JointEmbedder for StubJointEmbedder {
    fn embed_image(&self, image: &ImageRef) -> Result<JointVector> {
        let digest = image_digest(image)?;
        let seed = mix(&[self.seed, fnv1a64(b"joint/image"), digest]);
        Ok(self.finish(expand_hash(seed, self.dim)))
    }

    fn embed_text(&self, text: &str) -> Result<JointVector> {
        require_text(text, "joint_embedder")?;
        let seed = mix(&[self.seed, fnv1a64(b"joint/text"), fnv1a64(text.as_bytes())]);
        Ok(self.finish(expand_hash(seed, self.dim)))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!(
            "stub-joint/{EXPANSION_VERSION}/seed={},dim={},normalize={}",
            self.seed, self.dim, self.normalize
        )
    }
}

/// Hash-seeded sentence embedder; every output has non-zero norm.
pub struct StubSentenceEmbedder {
    seed: u64,
    dim: usize,
}

impl StubSentenceEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        StubSentenceEmbedder {
            seed,
            dim: dim.max(1),
        }
    }
}

impl SentenceEmbedder for StubSentenceEmbedder {
    fn sentence_embed(&self, text: &str) -> Result<SentVector> {
        require_text(text, "sentence_embedder")?;
        let seed = mix(&[self.seed, fnv1a64(b"sentence"), fnv1a64(text.as_bytes())]);
        let mut values = expand_hash(seed, self.dim);
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            values[0] = 1.0;
        }
        Ok(SentVector(values))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!(
            "stub-sentence/{EXPANSION_VERSION}/seed={},dim={}",
            self.seed, self.dim
        )
    }
}

#[derive(Deserialize, Default)]
struct FixtureFile {
    #[serde(default)]
    captions: HashMap<String, String>,
    #[serde(default)]
    detections: HashMap<String, Vec<DetectedObject>>,
    #[serde(default)]
    answer_scores: HashMap<String, f64>,
}

fn read_fixtures(path: &str) -> Result<FixtureFile> {
    let text = std::fs::read_to_string(path).map_err(|e| FinevlError::io(path, e))?;
    serde_json::from_str(&text).map_err(FinevlError::from)
}

/// Fixture keys may be raw 16-hex-digit digests or image locator strings.
fn key_digest(key: &str) -> u64 {
    if key.len() == 16 && key.chars().all(|c| c.is_ascii_hexdigit()) {
        if let Ok(d) = u64::from_str_radix(key, 16) {
            return d;
        }
    }
    image_digest(&ImageRef::new(key)).unwrap_or_else(|_| fnv1a64(key.as_bytes()))
}

/// Captioner with a canned digest→caption map and a fixed fallback.
pub struct StubCaptioner {
    seed: u64,
    canned: HashMap<u64, String>,
    fallback: String,
}

impl StubCaptioner {
    pub fn new(seed: u64) -> Self {
        StubCaptioner {
            seed,
            canned: HashMap::new(),
            fallback: "an image".to_string(),
        }
    }

    pub fn with_fallback(mut self, fallback: &str) -> Self {
        self.fallback = fallback.to_string();
        self
    }

    pub fn with_caption(mut self, image: &ImageRef, caption: &str) -> Self {
        if let Ok(digest) = image_digest(image) {
            self.canned.insert(digest, caption.to_string());
        }
        self
    }

    pub fn load_fixtures(&mut self, path: &str) -> Result<()> {
        for (key, caption) in read_fixtures(path)?.captions {
            self.canned.insert(key_digest(&key), caption);
        }
        Ok(())
    }
}

impl Captioner for StubCaptioner {
    fn caption(&self, image: &ImageRef) -> Result<String> {
        let digest = image_digest(image)?;
        Ok(self
            .canned
            .get(&digest)
            .cloned()
            .unwrap_or_else(|| self.fallback.clone()))
    }

    fn identity(&self) -> String {
        format!(
            "stub-captioner/{EXPANSION_VERSION}/seed={},canned={}",
            self.seed,
            self.canned.len()
        )
    }
}

const SYNTH_CATEGORIES: [&str; 16] = [
    "person", "dog", "cat", "car", "table", "chair", "pizza", "tree", "bicycle", "bird", "flower",
    "cup", "hat", "ball", "book", "sign",
];

const SYNTH_ATTRIBUTES: [&str; 12] = [
    "red", "blue", "green", "yellow", "white", "black", "small", "large", "wooden", "striped",
    "shiny", "old",
];

/// Detector with canned digest→detections; unmapped images yield either an
/// empty scene (default) or `synth_objects` deterministic objects.
pub struct StubDetector {
    seed: u64,
    canned: HashMap<u64, Vec<DetectedObject>>,
    synth_objects: usize,
}

impl StubDetector {
    pub fn new(seed: u64, synth_objects: usize) -> Self {
        StubDetector {
            seed,
            canned: HashMap::new(),
            synth_objects,
        }
    }

    pub fn with_detections(mut self, image: &ImageRef, objects: Vec<DetectedObject>) -> Self {
        if let Ok(digest) = image_digest(image) {
            self.canned.insert(digest, objects);
        }
        self
    }

    pub fn load_fixtures(&mut self, path: &str) -> Result<()> {
        for (key, objects) in read_fixtures(path)?.detections {
            self.canned.insert(key_digest(&key), objects);
        }
        Ok(())
    }

    fn synthesize(&self, digest: u64, width: f64, height: f64) -> Vec<DetectedObject> {
        let mut state = mix(&[self.seed, fnv1a64(b"detector"), digest]);
        (0..self.synth_objects)
            .map(|_| {
                let r = |state: &mut u64| (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64;
                let x = r(&mut state) * width * 0.5;
                let y = r(&mut state) * height * 0.5;
                let w = (r(&mut state) * width * 0.5).max(1.0);
                let h = (r(&mut state) * height * 0.5).max(1.0);
                let category =
                    SYNTH_CATEGORIES[(splitmix64(&mut state) % SYNTH_CATEGORIES.len() as u64) as usize];
                let attribute =
                    SYNTH_ATTRIBUTES[(splitmix64(&mut state) % SYNTH_ATTRIBUTES.len() as u64) as usize];
                let confidence = 0.3 + r(&mut state) * 0.7;
                let pixel_box = PixelBox::new(x, y, w, h)
                    .clamp_to(width, height)
                    .unwrap_or(PixelBox::new(0.0, 0.0, width, height));
                DetectedObject::new(pixel_box, category, confidence).with_attribute(attribute)
            })
            .collect()
    }
}

impl Detector for StubDetector {
    fn detect(&self, image: &ImageRef) -> Result<Vec<DetectedObject>> {
        let digest = image_digest(image)?;
        if let Some(objects) = self.canned.get(&digest) {
            return Ok(objects.clone());
        }
        if self.synth_objects == 0 {
            return Ok(Vec::new());
        }
        let (width, height) = image
            .dims()
            .map(|(w, h)| (f64::from(w), f64::from(h)))
            .unwrap_or((224.0, 224.0));
        Ok(self.synthesize(digest, width, height))
    }

    fn identity(&self) -> String {
        format!(
            "stub-detector/{EXPANSION_VERSION}/seed={},canned={},synth={}",
            self.seed,
            self.canned.len(),
            self.synth_objects
        )
    }
}

/// Answer scorer with canned per-candidate scores; unmapped candidates get
/// a hash score from (template, candidate), independent of position.
pub struct StubAnswerScorer {
    seed: u64,
    canned: HashMap<String, f64>,
}

impl StubAnswerScorer {
    pub fn new(seed: u64) -> Self {
        StubAnswerScorer {
            seed,
            canned: HashMap::new(),
        }
    }

    pub fn with_score(mut self, candidate: &str, score: f64) -> Self {
        self.canned.insert(candidate.to_string(), score);
        self
    }

    pub fn load_fixtures(&mut self, path: &str) -> Result<()> {
        for (candidate, score) in read_fixtures(path)?.answer_scores {
            self.canned.insert(candidate, score);
        }
        Ok(())
    }
}

impl AnswerScorer for StubAnswerScorer {
    fn score_answers(&self, template: &str, candidates: &[String]) -> Result<Vec<f64>> {
        check_template(template)?;
        if candidates.is_empty() {
            return Err(FinevlError::contract("score_answers: empty candidate list"));
        }
        let template_digest = fnv1a64(template.as_bytes());
        Ok(candidates
            .iter()
            .map(|candidate| {
                if let Some(&score) = self.canned.get(candidate) {
                    return score;
                }
                let seed = mix(&[
                    self.seed,
                    fnv1a64(b"answer_scorer"),
                    template_digest,
                    fnv1a64(candidate.as_bytes()),
                ]);
                expand_hash(seed, 1)[0]
            })
            .collect())
    }

    fn identity(&self) -> String {
        format!(
            "stub-scorer/{EXPANSION_VERSION}/seed={},canned={}",
            self.seed,
            self.canned.len()
        )
    }
}

/// Convenience used by fixture tooling: digest of a locator as lowercase hex.
pub fn digest_hex(image: &ImageRef) -> Result<String> {
    Ok(format!("{:016x}", image_digest(image)?))
}

#[allow(dead_code)]
fn _assert_object_safe(_: &dyn Detector, _: &dyn Captioner, _: &dyn AnswerScorer) {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{alignment_score, cosine};

    #[test]
    fn joint_embedding_is_deterministic() {
        let stub = StubJointEmbedder::new(0, 16, false);
        let image = ImageRef::stub("img-a", 64, 64);
        assert_eq!(
            stub.embed_image(&image).unwrap(),
            stub.embed_image(&image).unwrap()
        );
        assert_eq!(stub.embed_image(&image).unwrap().dim(), 16);
    }

    #[test]
    fn distinct_images_are_not_collinear() {
        let stub = StubJointEmbedder::new(0, 16, true);
        let a = stub.embed_image(&ImageRef::stub("img-a", 64, 64)).unwrap();
        let b = stub.embed_image(&ImageRef::stub("img-b", 64, 64)).unwrap();
        let cos = alignment_score(&a, &b).unwrap(); // normalized, so dot = cosine
        assert!(cos < 1.0 - 1e-6, "cosine {cos} too close to 1");
    }

    #[test]
    fn text_embedding_matches_paired_image_dim() {
        let stub = StubJointEmbedder::new(1, 24, false);
        let v_img = stub.embed_image(&ImageRef::stub("x", 10, 10)).unwrap();
        let v_txt = stub.embed_text("a dog").unwrap();
        assert_eq!(v_img.dim(), v_txt.dim());
        assert_eq!(stub.embed_text("a dog").unwrap(), v_txt);
    }

    #[test]
    fn empty_text_is_input_error() {
        let stub = StubJointEmbedder::new(0, 16, false);
        assert!(matches!(stub.embed_text("  "), Err(FinevlError::Input(_))));
        let sent = StubSentenceEmbedder::new(0, 8);
        assert!(matches!(
            sent.sentence_embed(""),
            Err(FinevlError::Input(_))
        ));
    }

    #[test]
    fn sentence_embedding_shape_and_nonzero_norm() {
        let stub = StubSentenceEmbedder::new(0, 8);
        let v = stub.sentence_embed("x").unwrap();
        assert_eq!(v.dim(), 8);
        assert!(v.norm() > 0.0);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crop_digest_differs_from_parent() {
        let base = ImageRef::stub("img", 100, 100);
        let crop = base.with_crop(0, 0, 50, 50);
        assert_ne!(image_digest(&base).unwrap(), image_digest(&crop).unwrap());
    }

    #[test]
    fn missing_file_is_input_error() {
        let result = image_digest(&ImageRef::new("/nonexistent/image.jpg"));
        match result {
            Err(FinevlError::Input(msg)) => assert!(msg.contains("/nonexistent/image.jpg")),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn captioner_mapping_and_fallback() {
        let pizza = ImageRef::stub("pizza", 64, 64);
        let stub = StubCaptioner::new(0).with_caption(&pizza, "a pizza on a table");
        assert_eq!(stub.caption(&pizza).unwrap(), "a pizza on a table");
        let other = ImageRef::stub("other", 64, 64);
        assert_eq!(stub.caption(&other).unwrap(), "an image");
    }

    #[test]
    fn detector_canned_and_empty_scene() {
        let scene = ImageRef::stub("scene", 640, 480);
        let objects = vec![DetectedObject::new(
            PixelBox::new(0.0, 0.0, 10.0, 10.0),
            "dog",
            0.8,
        )];
        let stub = StubDetector::new(0, 0).with_detections(&scene, objects.clone());
        assert_eq!(stub.detect(&scene).unwrap(), objects);
        assert!(stub
            .detect(&ImageRef::stub("empty", 64, 64))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn detector_synthesizes_in_bounds() {
        let stub = StubDetector::new(9, 5);
        let image = ImageRef::stub("busy", 320, 240);
        let objects = stub.detect(&image).unwrap();
        assert_eq!(objects.len(), 5);
        for obj in &objects {
            assert!(obj.pixel_box.x >= 0.0 && obj.pixel_box.y >= 0.0);
            assert!(obj.pixel_box.x + obj.pixel_box.w <= 320.0);
            assert!(obj.pixel_box.y + obj.pixel_box.h <= 240.0);
            assert!((0.0..=1.0).contains(&obj.confidence));
            assert!(!obj.category.is_empty());
        }
        assert_eq!(stub.detect(&image).unwrap(), objects);
    }

    #[test]
    fn scorer_canned_scores_in_candidate_order() {
        let stub = StubAnswerScorer::new(0)
            .with_score("red", 0.9)
            .with_score("blue", 0.1);
        let scores = stub
            .score_answers(
                "The car is <slot>",
                &["blue".to_string(), "red".to_string()],
            )
            .unwrap();
        assert_eq!(scores, vec![0.1, 0.9]);
    }

    #[test]
    fn scorer_single_candidate() {
        let stub = StubAnswerScorer::new(0);
        let scores = stub
            .score_answers("It is <slot>", &["one".to_string()])
            .unwrap();
        assert_eq!(scores.len(), 1);
        assert!(scores[0].is_finite());
    }

    #[test]
    fn scorer_is_permutation_equivariant() {
        let stub = StubAnswerScorer::new(4);
        let a = ["x".to_string(), "y".to_string(), "z".to_string()];
        let b = ["z".to_string(), "x".to_string(), "y".to_string()];
        let sa = stub.score_answers("T is <slot>", &a).unwrap();
        let sb = stub.score_answers("T is <slot>", &b).unwrap();
        assert_eq!(sa[0], sb[1]);
        assert_eq!(sa[1], sb[2]);
        assert_eq!(sa[2], sb[0]);
    }

    #[test]
    fn scorer_rejects_missing_marker() {
        let stub = StubAnswerScorer::new(0);
        assert!(matches!(
            stub.score_answers("no marker", &["a".to_string()]),
            Err(FinevlError::Contract(_))
        ));
    }
}
