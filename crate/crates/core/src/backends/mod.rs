//! Interfaces for the five external model roles, plus deterministic stub
//! implementations (see [`stub`]) and a registry that builds backends from
//! configuration.
//!
//! Real-model adapters (CLIP-style joint embedders, sentence encoders,
//! captioners, detectors, generative answer scorers) live behind these same
//! traits in downstream crates; desk-scale tests never require model
//! weights.

pub mod stub;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{FinevlError, Result};
use crate::model::{DetectedObject, ImageRef};

/// Slot marker used by declarative templates handed to the answer scorer.
/// Adapters map it to their model's own mask token.
pub const SLOT_MARKER: &str = "<slot>";

/// Vector in the joint image-text embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Vector in the sentence-embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentVector(pub Vec<f64>);

impl SentVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Inner product between an image embedding and a text embedding.
pub fn alignment_score(a: &JointVector, b: &JointVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(FinevlError::contract(format!(
            "alignment_score dim mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Cosine similarity between two sentence embeddings.
pub fn cosine(a: &SentVector, b: &SentVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(FinevlError::contract(format!(
            "cosine dim mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(FinevlError::contract("cosine of a zero-norm vector"));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// The five model roles the pipeline consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendRole {
    JointEmbedder,
    SentenceEmbedder,
    Captioner,
    Detector,
    AnswerScorer,
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackendRole::JointEmbedder => "joint_embedder",
            BackendRole::SentenceEmbedder => "sentence_embedder",
            BackendRole::Captioner => "captioner",
            BackendRole::Detector => "detector",
            BackendRole::AnswerScorer => "answer_scorer",
        };
        f.write_str(s)
    }
}

/// Configuration of one backend instance.
///
/// `settings` is an implementation-specific key→value map. Recognized by
/// the stubs: `seed`, `dim`, `normalize`, `fixtures` (path to canned output
/// JSON), `synth_objects` (detector), `fallback` (captioner), `serial`
/// (declare the instance unsafe for concurrent calls; the pipeline then
/// serializes access to it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub role: BackendRole,
    pub implementation: String,
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

impl BackendConfig {
    pub fn new(role: BackendRole, implementation: impl Into<String>) -> Self {
        BackendConfig {
            role,
            implementation: implementation.into(),
            settings: BTreeMap::new(),
        }
    }

    pub fn with_setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.implementation.trim().is_empty() {
            return Err(FinevlError::config(format!(
                "backend {} has an empty implementation id",
                self.role
            )));
        }
        Ok(())
    }

    fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.settings.get(key) {
            Some(v) => v.parse().map_err(|_| {
                FinevlError::config(format!("backend setting {key}={v} is not an integer"))
            }),
            None => Ok(default),
        }
    }

    fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.settings.get(key) {
            Some(v) => v.parse().map_err(|_| {
                FinevlError::config(format!("backend setting {key}={v} is not a boolean"))
            }),
            None => Ok(default),
        }
    }
}

/// Joint image-text embedder (contrastively trained encoder pair).
///
/// Whether vectors are L2-normalized before the dot product is a property
/// of the implementation, declared via the `normalize` setting; the fusion
/// layer treats alignment scores as opaque scalars.
pub trait JointEmbedder: Send + Sync {
    fn embed_image(&self, image: &ImageRef) -> Result<JointVector>;
    fn embed_text(&self, text: &str) -> Result<JointVector>;
    /// Embedding dimensionality; identical for every vector this instance
    /// produces, image or text.
    fn dim(&self) -> usize;
    /// Stable identity string (implementation + version + settings) used
    /// for content-addressed caching.
    fn identity(&self) -> String;
}

/// Sentence encoder used for query/phrase/answer similarity scoring.
pub trait SentenceEmbedder: Send + Sync {
    fn sentence_embed(&self, text: &str) -> Result<SentVector>;
    fn dim(&self) -> usize;
    fn identity(&self) -> String;
}

/// Image captioning model.
pub trait Captioner: Send + Sync {
    fn caption(&self, image: &ImageRef) -> Result<String>;
    fn identity(&self) -> String;
}

/// Object-and-attribute detector.
pub trait Detector: Send + Sync {
    /// Detections with boxes clamped to image bounds; possibly empty.
    fn detect(&self, image: &ImageRef) -> Result<Vec<DetectedObject>>;
    fn identity(&self) -> String;
}

/// Generative scorer that rates answer candidates inserted into a
/// declarative template with one [`SLOT_MARKER`].
///
/// Scores are finite and higher-is-more-plausible. Adapters backed by a
/// generative LM should score a multi-token candidate as the
/// length-normalized sum of its token log-probabilities to avoid a
/// short-answer bias.
pub trait AnswerScorer: Send + Sync {
    fn score_answers(&self, template: &str, candidates: &[String]) -> Result<Vec<f64>>;
    fn identity(&self) -> String;
}

/// Validates the answer-scorer template contract: exactly one slot marker.
pub fn check_template(template: &str) -> Result<()> {
    let occurrences = template.matches(SLOT_MARKER).count();
    if occurrences != 1 {
        return Err(FinevlError::contract(format!(
            "template must contain exactly one {SLOT_MARKER:?} marker, found {occurrences}"
        )));
    }
    Ok(())
}

/// One instance per role, shareable across worker threads.
#[derive(Clone)]
pub struct Backends {
    pub joint: Arc<dyn JointEmbedder>,
    pub sentence: Arc<dyn SentenceEmbedder>,
    pub captioner: Arc<dyn Captioner>,
    pub detector: Arc<dyn Detector>,
    pub answer_scorer: Arc<dyn AnswerScorer>,
}

impl Backends {
    /// All-stub backends with defaults, seeded from `seed`.
    pub fn stub(seed: u64) -> Backends {
        Backends {
            joint: Arc::new(stub::StubJointEmbedder::new(seed, 16, false)),
            sentence: Arc::new(stub::StubSentenceEmbedder::new(seed, 8)),
            captioner: Arc::new(stub::StubCaptioner::new(seed)),
            detector: Arc::new(stub::StubDetector::new(seed, 0)),
            answer_scorer: Arc::new(stub::StubAnswerScorer::new(seed)),
        }
    }

    /// Build backends from per-role configs. Roles without a config fall
    /// back to default stubs seeded from `default_seed`.
    pub fn from_configs(configs: &[BackendConfig], default_seed: u64) -> Result<Backends> {
        for config in configs {
            config.validate()?;
        }
        let find = |role: BackendRole| configs.iter().find(|c| c.role == role);
        let mut backends = Backends::stub(default_seed);

        if let Some(cfg) = find(BackendRole::JointEmbedder) {
            backends.joint = build_joint(cfg, default_seed)?;
        }
        if let Some(cfg) = find(BackendRole::SentenceEmbedder) {
            backends.sentence = build_sentence(cfg, default_seed)?;
        }
        if let Some(cfg) = find(BackendRole::Captioner) {
            backends.captioner = build_captioner(cfg, default_seed)?;
        }
        if let Some(cfg) = find(BackendRole::Detector) {
            backends.detector = build_detector(cfg, default_seed)?;
        }
        if let Some(cfg) = find(BackendRole::AnswerScorer) {
            backends.answer_scorer = build_scorer(cfg, default_seed)?;
        }
        Ok(backends)
    }
}

fn unknown_impl(cfg: &BackendConfig) -> FinevlError {
    FinevlError::config(format!(
        "unknown {} implementation {:?}; this crate ships \"stub\" — real-model \
         adapters plug in through the backend traits",
        cfg.role, cfg.implementation
    ))
}

fn build_joint(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn JointEmbedder>> {
    if cfg.implementation != "stub" {
        return Err(unknown_impl(cfg));
    }
    let stub = stub::StubJointEmbedder::new(
        cfg.get_u64("seed", default_seed)?,
        cfg.get_usize("dim", 16)?,
        cfg.get_bool("normalize", false)?,
    );
    if cfg.get_bool("serial", false)? {
        Ok(Arc::new(SerialJoint::new(stub)))
    } else {
        Ok(Arc::new(stub))
    }
}

fn build_sentence(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn SentenceEmbedder>> {
    if cfg.implementation != "stub" {
        return Err(unknown_impl(cfg));
    }
    let stub = stub::StubSentenceEmbedder::new(
        cfg.get_u64("seed", default_seed)?,
        cfg.get_usize("dim", 8)?,
    );
    if cfg.get_bool("serial", false)? {
        Ok(Arc::new(SerialSentence::new(stub)))
    } else {
        Ok(Arc::new(stub))
    }
}

fn build_captioner(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn Captioner>> {
    if cfg.implementation != "stub" {
        return Err(unknown_impl(cfg));
    }
    let mut stub = stub::StubCaptioner::new(cfg.get_u64("seed", default_seed)?);
    if let Some(fallback) = cfg.settings.get("fallback") {
        stub = stub.with_fallback(fallback);
    }
    if let Some(path) = cfg.settings.get("fixtures") {
        stub.load_fixtures(path)?;
    }
    Ok(Arc::new(stub))
}

fn build_detector(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn Detector>> {
    if cfg.implementation != "stub" {
        return Err(unknown_impl(cfg));
    }
    let mut stub = stub::StubDetector::new(
        cfg.get_u64("seed", default_seed)?,
        cfg.get_usize("synth_objects", 0)?,
    );
    if let Some(path) = cfg.settings.get("fixtures") {
        stub.load_fixtures(path)?;
    }
    Ok(Arc::new(stub))
}

fn build_scorer(cfg: &BackendConfig, default_seed: u64) -> Result<Arc<dyn AnswerScorer>> {
    if cfg.implementation != "stub" {
        return Err(unknown_impl(cfg));
    }
    let mut stub = stub::StubAnswerScorer::new(cfg.get_u64("seed", default_seed)?);
    if let Some(path) = cfg.settings.get("fixtures") {
        stub.load_fixtures(path)?;
    }
    Ok(Arc::new(stub))
}

// Wrappers that serialize calls to backends declaring themselves unsafe
// for concurrent invocation.

macro_rules! serial_wrapper {
    ($name:ident, $trait_:ident, { $($body:tt)* }) => {
        pub struct $name<T: $trait_> {
            inner: T,
            lock: Mutex<()>,
        }

        impl<T: $trait_> $name<T> {
            pub fn new(inner: T) -> Self {
                Self { inner, lock: Mutex::new(()) }
            }
        }

        impl<T: $trait_> $trait_ for $name<T> {
            $($body)*

            fn identity(&self) -> String {
                self.inner.identity()
            }
        }
    };
}

serial_wrapper!(SerialJoint, JointEmbedder, {
    fn embed_image(&self, image: &ImageRef) -> Result<JointVector> {
        let _guard = self.lock.lock().unwrap();
        self.inner.embed_image(image)
    }
    fn embed_text(&self, text: &str) -> Result<JointVector> {
        let _guard = self.lock.lock().unwrap();
        self.inner.embed_text(text)
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
});

serial_wrapper!(SerialSentence, SentenceEmbedder, {
    fn sentence_embed(&self, text: &str) -> Result<SentVector> {
        let _guard = self.lock.lock().unwrap();
        self.inner.sentence_embed(text)
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
});

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_self_inner_product() {
        let v = JointVector(vec![1.0, 1.0]);
        assert_eq!(alignment_score(&v, &v).unwrap(), 2.0);
    }

    #[test]
    fn alignment_orthogonal_unit_vectors() {
        let a = JointVector(vec![1.0, 0.0]);
        let b = JointVector(vec![0.0, 1.0]);
        assert_eq!(alignment_score(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn alignment_hand_arithmetic() {
        let a = JointVector(vec![1.0, 2.0]);
        let b = JointVector(vec![3.0, 4.0]);
        assert_eq!(alignment_score(&a, &b).unwrap(), 11.0);
    }

    #[test]
    fn alignment_dim_mismatch_is_contract_error() {
        let a = JointVector(vec![1.0]);
        let b = JointVector(vec![1.0, 2.0]);
        assert!(matches!(
            alignment_score(&a, &b),
            Err(FinevlError::Contract(_))
        ));
    }

    #[test]
    fn cosine_identity_orthogonal_and_hand_case() {
        let v = SentVector(vec![0.3, -0.7, 2.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let a = SentVector(vec![1.0, 0.0]);
        let b = SentVector(vec![0.0, 1.0]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        let c = SentVector(vec![1.0, 1.0]);
        let d = SentVector(vec![1.0, 0.0]);
        assert!((cosine(&c, &d).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cosine_zero_norm_is_contract_error() {
        let a = SentVector(vec![0.0, 0.0]);
        let b = SentVector(vec![1.0, 0.0]);
        assert!(matches!(cosine(&a, &b), Err(FinevlError::Contract(_))));
    }

    #[test]
    fn template_check() {
        assert!(check_template("The car is <slot>").is_ok());
        assert!(check_template("no marker here").is_err());
        assert!(check_template("<slot> twice <slot>").is_err());
    }

    #[test]
    fn registry_rejects_unknown_implementation() {
        let cfg = BackendConfig::new(BackendRole::JointEmbedder, "clip-vit-b16");
        let err = Backends::from_configs(&[cfg], 0).unwrap_err();
        assert!(matches!(err, FinevlError::Config(_)));
    }

    #[test]
    fn registry_builds_configured_stub() {
        let cfg = BackendConfig::new(BackendRole::JointEmbedder, "stub")
            .with_setting("dim", 32)
            .with_setting("seed", 7);
        let backends = Backends::from_configs(&[cfg], 0).unwrap();
        assert_eq!(backends.joint.dim(), 32);
        // Unconfigured roles fall back to default stubs.
        assert_eq!(backends.sentence.dim(), 8);
    }

    #[test]
    fn serial_wrapper_preserves_results() {
        let plain = stub::StubJointEmbedder::new(3, 16, false);
        let serial = SerialJoint::new(stub::StubJointEmbedder::new(3, 16, false));
        let image = ImageRef::stub("img", 64, 64);
        assert_eq!(
            plain.embed_image(&image).unwrap(),
            serial.embed_image(&image).unwrap()
        );
    }
}
