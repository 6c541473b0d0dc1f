//! Shared domain types and validation used by every other module.
//!
//! All types here are immutable values after construction and safe to share
//! across concurrent workers. The canonical interchange format is one JSON
//! object per line (JSONL) with the [`Sample`] fields.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::{FinevlError, Result};

/// The evaluation task a sample belongs to. VQA subtypes come from the
/// dataset's answer-type annotation, never from question-text heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    VqaYesNo,
    VqaNumber,
    VqaOther,
    VcrQ2a,
    VcrQa2r,
    SnliVe,
}

impl TaskKind {
    pub fn is_vqa(self) -> bool {
        matches!(
            self,
            TaskKind::VqaYesNo | TaskKind::VqaNumber | TaskKind::VqaOther
        )
    }

    pub fn is_vcr(self) -> bool {
        matches!(self, TaskKind::VcrQ2a | TaskKind::VcrQa2r)
    }

    /// Task family used for report grouping: "vqa", "vcr" or "snli_ve".
    pub fn family(self) -> &'static str {
        match self {
            TaskKind::VqaYesNo | TaskKind::VqaNumber | TaskKind::VqaOther => "vqa",
            TaskKind::VcrQ2a | TaskKind::VcrQa2r => "vcr",
            TaskKind::SnliVe => "snli_ve",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::VqaYesNo => "vqa_yes_no",
            TaskKind::VqaNumber => "vqa_number",
            TaskKind::VqaOther => "vqa_other",
            TaskKind::VcrQ2a => "vcr_q2a",
            TaskKind::VcrQa2r => "vcr_qa2r",
            TaskKind::SnliVe => "snli_ve",
        };
        f.write_str(s)
    }
}

/// Three-way visual entailment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntailmentLabel {
    Contradiction,
    Neutral,
    Entailment,
}

impl EntailmentLabel {
    pub const ALL: [EntailmentLabel; 3] = [
        EntailmentLabel::Contradiction,
        EntailmentLabel::Neutral,
        EntailmentLabel::Entailment,
    ];

    /// Short table key: "C", "N" or "E".
    pub fn letter(self) -> &'static str {
        match self {
            EntailmentLabel::Contradiction => "C",
            EntailmentLabel::Neutral => "N",
            EntailmentLabel::Entailment => "E",
        }
    }

    /// Accepts full words (any case) and single letters.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "contradiction" | "c" => Ok(EntailmentLabel::Contradiction),
            "neutral" | "n" => Ok(EntailmentLabel::Neutral),
            "entailment" | "e" => Ok(EntailmentLabel::Entailment),
            other => Err(FinevlError::input(format!(
                "unknown entailment label {other:?}"
            ))),
        }
    }
}

/// Axis-aligned box in pixel coordinates, `(x, y, w, h)` with the origin at
/// the top-left corner. All loaders convert into this form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection with image bounds `(width, height)`; `None` when the
    /// clamped box has zero area.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<PixelBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width);
        let y1 = (self.y + self.h).min(height);
        if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
            return None;
        }
        Some(PixelBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// One detector output: a box plus its category/attribute labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    #[serde(rename = "box")]
    pub pixel_box: PixelBox,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub confidence: f64,
}

impl DetectedObject {
    pub fn new(pixel_box: PixelBox, category: impl Into<String>, confidence: f64) -> Self {
        DetectedObject {
            pixel_box,
            category: category.into(),
            attribute: None,
            confidence,
        }
    }

    pub fn with_attribute(mut self, attribute: impl Into<String>) -> Self {
        self.attribute = Some(attribute.into());
        self
    }
}

/// Opaque image locator. Supported forms:
///
/// - `stub:<name>` or `stub:<name>?w=W&h=H` — synthetic image for stub
///   backends; optional explicit dimensions.
/// - anything else — a filesystem path; dimensions are read from the file
///   header when cropping needs them.
///
/// A crop suffix `#crop=x,y,w,h` (integer pixels) designates a sub-image.
/// Backends own pixel access; this type is pure locator arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(String);

impl ImageRef {
    pub fn new(locator: impl Into<String>) -> Self {
        ImageRef(locator.into())
    }

    /// Synthetic stub image with explicit dimensions.
    pub fn stub(name: &str, width: u32, height: u32) -> Self {
        ImageRef(format!("stub:{name}?w={width}&h={height}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Locator without the crop suffix.
    pub fn base(&self) -> &str {
        match self.0.find("#crop=") {
            Some(idx) => &self.0[..idx],
            None => &self.0,
        }
    }

    pub fn crop_rect(&self) -> Option<(u32, u32, u32, u32)> {
        let idx = self.0.find("#crop=")?;
        let spec = &self.0[idx + "#crop=".len()..];
        let mut parts = spec.split(',').map(|p| p.parse::<u32>().ok());
        match (
            parts.next().flatten(),
            parts.next().flatten(),
            parts.next().flatten(),
            parts.next().flatten(),
        ) {
            (Some(x), Some(y), Some(w), Some(h)) => Some((x, y, w, h)),
            _ => None,
        }
    }

    pub fn with_crop(&self, x: u32, y: u32, w: u32, h: u32) -> ImageRef {
        ImageRef(format!("{}#crop={x},{y},{w},{h}", self.base()))
    }

    /// Pixel dimensions when they can be determined without decoding the
    /// full image: crop rects carry their own size, stub refs may declare
    /// `w`/`h` query params, file refs are probed via the format header.
    pub fn dims(&self) -> Option<(u32, u32)> {
        if let Some((_, _, w, h)) = self.crop_rect() {
            return Some((w, h));
        }
        let base = self.base();
        if let Some(rest) = base.strip_prefix("stub:") {
            let query = rest.split_once('?').map(|(_, q)| q)?;
            let mut w = None;
            let mut h = None;
            for pair in query.split('&') {
                match pair.split_once('=') {
                    Some(("w", v)) => w = v.parse().ok(),
                    Some(("h", v)) => h = v.parse().ok(),
                    _ => {}
                }
            }
            return Some((w?, h?));
        }
        if Path::new(base).is_file() {
            return image::image_dimensions(base).ok();
        }
        None
    }

    pub fn is_stub(&self) -> bool {
        self.base().starts_with("stub:")
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        ImageRef::new(s)
    }
}

/// Task-specific ground truth attached to a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The ten human answers of a VQA question.
    VqaAnswers(Vec<String>),
    /// Index of the correct candidate (VCR).
    VcrIndex(usize),
    /// Gold entailment label (SNLI-VE).
    Entailment(EntailmentLabel),
}

/// One evaluation unit: an image, a query and (for QA tasks) its candidate
/// answers, plus whatever ground-truth annotations the dataset provides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task: TaskKind,
    pub image_ref: ImageRef,
    /// Question for VQA/VCR, hypothesis for SNLI-VE. For VCR rationale
    /// selection this is the gold answer text.
    pub query: String,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided_caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided_boxes: Option<Vec<DetectedObject>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
}

/// Per-candidate score components gathered before fusion. All four arrays
/// share the candidate count; cosine-derived entries lie in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub s_clip_global: Vec<f64>,
    pub s_clip_region: Vec<f64>,
    pub s_question: Vec<f64>,
    pub s_caption: Vec<f64>,
}

impl ScoreBundle {
    pub fn zeros(n: usize) -> Self {
        ScoreBundle {
            s_clip_global: vec![0.0; n],
            s_clip_region: vec![0.0; n],
            s_question: vec![0.0; n],
            s_caption: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.s_clip_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_clip_global.is_empty()
    }

    pub fn is_rectangular(&self) -> bool {
        let n = self.s_clip_global.len();
        self.s_clip_region.len() == n && self.s_question.len() == n && self.s_caption.len() == n
    }
}

/// Ensemble coefficients plus the region and answer-filter budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub n_regions: usize,
    pub top_k: usize,
}

impl FusionWeights {
    pub fn new(k1: f64, k2: f64, k3: f64, n_regions: usize, top_k: usize) -> Self {
        FusionWeights {
            k1,
            k2,
            k3,
            n_regions,
            top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k1", self.k1), ("k2", self.k2), ("k3", self.k3)] {
            if !k.is_finite() || k < 0.0 {
                return Err(FinevlError::contract(format!(
                    "weight {name} must be a non-negative finite number, got {k}"
                )));
            }
        }
        if self.top_k < 1 {
            return Err(FinevlError::contract("top_k must be >= 1"));
        }
        Ok(())
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        // k1 = k2 = k3 = 1.0 unless configured otherwise.
        FusionWeights::new(1.0, 1.0, 1.0, 5, 10)
    }
}

/// Three ordered scalar centroids for one score channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub c_contradiction: f64,
    pub c_neutral: f64,
    pub c_entailment: f64,
}

impl CentroidSet {
    pub fn new(c_contradiction: f64, c_neutral: f64, c_entailment: f64) -> Self {
        CentroidSet {
            c_contradiction,
            c_neutral,
            c_entailment,
        }
    }

    pub fn get(&self, label: EntailmentLabel) -> f64 {
        match label {
            EntailmentLabel::Contradiction => self.c_contradiction,
            EntailmentLabel::Neutral => self.c_neutral,
            EntailmentLabel::Entailment => self.c_entailment,
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.c_contradiction <= self.c_neutral && self.c_neutral <= self.c_entailment
    }
}

/// The label a prediction assigns to its sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLabel {
    Index(usize),
    Entailment(EntailmentLabel),
}

/// Final per-sample output: the chosen label plus the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub label: PredictedLabel,
    /// Resolved answer text for candidate tasks (what the index points at).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub totals: Vec<f64>,
    pub weights: FusionWeights,
}

/// Checks every `Sample` invariant and returns human-readable descriptions
/// of the violations; empty means the sample is well-formed. Pure: never
/// mutates its input.
pub fn validate_sample(sample: &Sample) -> Vec<String> {
    let mut violations = Vec::new();
    if sample.id.trim().is_empty() {
        violations.push("sample id is empty".to_string());
    }
    if sample.query.trim().is_empty() {
        violations.push("query is empty".to_string());
    }
    match sample.task {
        TaskKind::VcrQ2a | TaskKind::VcrQa2r => {
            if sample.candidates.len() != 4 {
                violations.push(format!("candidate count {} ≠ 4", sample.candidates.len()));
            }
        }
        TaskKind::SnliVe => {
            if !sample.candidates.is_empty() {
                violations.push("SNLI-VE must have 0 candidates".to_string());
            }
        }
        _ => {}
    }
    match (&sample.reference, sample.task) {
        (Some(Reference::VqaAnswers(answers)), t) if t.is_vqa() => {
            if answers.len() != 10 {
                violations.push(format!(
                    "VQA reference has {} answers, expected 10",
                    answers.len()
                ));
            }
        }
        (Some(Reference::VqaAnswers(_)), _) => {
            violations.push("VQA answer reference on a non-VQA sample".to_string());
        }
        (Some(Reference::VcrIndex(idx)), t) if t.is_vcr() => {
            if *idx >= sample.candidates.len().max(1) {
                violations.push(format!("VCR gold index {idx} out of range"));
            }
        }
        (Some(Reference::VcrIndex(_)), _) => {
            violations.push("VCR index reference on a non-VCR sample".to_string());
        }
        (Some(Reference::Entailment(_)), TaskKind::SnliVe) => {}
        (Some(Reference::Entailment(_)), _) => {
            violations.push("entailment reference on a non-SNLI-VE sample".to_string());
        }
        (None, _) => {}
    }
    if let Some(boxes) = &sample.provided_boxes {
        for (i, obj) in boxes.iter().enumerate() {
            if obj.category.trim().is_empty() {
                violations.push(format!("provided box {i} has an empty category"));
            }
            if !(0.0..=1.0).contains(&obj.confidence) {
                violations.push(format!(
                    "provided box {i} confidence {} outside [0,1]",
                    obj.confidence
                ));
            }
        }
    }
    violations
}

/// Serialize samples to the canonical JSONL interchange format.
pub fn samples_to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&serde_json::to_string(sample)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse samples from JSONL; blank lines are skipped.
pub fn samples_from_jsonl(text: &str) -> Result<Vec<Sample>> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(FinevlError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vcr_sample(n_candidates: usize) -> Sample {
        Sample {
            id: "vcr-1".into(),
            task: TaskKind::VcrQ2a,
            image_ref: ImageRef::stub("scene", 640, 480),
            query: "Why is Riley smiling?".into(),
            candidates: (0..n_candidates).map(|i| format!("answer {i}")).collect(),
            provided_caption: None,
            provided_boxes: None,
            reference: Some(Reference::VcrIndex(0)),
        }
    }

    #[test]
    fn well_formed_vcr_sample_passes() {
        assert!(validate_sample(&vcr_sample(4)).is_empty());
    }

    #[test]
    fn vcr_sample_with_three_candidates_flagged() {
        let violations = validate_sample(&vcr_sample(3));
        assert_eq!(violations, vec!["candidate count 3 ≠ 4".to_string()]);
    }

    #[test]
    fn snli_ve_sample_with_candidates_flagged() {
        let sample = Sample {
            id: "ve-1".into(),
            task: TaskKind::SnliVe,
            image_ref: ImageRef::stub("beach", 320, 240),
            query: "Two people walk on sand.".into(),
            candidates: vec!["spurious".into()],
            provided_caption: None,
            provided_boxes: None,
            reference: Some(Reference::Entailment(EntailmentLabel::Entailment)),
        };
        let violations = validate_sample(&sample);
        assert_eq!(violations, vec!["SNLI-VE must have 0 candidates".to_string()]);
    }

    #[test]
    fn empty_query_flagged() {
        let mut sample = vcr_sample(4);
        sample.query = "   ".into();
        assert!(validate_sample(&sample)
            .iter()
            .any(|v| v.contains("query is empty")));
    }

    #[test]
    fn vqa_reference_must_have_ten_answers() {
        let sample = Sample {
            id: "q-1".into(),
            task: TaskKind::VqaOther,
            image_ref: ImageRef::new("vqa:42"),
            query: "What is on the plate?".into(),
            candidates: vec![],
            provided_caption: None,
            provided_boxes: None,
            reference: Some(Reference::VqaAnswers(vec!["pizza".into(); 9])),
        };
        assert!(validate_sample(&sample)
            .iter()
            .any(|v| v.contains("expected 10")));
    }

    #[test]
    fn validate_is_pure() {
        let sample = vcr_sample(3);
        let before = sample.clone();
        let first = validate_sample(&sample);
        let second = validate_sample(&sample);
        assert_eq!(first, second);
        assert_eq!(sample, before);
    }

    #[test]
    fn jsonl_round_trip() {
        let samples = vec![
            vcr_sample(4),
            Sample {
                id: "ve-2".into(),
                task: TaskKind::SnliVe,
                image_ref: ImageRef::new("flickr:123"),
                query: "A dog runs.".into(),
                candidates: vec![],
                provided_caption: Some("a dog running on grass".into()),
                provided_boxes: Some(vec![DetectedObject::new(
                    PixelBox::new(1.0, 2.0, 30.0, 40.0),
                    "dog",
                    0.9,
                )
                .with_attribute("brown")]),
                reference: Some(Reference::Entailment(EntailmentLabel::Neutral)),
            },
        ];
        let text = samples_to_jsonl(&samples).unwrap();
        let parsed = samples_from_jsonl(&text).unwrap();
        assert_eq!(parsed, samples);
    }

    #[test]
    fn image_ref_crop_and_dims() {
        let base = ImageRef::stub("img", 10, 10);
        assert_eq!(base.dims(), Some((10, 10)));
        let crop = base.with_crop(2, 2, 4, 4);
        assert_eq!(crop.crop_rect(), Some((2, 2, 4, 4)));
        assert_eq!(crop.dims(), Some((4, 4)));
        assert_eq!(crop.base(), "stub:img?w=10&h=10");
    }

    #[test]
    fn pixel_box_clamping() {
        let inside = PixelBox::new(2.0, 2.0, 4.0, 4.0).clamp_to(10.0, 10.0);
        assert_eq!(inside, Some(PixelBox::new(2.0, 2.0, 4.0, 4.0)));
        let half_out = PixelBox::new(5.0, 5.0, 10.0, 10.0).clamp_to(10.0, 10.0);
        assert_eq!(half_out, Some(PixelBox::new(5.0, 5.0, 5.0, 5.0)));
        assert_eq!(PixelBox::new(20.0, 20.0, 5.0, 5.0).clamp_to(10.0, 10.0), None);
    }

    #[test]
    fn entailment_label_parsing() {
        assert_eq!(
            EntailmentLabel::parse("Entailment").unwrap(),
            EntailmentLabel::Entailment
        );
        assert_eq!(
            EntailmentLabel::parse("n").unwrap(),
            EntailmentLabel::Neutral
        );
        assert!(EntailmentLabel::parse("maybe").is_err());
    }
}
