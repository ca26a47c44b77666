//! Synthetic video scenarios: the ground-truth world behind every simulated
//! tool.

mod generate;
pub mod narrative;
mod raster;
pub mod vocab;

pub use generate::{generate_scenario, GenerationParams, QueryKind};
pub use narrative::synthesize_narrative;
pub use raster::{object_geometry, rasterize_object, Geometry};

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MaskSequence;
use crate::planner::ReferenceType;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("frame {frame} out of range for a {num_frames}-frame video")]
    Range { frame: u32, num_frames: u32 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {found} (expected {SCENARIO_SCHEMA_VERSION})")]
    Version { found: i64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Inclusive frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: u32,
    pub end: u32,
}

impl FrameSpan {
    pub fn new(start: u32, end: u32) -> Self {
        FrameSpan { start, end }
    }

    pub fn contains(&self, frame: u32) -> bool {
        frame >= self.start && frame <= self.end
    }

    pub fn contains_span(&self, other: &FrameSpan) -> bool {
        other.start >= self.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &FrameSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn frame_count(&self) -> u32 {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub width: u32,
    pub height: u32,
    pub num_frames: u32,
    pub fps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: u32,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: String,
    pub category: String,
    pub attributes: BTreeSet<String>,
    pub shape: Shape,
    pub trajectory: Vec<Keyframe>,
    pub visible_span: FrameSpan,
}

impl ObjectSpec {
    pub fn is_visible(&self, frame: u32) -> bool {
        self.visible_span.contains(frame)
    }

    /// Attributes followed by the category, e.g. `adult brown horse`.
    pub fn noun_phrase(&self) -> String {
        let mut words: Vec<&str> = self.attributes.iter().map(String::as_str).collect();
        words.push(&self.category);
        words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub event_id: String,
    pub subject_id: String,
    pub description: String,
    pub span: FrameSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSegment {
    pub span: FrameSpan,
    pub class_label: String,
    pub source_object_id: Option<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AudioTrack {
    pub segments: Vec<AudioSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub expression: String,
    pub uses_audio: bool,
    pub gt_object_id: String,
    pub gt_reference_type: ReferenceType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub video: VideoSpec,
    pub objects: Vec<ObjectSpec>,
    pub events: Vec<EventSpec>,
    pub audio: AudioTrack,
    pub queries: Vec<Query>,
}

impl Scenario {
    pub fn object(&self, object_id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn num_frames(&self) -> u32 {
        self.video.num_frames
    }

    /// Ground-truth mask sequence of one object.
    pub fn ground_truth(&self, object_id: &str) -> Result<MaskSequence, ScenarioError> {
        let obj = self
            .object(object_id)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown object {object_id}")))?;
        let masks = (0..self.video.num_frames)
            .map(|f| rasterize_object(obj, f, &self.video))
            .collect::<Result<Vec<_>, _>>()?;
        MaskSequence::new(masks).map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    /// Checks every structural invariant of the scenario.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Version {
                found: i64::from(self.schema_version),
            });
        }
        let v = &self.video;
        if v.width < 8 || v.height < 8 || v.num_frames < 2 || v.fps == 0 {
            return invalid(format!(
                "video {}x{} with {} frames at {} fps violates minimums",
                v.width, v.height, v.num_frames, v.fps
            ));
        }
        let last = v.num_frames - 1;
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.object_id.as_str()) {
                return invalid(format!("duplicate object_id {}", o.object_id));
            }
            if !vocab::is_category(&o.category) {
                return invalid(format!("{}: unknown category {}", o.object_id, o.category));
            }
            if let Some(a) = o.attributes.iter().find(|a| !vocab::is_attribute(a)) {
                return invalid(format!("{}: unknown attribute {a}", o.object_id));
            }
            let span = o.visible_span;
            if span.start > span.end || span.end > last {
                return invalid(format!("{}: visible_span out of range", o.object_id));
            }
            if o.trajectory.is_empty() {
                return invalid(format!("{}: empty trajectory", o.object_id));
            }
            for pair in o.trajectory.windows(2) {
                if pair[0].frame >= pair[1].frame {
                    return invalid(format!("{}: keyframes not increasing", o.object_id));
                }
            }
            for k in &o.trajectory {
                if !span.contains(k.frame) {
                    return invalid(format!(
                        "{}: keyframe {} outside visible span",
                        o.object_id, k.frame
                    ));
                }
                if !(k.half_w >= 0.0 && k.half_h >= 0.0 && k.cx.is_finite() && k.cy.is_finite())
                {
                    return invalid(format!("{}: bad keyframe geometry", o.object_id));
                }
            }
            for f in span.start..=span.end {
                if rasterize_object(o, f, v)?.is_empty() {
                    return invalid(format!(
                        "{}: shape leaves the frame at frame {f}",
                        o.object_id
                    ));
                }
            }
        }
        let mut event_ids = HashSet::new();
        for e in &self.events {
            if !event_ids.insert(e.event_id.as_str()) {
                return invalid(format!("duplicate event_id {}", e.event_id));
            }
            let Some(subject) = self.object(&e.subject_id) else {
                return invalid(format!("{}: unknown subject {}", e.event_id, e.subject_id));
            };
            if e.span.start > e.span.end || !subject.visible_span.contains_span(&e.span) {
                return invalid(format!(
                    "{}: span outside the subject's visible span",
                    e.event_id
                ));
            }
        }
        for s in &self.audio.segments {
            if !s.weight.is_finite() || s.weight <= 0.0 {
                return invalid(format!("audio segment {} has non-positive weight", s.class_label));
            }
            if !vocab::AUDIO_CLASSES.contains(&s.class_label.as_str()) {
                return invalid(format!("unknown audio class {}", s.class_label));
            }
            if s.span.start > s.span.end || s.span.end > last {
                return invalid(format!("audio segment {} out of range", s.class_label));
            }
            if let Some(src) = &s.source_object_id {
                if self.object(src).is_none() {
                    return invalid(format!("audio source {src} does not exist"));
                }
            }
        }
        for q in &self.queries {
            if self.object(&q.gt_object_id).is_none() {
                return invalid(format!(
                    "{}: ground-truth object {} does not exist",
                    q.query_id, q.gt_object_id
                ));
            }
        }
        Ok(())
    }

    /// Canonical serialization: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let parse_err = |e: serde_json::Error| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        match raw.get("schema_version").and_then(serde_json::Value::as_i64) {
            Some(v) if v == i64::from(SCENARIO_SCHEMA_VERSION) => {}
            Some(v) => return Err(ScenarioError::Version { found: v }),
            None => {
                return Err(ScenarioError::Parse {
                    line: 1,
                    column: 1,
                    message: "missing integer field `schema_version`".into(),
                })
            }
        }
        let scenario: Scenario = serde_json::from_str(text).map_err(parse_err)?;
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    std::fs::write(path, scenario.to_json())?;
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let s = generate_scenario(7, &GenerationParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&s, &path).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded, s);
    }

    #[test]
    fn unknown_version_rejected() {
        let s = generate_scenario(7, &GenerationParams::default()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v["schema_version"] = 999.into();
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ScenarioError::Version { found: 999 }));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let s = generate_scenario(7, &GenerationParams::default()).unwrap();
        let json = s.to_json();
        let err = Scenario::from_json(&json[..json.len() / 2]).unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn field_errors_carry_position() {
        let s = generate_scenario(3, &GenerationParams::default()).unwrap();
        let json = s.to_json().replace("\"fps\": 24", "\"fps\": \"fast\"");
        match Scenario::from_json(&json).unwrap_err() {
            ScenarioError::Parse { message, line, .. } => {
                assert!(line > 1);
                assert!(message.contains("invalid type"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_event_subject_rejected() {
        let mut s = generate_scenario(11, &GenerationParams::default()).unwrap();
        s.events[0].subject_id = "nobody".into();
        assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn frame_span_relations() {
        let a = FrameSpan::new(5, 10);
        assert!(a.contains(5) && a.contains(10) && !a.contains(11));
        assert!(a.overlaps(&FrameSpan::new(10, 20)));
        assert!(!a.overlaps(&FrameSpan::new(11, 20)));
        assert_eq!(a.frame_count(), 6);
    }
}
