//! Oracle implementations of the specialized toolset, computed exactly from
//! scenario ground truth. Noise and fault injection live in [`sim`], on top
//! of these pure functions.

mod sim;

pub use sim::{standard_descriptors, standard_registry, FaultScope, NoiseConfig, ToolDefaults};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MaskSequence;
use crate::scenario::vocab::{self, QueryTerms};
use crate::scenario::{rasterize_object, EventSpec, FrameSpan, ObjectSpec, Scenario};

pub const AUDIO_CLASSIFY: &str = "audio_classify";
pub const TEMPORAL_SEARCH_COARSE: &str = "temporal_search_coarse";
pub const TEMPORAL_SEARCH_FINE: &str = "temporal_search_fine";
pub const IDENTIFY_INSTANCE: &str = "identify_instance";
pub const SEGMENT_AND_TRACK: &str = "segment_and_track";

/// Inclusive window of frames returned by the search tools.
pub type FrameWindow = FrameSpan;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parameter error: {0}")]
pub struct ToolParamError(pub String);

fn param_err<T>(msg: impl Into<String>) -> Result<T, ToolParamError> {
    Err(ToolParamError(msg.into()))
}

/// `round_half_away_from_zero(k * (T-1) / (K-1))` for `k = 0..K`, computed in
/// integer arithmetic. Duplicates are collapsed in order.
pub fn coarse_sample_indices(num_frames: u32, k: u32) -> Result<Vec<u32>, ToolParamError> {
    if k < 2 || k > num_frames {
        return param_err(format!("K must lie in [2, {num_frames}], got {k}"));
    }
    let span = u64::from(num_frames - 1);
    let denom = u64::from(k - 1);
    let mut out: Vec<u32> = Vec::with_capacity(k as usize);
    for i in 0..u64::from(k) {
        let idx = ((2 * i * span + denom) / (2 * denom)) as u32;
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioScore {
    pub label: String,
    pub score: f64,
}

/// Top-5 sound classes by normalized segment weight over the window.
pub fn audio_classify(
    scenario: &Scenario,
    window: Option<FrameWindow>,
) -> Result<Vec<AudioScore>, ToolParamError> {
    let t = scenario.num_frames();
    if let Some(w) = window {
        if w.start > w.end || w.end >= t {
            return param_err(format!("window [{}, {}] outside a {t}-frame video", w.start, w.end));
        }
    }
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for seg in &scenario.audio.segments {
        if window.is_none_or(|w| w.overlaps(&seg.span)) {
            *totals.entry(seg.class_label.as_str()).or_insert(0.0) += seg.weight;
        }
    }
    let sum: f64 = totals.values().sum();
    if sum <= 0.0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<AudioScore> = totals
        .into_iter()
        .map(|(label, w)| AudioScore {
            label: label.to_string(),
            score: w / sum,
        })
        .collect();
    // BTreeMap order is lexicographic, and the sort is stable, so ties keep it
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(5);
    Ok(scored)
}

/// Whether `event` is what `terms` describes: same motion phrase, and the
/// subject carries every category/attribute word the query mentions.
pub fn event_matches(terms: &QueryTerms, event: &EventSpec, subject: &ObjectSpec) -> bool {
    let Some(motion) = &terms.motion_phrase else {
        return false;
    };
    if *motion != event.description {
        return false;
    }
    if !terms.categories.is_empty() && !terms.categories.contains(&subject.category.as_str()) {
        return false;
    }
    terms.attributes.iter().all(|a| subject.attributes.contains(a))
}

fn matching_events<'a>(scenario: &'a Scenario, query: &str) -> Vec<&'a EventSpec> {
    let terms = QueryTerms::parse(query);
    let mut events: Vec<&EventSpec> = scenario
        .events
        .iter()
        .filter(|e| {
            scenario
                .object(&e.subject_id)
                .is_some_and(|o| event_matches(&terms, e, o))
        })
        .collect();
    events.sort_by(|a, b| (a.span, &a.event_id).cmp(&(b.span, &b.event_id)));
    events
}

/// Tightest interval of `samples` inside the first event span that holds any.
fn window_over(samples: &[u32], events: &[&EventSpec]) -> Option<FrameWindow> {
    events.iter().find_map(|e| {
        let inside: Vec<u32> = samples.iter().copied().filter(|&i| e.span.contains(i)).collect();
        match (inside.first(), inside.last()) {
            (Some(&a), Some(&b)) => Some(FrameSpan::new(a, b)),
            _ => None,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseSearchOutcome {
    pub matched: bool,
    pub window: Option<FrameWindow>,
    pub sampled: Vec<u32>,
}

pub fn temporal_search_coarse(
    scenario: &Scenario,
    query: &str,
    k: u32,
) -> Result<CoarseSearchOutcome, ToolParamError> {
    let sampled = coarse_sample_indices(scenario.num_frames(), k)?;
    let events = matching_events(scenario, query);
    let window = window_over(&sampled, &events);
    Ok(CoarseSearchOutcome {
        matched: window.is_some(),
        window,
        sampled,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineSearchOutcome {
    pub matched: bool,
    pub window: Option<FrameWindow>,
    pub chunks_tried: u32,
}

/// Chunk `c` covers `[c*chunk_len, min((c+1)*chunk_len - 1, T-1)]` and is
/// sampled every `stride` frames from its start.
pub fn fine_chunks(num_frames: u32, chunk_len: u32, stride: u32) -> Vec<Vec<u32>> {
    (0..num_frames.div_ceil(chunk_len))
        .map(|c| {
            let start = c * chunk_len;
            let end = ((c + 1) * chunk_len - 1).min(num_frames - 1);
            (start..=end).step_by(stride as usize).collect()
        })
        .collect()
}

pub fn temporal_search_fine(
    scenario: &Scenario,
    query: &str,
    chunk_len: u32,
    stride: u32,
) -> Result<FineSearchOutcome, ToolParamError> {
    if chunk_len < 2 {
        return param_err(format!("chunk_len must be at least 2, got {chunk_len}"));
    }
    if stride < 1 || stride > chunk_len {
        return param_err(format!("stride must lie in [1, {chunk_len}], got {stride}"));
    }
    let events = matching_events(scenario, query);
    let chunks = fine_chunks(scenario.num_frames(), chunk_len, stride);
    for (c, samples) in chunks.iter().enumerate() {
        if let Some(window) = window_over(samples, &events) {
            return Ok(FineSearchOutcome {
                matched: true,
                window: Some(window),
                chunks_tried: c as u32 + 1,
            });
        }
    }
    Ok(FineSearchOutcome {
        matched: false,
        window: None,
        chunks_tried: chunks.len() as u32,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: String,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub frame_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayKind {
    FrameNumber,
    BoxLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayItem {
    pub kind: OverlayKind,
    pub text: String,
    pub anchor: [u32; 2],
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[u32; 4]>,
}

/// Overlay metadata for one frame; pixel rendering happens in real adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedFrameSpec {
    pub frame_index: u32,
    pub overlay_items: Vec<OverlayItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOutcome {
    pub object_id: Option<String>,
    pub confidence: f64,
    pub detections: Vec<Detection>,
    pub annotated: Vec<AnnotatedFrameSpec>,
}

/// Ranked candidates: `(object_id, score)` sorted best-first, ties by id.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub ranked: Vec<(String, u32)>,
    pub max_attainable: u32,
}

fn score_candidates(
    scenario: &Scenario,
    candidates: &[&ObjectSpec],
    frames: &[u32],
    description: &str,
) -> CandidateScores {
    let terms = QueryTerms::parse(description);
    let mut ranked: Vec<(String, u32)> = candidates
        .iter()
        .map(|o| {
            let mut score = terms.attributes.iter().filter(|a| o.attributes.contains(*a)).count() as u32;
            if let Some(motion) = &terms.motion_phrase {
                let hit = scenario.events.iter().any(|e| {
                    e.subject_id == o.object_id
                        && e.description == *motion
                        && frames.iter().any(|&f| e.span.contains(f))
                });
                if hit {
                    score += 2;
                }
            }
            (o.object_id.clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let max_attainable = terms.attributes.len() as u32 + if terms.motion_phrase.is_some() { 2 } else { 0 };
    CandidateScores {
        ranked,
        max_attainable,
    }
}

/// Detections, overlays and candidate ranking for the identifier. The
/// winner is `ranked[0]` when any candidate is visible.
pub fn identify_candidates(
    scenario: &Scenario,
    frames: &[u32],
    category: Option<&str>,
    description: &str,
) -> Result<(IdentifyOutcome, CandidateScores), ToolParamError> {
    if let Some(c) = category {
        if !vocab::is_category(c) {
            return param_err(format!("unknown category `{c}`"));
        }
    }
    let t = scenario.num_frames();
    if let Some(&bad) = frames.iter().find(|&&f| f >= t) {
        return param_err(format!("frame {bad} outside a {t}-frame video"));
    }
    let mut frames: Vec<u32> = frames.to_vec();
    frames.sort_unstable();
    frames.dedup();

    let in_category: Vec<&ObjectSpec> = scenario
        .objects
        .iter()
        .filter(|o| category.is_none_or(|c| o.category == c))
        .collect();
    let mut detections = Vec::new();
    let mut annotated = Vec::new();
    for &f in &frames {
        let mut items = vec![OverlayItem {
            kind: OverlayKind::FrameNumber,
            text: f.to_string(),
            anchor: [2, 2],
            bbox: None,
        }];
        for o in &in_category {
            if !o.is_visible(f) {
                continue;
            }
            let mask = rasterize_object(o, f, &scenario.video)
                .map_err(|e| ToolParamError(e.to_string()))?;
            let Some((x0, y0, x1, y1)) = mask.bbox() else { continue };
            let bbox = [x0, y0, x1, y1];
            detections.push(Detection {
                object_id: o.object_id.clone(),
                category: o.category.clone(),
                bbox,
                frame_index: f,
            });
            items.push(OverlayItem {
                kind: OverlayKind::BoxLabel,
                text: o.object_id.clone(),
                anchor: [x0, y0.saturating_sub(1)],
                bbox: Some(bbox),
            });
        }
        annotated.push(AnnotatedFrameSpec {
            frame_index: f,
            overlay_items: items,
        });
    }
    let visible: Vec<&ObjectSpec> = in_category
        .into_iter()
        .filter(|o| detections.iter().any(|d| d.object_id == o.object_id))
        .collect();
    let scores = score_candidates(scenario, &visible, &frames, description);
    let (object_id, confidence) = match scores.ranked.first() {
        None => (None, 0.0),
        Some((id, score)) => {
            let conf = if scores.max_attainable == 0 {
                1.0 / scores.ranked.len() as f64
            } else {
                f64::from(*score) / f64::from(scores.max_attainable)
            };
            (Some(id.clone()), conf)
        }
    };
    Ok((
        IdentifyOutcome {
            object_id,
            confidence,
            detections,
            annotated,
        },
        scores,
    ))
}

pub fn identify_instance(
    scenario: &Scenario,
    frames: &[u32],
    category: Option<&str>,
    description: &str,
) -> Result<IdentifyOutcome, ToolParamError> {
    identify_candidates(scenario, frames, category, description).map(|(o, _)| o)
}

/// Ground-truth propagation from the pivot frame. An object that is not
/// visible at the pivot yields an all-empty sequence.
pub fn segment_and_track(
    scenario: &Scenario,
    pivot_frame: u32,
    object_id: &str,
) -> Result<MaskSequence, ToolParamError> {
    let t = scenario.num_frames();
    if pivot_frame >= t {
        return param_err(format!("pivot_frame {pivot_frame} outside a {t}-frame video"));
    }
    let Some(obj) = scenario.object(object_id) else {
        return param_err(format!("unknown object_id `{object_id}`"));
    };
    let (w, h) = (scenario.video.width, scenario.video.height);
    if !obj.is_visible(pivot_frame) {
        return Ok(MaskSequence::empty(w, h, t as usize));
    }
    scenario
        .ground_truth(object_id)
        .map_err(|e| ToolParamError(e.to_string()))
}
