use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{self, CATEGORIES, COLORS, SIZES};
use super::{
    AudioSegment, AudioTrack, EventSpec, FrameSpan, Keyframe, ObjectSpec, Query, Scenario,
    ScenarioError, Shape, VideoSpec, SCENARIO_SCHEMA_VERSION,
};
use crate::planner::ReferenceType;
use crate::tools::coarse_sample_indices;

/// Which kind of referring expression the generated query uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// "the horses": the target is the only object of its category.
    CategoryLevel,
    /// "the white horse": visible for the whole clip, told apart by attributes.
    WholeVideo,
    /// Identified by an event that spans a large part of the clip.
    SegmentLong,
    /// Identified by a short event that falls between the coarse samples.
    SegmentShort,
}

impl QueryKind {
    pub fn reference_type(self) -> ReferenceType {
        match self {
            QueryKind::CategoryLevel => ReferenceType::CategoryLevel,
            QueryKind::WholeVideo => ReferenceType::WholeVideoInstance,
            QueryKind::SegmentLong | QueryKind::SegmentShort => {
                ReferenceType::SegmentSpecificInstance
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub min_objects: u32,
    pub max_objects: u32,
    pub min_frames: u32,
    pub max_frames: u32,
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    /// Extra events beyond the ones the query itself needs.
    pub min_events: u32,
    pub max_events: u32,
    /// Coarse sample count the short-event construction must avoid.
    pub coarse_k: u32,
    /// Forced query kind; drawn 40/30/15/15 when absent.
    pub query_kind: Option<QueryKind>,
    /// Forced audio flag; category-level queries use audio a third of the time
    /// when absent.
    pub audio_query: Option<bool>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            min_objects: 2,
            max_objects: 6,
            min_frames: 60,
            max_frames: 120,
            width: 96,
            height: 64,
            fps: 24,
            min_events: 1,
            max_events: 3,
            coarse_k: 8,
            query_kind: None,
            audio_query: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::Parameter(m.to_string()));
        if self.min_objects < 2 {
            return err("min_objects must be at least 2");
        }
        if self.min_objects > self.max_objects {
            return err("empty object-count range");
        }
        if self.max_objects > 24 {
            return err("max_objects must be at most 24");
        }
        if self.min_frames < 2 {
            return err("min_frames must be at least 2");
        }
        if self.min_frames > self.max_frames {
            return err("empty frame-count range");
        }
        if self.width < 8 || self.height < 8 {
            return err("frames must be at least 8x8");
        }
        if self.fps == 0 {
            return err("fps must be positive");
        }
        if self.min_events > self.max_events {
            return err("empty event-count range");
        }
        if self.coarse_k < 2 || self.coarse_k > self.min_frames {
            return err("coarse_k must lie in [2, min_frames]");
        }
        Ok(())
    }
}

struct Draft {
    category: &'static str,
    attributes: BTreeSet<String>,
    span: FrameSpan,
}

fn quarter(x: f64) -> f64 {
    (x * 4.0).round() / 4.0
}

fn random_span(rng: &mut ChaCha8Rng, t: u32, min_len: u32) -> FrameSpan {
    let min_len = min_len.clamp(1, t);
    let len = rng.gen_range(min_len..=t);
    let start = rng.gen_range(0..=t - len);
    FrameSpan::new(start, start + len - 1)
}

fn sub_span(rng: &mut ChaCha8Rng, outer: FrameSpan, min_len: u32, max_len: u32) -> FrameSpan {
    let avail = outer.frame_count();
    let max_len = max_len.clamp(1, avail);
    let min_len = min_len.clamp(1, max_len);
    let len = rng.gen_range(min_len..=max_len);
    let start = rng.gen_range(outer.start..=outer.end + 1 - len);
    FrameSpan::new(start, start + len - 1)
}

fn pick_kind(rng: &mut ChaCha8Rng) -> QueryKind {
    match rng.gen_range(0..20) {
        0..=7 => QueryKind::CategoryLevel,
        8..=13 => QueryKind::WholeVideo,
        14..=16 => QueryKind::SegmentLong,
        _ => QueryKind::SegmentShort,
    }
}

fn attributes(color: &str, size: &str) -> BTreeSet<String> {
    [color.to_string(), size.to_string()].into()
}

/// Span of `len` frames strictly between two consecutive coarse samples.
fn short_event_span(
    rng: &mut ChaCha8Rng,
    t: u32,
    k: u32,
) -> Result<FrameSpan, ScenarioError> {
    let samples = coarse_sample_indices(t, k)
        .map_err(|e| ScenarioError::Parameter(e.to_string()))?;
    let cap = t / 10;
    let gaps: Vec<(u32, u32)> = samples
        .windows(2)
        .filter_map(|w| {
            let interior = w[1] - w[0] - 1;
            let max_len = interior.min(cap);
            (max_len >= 3).then_some((w[0], max_len))
        })
        .collect();
    let &(left, max_len) = gaps.choose(rng).ok_or_else(|| {
        ScenarioError::Parameter(format!(
            "a {t}-frame video has no room for a short event between {k} coarse samples"
        ))
    })?;
    let len = rng.gen_range(3..=max_len);
    let right = samples[samples.iter().position(|&s| s == left).unwrap() + 1];
    let start = rng.gen_range(left + 1..=right - len);
    Ok(FrameSpan::new(start, start + len - 1))
}

/// Long span that contains at least one coarse sample.
fn long_event_span(rng: &mut ChaCha8Rng, t: u32, k: u32) -> Result<FrameSpan, ScenarioError> {
    let samples = coarse_sample_indices(t, k)
        .map_err(|e| ScenarioError::Parameter(e.to_string()))?;
    let lo = ((t as f64) * 0.3).ceil() as u32;
    let hi = ((t as f64 * 0.6).floor() as u32).max(lo);
    let len = rng.gen_range(lo.max(1)..=hi.min(t));
    let mut start = rng.gen_range(0..=t - len);
    if !samples.iter().any(|&s| s >= start && s < start + len) {
        start = samples
            .iter()
            .copied()
            .rfind(|&s| s + len <= t)
            .unwrap_or(0);
    }
    Ok(FrameSpan::new(start, start + len - 1))
}

/// Builds a complete scenario. The same `(seed, params)` always produces the
/// same scenario, field for field.
pub fn generate_scenario(seed: u64, params: &GenerationParams) -> Result<Scenario, ScenarioError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(params.min_frames..=params.max_frames);
    let (w, h) = (params.width, params.height);
    let kind = match params.query_kind {
        Some(k) => k,
        None => pick_kind(&mut rng),
    };
    let uses_audio = match params.audio_query {
        Some(a) => a,
        None => kind == QueryKind::CategoryLevel && rng.gen_bool(1.0 / 3.0),
    };
    let n = rng.gen_range(params.min_objects..=params.max_objects) as usize;
    let lookalikes = match kind {
        QueryKind::CategoryLevel => 0,
        QueryKind::WholeVideo | QueryKind::SegmentLong => rng.gen_range(1..=2),
        QueryKind::SegmentShort => 2,
    }
    .min(n - 1);

    let target_category = *CATEGORIES.choose(&mut rng).unwrap();
    let target_color = *COLORS.choose(&mut rng).unwrap();
    let target_size = *SIZES.choose(&mut rng).unwrap();
    let whole = FrameSpan::new(0, t - 1);

    let target_span = match kind {
        QueryKind::CategoryLevel => {
            let start = if rng.gen_bool(0.5) {
                0
            } else {
                rng.gen_range(0..=t / 2)
            };
            let min_len = ((t as f64) * 0.4).ceil() as u32;
            let end = rng.gen_range((start + min_len - 1).min(t - 1)..=t - 1);
            FrameSpan::new(start, end)
        }
        _ => whole,
    };
    let mut drafts = vec![Draft {
        category: target_category,
        attributes: attributes(target_color, target_size),
        span: target_span,
    }];
    for _ in 0..lookalikes {
        let draft = match kind {
            QueryKind::WholeVideo => {
                let others: Vec<&str> =
                    COLORS.iter().copied().filter(|c| *c != target_color).collect();
                Draft {
                    category: target_category,
                    attributes: attributes(
                        others.choose(&mut rng).unwrap(),
                        SIZES.choose(&mut rng).unwrap(),
                    ),
                    span: random_span(&mut rng, t, t / 3),
                }
            }
            _ => Draft {
                category: target_category,
                attributes: attributes(target_color, target_size),
                span: whole,
            },
        };
        drafts.push(draft);
    }
    let filler_categories: Vec<&'static str> = CATEGORIES
        .iter()
        .copied()
        .filter(|c| *c != target_category)
        .collect();
    while drafts.len() < n {
        drafts.push(Draft {
            category: filler_categories.choose(&mut rng).unwrap(),
            attributes: attributes(
                COLORS.choose(&mut rng).unwrap(),
                SIZES.choose(&mut rng).unwrap(),
            ),
            span: random_span(&mut rng, t, t / 3),
        });
    }

    // shuffle so the target's id carries no information
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.shuffle(&mut rng);
    let mut bands: Vec<usize> = (0..drafts.len()).collect();
    bands.shuffle(&mut rng);
    let band_h = f64::from(h) / drafts.len() as f64;
    let max_hw = ((f64::from(w) - 1.0) / 4.0).clamp(1.0, 8.0);
    let mut counters: BTreeMap<&str, u32> = BTreeMap::new();
    let mut objects = Vec::with_capacity(drafts.len());
    let mut target_id = String::new();
    for (slot, &di) in order.iter().enumerate() {
        let d = &drafts[di];
        let c = counters.entry(d.category).or_insert(0);
        let object_id = format!("{}_{}", d.category, c);
        *c += 1;
        if di == 0 {
            target_id = object_id.clone();
        }
        let band = bands[slot];
        let band_lo = band as f64 * band_h;
        let max_hh = (band_h / 2.0 - 1.0).max(1.0);
        let half_h = quarter(rng.gen_range(1.0f64.max(max_hh.min(2.0))..=max_hh));
        let half_w = quarter(rng.gen_range(1.0f64.max(max_hw.min(2.0))..=max_hw));
        let cy_lo = band_lo + half_h;
        let cy_hi = (band_lo + band_h - half_h).max(cy_lo);
        let cx_lo = half_w;
        let cx_hi = f64::from(w) - 1.0 - half_w;
        let key_count = rng.gen_range(2..=4u32).min(d.span.frame_count());
        let mut frames = BTreeSet::from([d.span.start, d.span.end]);
        while (frames.len() as u32) < key_count {
            frames.insert(rng.gen_range(d.span.start..=d.span.end));
        }
        let trajectory = frames
            .into_iter()
            .map(|frame| Keyframe {
                frame,
                cx: quarter(rng.gen_range(cx_lo..=cx_hi)),
                cy: quarter(rng.gen_range(cy_lo..=cy_hi).min(f64::from(h) - 1.0)),
                half_w,
                half_h,
            })
            .collect();
        objects.push(ObjectSpec {
            object_id,
            category: d.category.to_string(),
            attributes: d.attributes.clone(),
            shape: if rng.gen_bool(0.5) {
                Shape::Rectangle
            } else {
                Shape::Ellipse
            },
            trajectory,
            visible_span: d.span,
        });
    }
    let lookalike_ids: Vec<String> = order
        .iter()
        .enumerate()
        .filter(|(_, &di)| di >= 1 && di <= lookalikes)
        .map(|(slot, _)| objects[slot].object_id.clone())
        .collect();

    let mut pool = vocab::all_event_descriptions();
    pool.shuffle(&mut rng);
    let mut raw_events: Vec<(String, String, FrameSpan)> = Vec::new();
    let mut query_motion = None;
    match kind {
        QueryKind::SegmentLong | QueryKind::SegmentShort => {
            let description = pool.pop().unwrap();
            let span = if kind == QueryKind::SegmentShort {
                short_event_span(&mut rng, t, params.coarse_k)?
            } else {
                long_event_span(&mut rng, t, params.coarse_k)?
            };
            raw_events.push((target_id.clone(), description.clone(), span));
            query_motion = Some(description);
            for id in &lookalike_ids {
                let span = sub_span(&mut rng, whole, 3, (t / 3).max(3));
                raw_events.push((id.clone(), pool.pop().unwrap(), span));
            }
        }
        QueryKind::CategoryLevel | QueryKind::WholeVideo => {}
    }
    let extra = rng.gen_range(params.min_events..=params.max_events);
    for _ in 0..extra {
        let Some(description) = pool.pop() else { break };
        let subject = objects.choose(&mut rng).unwrap();
        let span = sub_span(
            &mut rng,
            subject.visible_span,
            2,
            (subject.visible_span.frame_count() / 2).max(2),
        );
        raw_events.push((subject.object_id.clone(), description, span));
    }
    raw_events.sort_by(|a, b| (a.2, &a.0, &a.1).cmp(&(b.2, &b.0, &b.1)));
    let events = raw_events
        .into_iter()
        .enumerate()
        .map(|(i, (subject_id, description, span))| EventSpec {
            event_id: format!("event_{i}"),
            subject_id,
            description,
            span,
        })
        .collect();

    let mut segments = Vec::new();
    for o in &objects {
        let is_target = o.object_id == target_id;
        let class = vocab::audio_class_for_category(&o.category).expect("closed vocabulary");
        if uses_audio && is_target {
            let span = sub_span(&mut rng, o.visible_span, 1, o.visible_span.frame_count());
            let weight = (rng.gen_range(2.0..3.0f64) * 100.0).round() / 100.0;
            segments.push((span, class, Some(o.object_id.clone()), weight));
        } else if (!uses_audio || o.category != target_category || is_target) && rng.gen_bool(0.5) {
            let span = sub_span(&mut rng, o.visible_span, 1, o.visible_span.frame_count());
            let weight = (rng.gen_range(0.2..1.0f64) * 100.0).round() / 100.0;
            segments.push((span, class, Some(o.object_id.clone()), weight));
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let class = *vocab::AMBIENT_AUDIO.choose(&mut rng).unwrap();
        let span = random_span(&mut rng, t, 1);
        let weight = (rng.gen_range(0.1..0.5f64) * 100.0).round() / 100.0;
        segments.push((span, class, None, weight));
    }
    let audio = AudioTrack {
        segments: segments
            .into_iter()
            .map(|(span, class, source, weight)| AudioSegment {
                span,
                class_label: class.to_string(),
                source_object_id: source,
                weight,
            })
            .collect(),
    };

    let expression = match kind {
        QueryKind::CategoryLevel => {
            if rng.gen_bool(0.5) {
                format!("the {target_category}")
            } else {
                format!("the {}", vocab::plural(target_category))
            }
        }
        QueryKind::WholeVideo => {
            let suffix = *["", " standing still", " in the scene"].choose(&mut rng).unwrap();
            if rng.gen_bool(0.5) {
                format!("the {target_color} {target_category}{suffix}")
            } else {
                format!("the {target_size} {target_color} {target_category}{suffix}")
            }
        }
        QueryKind::SegmentLong | QueryKind::SegmentShort => {
            let motion = query_motion.as_deref().unwrap();
            if rng.gen_bool(0.5) {
                format!("the {target_color} {target_category} {motion}")
            } else {
                format!("the {target_category} {motion}")
            }
        }
    };
    let query = Query {
        query_id: format!("s{seed}_q0"),
        expression,
        uses_audio,
        gt_object_id: target_id,
        gt_reference_type: kind.reference_type(),
    };
    let scenario = Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        seed,
        video: VideoSpec {
            width: w,
            height: h,
            num_frames: t,
            fps: params.fps,
        },
        objects,
        events,
        audio,
        queries: vec![query],
    };
    scenario.validate()?;
    Ok(scenario)
}
