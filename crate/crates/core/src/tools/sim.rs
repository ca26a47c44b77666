//! Registry wiring for the oracle tools, with seeded noise and fault injection.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::*;
use crate::protocol::{Args, ErrorCode, ParamSpec, ParamType, Registry, ToolBackend, ToolDescriptor, ToolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultScope {
    #[default]
    EveryCall,
    /// Only the first invocation on the registry can fault.
    FirstCallOnly,
}

/// Perturbations applied on top of the oracle answers. Each call draws from
/// a generator seeded by `rng_seed` and the call id, so results do not depend
/// on scheduling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub rng_seed: u64,
    pub p_wrong_identity: f64,
    pub p_search_miss: f64,
    pub mask_erosion_px: u32,
    pub p_tool_fault: f64,
    pub fault_scope: FaultScope,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rng_seed: 0,
            p_wrong_identity: 0.0,
            p_search_miss: 0.0,
            mask_erosion_px: 0,
            p_tool_fault: 0.0,
            fault_scope: FaultScope::EveryCall,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_wrong_identity", self.p_wrong_identity),
            ("p_search_miss", self.p_search_miss),
            ("p_tool_fault", self.p_tool_fault),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.p_wrong_identity == 0.0
            && self.p_search_miss == 0.0
            && self.mask_erosion_px == 0
            && self.p_tool_fault == 0.0
    }
}

/// Defaults for optional tool parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolDefaults {
    pub coarse_k: u32,
    pub chunk_len: u32,
    pub stride: u32,
}

impl Default for ToolDefaults {
    fn default() -> Self {
        ToolDefaults {
            coarse_k: 8,
            chunk_len: 25,
            stride: 3,
        }
    }
}

fn descriptor(name: &str, description: &str, params: Vec<ParamSpec>, returns: &str, keys: &[&str]) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        description: description.into(),
        params,
        returns: returns.into(),
        result_keys: keys.iter().map(|k| k.to_string()).collect(),
    }
}

/// Descriptors of the five standard tools, in prompt order.
pub fn standard_descriptors() -> Vec<ToolDescriptor> {
    use ParamType::*;
    vec![
        descriptor(
            AUDIO_CLASSIFY,
            "Classify the sounds in the audio track, optionally restricted to a frame window.",
            vec![
                ParamSpec::optional("start", Int, "first frame of the window"),
                ParamSpec::optional("end", Int, "last frame of the window"),
            ],
            "{classes: [{label, score}]} with at most 5 entries, best first",
            &["classes"],
        ),
        descriptor(
            TEMPORAL_SEARCH_COARSE,
            "Look at K uniformly sampled frames and report the window where the query's event is seen.",
            vec![
                ParamSpec::required("query", String, "referring expression"),
                ParamSpec::optional("k", Int, "number of sampled frames"),
            ],
            "{matched, window: {start, end} | null, sampled: [frame]}",
            &["matched", "window", "sampled"],
        ),
        descriptor(
            TEMPORAL_SEARCH_FINE,
            "Scan the video chunk by chunk at a small stride until the query's event is seen.",
            vec![
                ParamSpec::required("query", String, "referring expression"),
                ParamSpec::optional("chunk_len", Int, "frames per chunk"),
                ParamSpec::optional("stride", Int, "sampling stride inside a chunk"),
            ],
            "{matched, window: {start, end} | null, chunks_tried}",
            &["matched", "window", "chunks_tried"],
        ),
        descriptor(
            IDENTIFY_INSTANCE,
            "Detect objects on the given frames and pick the one that best fits the description.",
            vec![
                ParamSpec::required("frames", ListOfInt, "frame indices to inspect"),
                ParamSpec::optional("category", String, "restrict detection to one category"),
                ParamSpec::required("description", String, "what the target looks like or does"),
            ],
            "{object_id | null, confidence, detections: [{object_id, category, box, frame_index}], annotated: [...]}",
            &["object_id", "confidence", "detections", "annotated"],
        ),
        descriptor(
            SEGMENT_AND_TRACK,
            "Segment the object on the pivot frame and track it through the whole video.",
            vec![
                ParamSpec::required("pivot_frame", Int, "frame where the object is visible"),
                ParamSpec::required("object_id", String, "object to segment"),
            ],
            "{masks: [mask]} with one mask per frame",
            &["masks"],
        ),
    ]
}

struct Shared {
    scenario: Arc<Scenario>,
    noise: NoiseConfig,
    defaults: ToolDefaults,
    invocations: AtomicU64,
}

impl Shared {
    fn rng(&self, call_id: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(call_id.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.noise.rng_seed ^ u64::from_le_bytes(bytes))
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Audio,
    Coarse,
    Fine,
    Identify,
    Segment,
}

struct SimTool {
    kind: Kind,
    name: &'static str,
    shared: Arc<Shared>,
}

fn uint(args: &Args, key: &str) -> Result<Option<u32>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| ToolError::bad_args(format!("`{key}` must be a non-negative integer"))),
    }
}

fn text<'a>(args: &'a Args, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

fn bad(e: ToolParamError) -> ToolError {
    ToolError::bad_args(e.0)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("tool outputs serialize")
}

impl SimTool {
    fn run(&self, rng: &mut ChaCha8Rng, args: &Args) -> Result<Value, ToolError> {
        let s = &self.shared;
        let sc = s.scenario.as_ref();
        let miss = |rng: &mut ChaCha8Rng| s.noise.p_search_miss > 0.0 && rng.gen_bool(s.noise.p_search_miss);
        match self.kind {
            Kind::Audio => {
                let window = match (uint(args, "start")?, uint(args, "end")?) {
                    (None, None) => None,
                    (a, b) => Some(FrameSpan::new(a.unwrap_or(0), b.unwrap_or(sc.num_frames().saturating_sub(1)))),
                };
                let classes = audio_classify(sc, window).map_err(bad)?;
                Ok(json!({ "classes": classes }))
            }
            Kind::Coarse => {
                let query = text(args, "query").unwrap_or_default();
                let k = uint(args, "k")?.unwrap_or(s.defaults.coarse_k);
                let mut out = temporal_search_coarse(sc, query, k).map_err(bad)?;
                if out.matched && miss(rng) {
                    out.matched = false;
                    out.window = None;
                }
                Ok(to_value(&out))
            }
            Kind::Fine => {
                let query = text(args, "query").unwrap_or_default();
                let chunk_len = uint(args, "chunk_len")?.unwrap_or(s.defaults.chunk_len);
                let stride = uint(args, "stride")?.unwrap_or(s.defaults.stride);
                let mut out = temporal_search_fine(sc, query, chunk_len, stride).map_err(bad)?;
                if out.matched && miss(rng) {
                    out = FineSearchOutcome {
                        matched: false,
                        window: None,
                        chunks_tried: sc.num_frames().div_ceil(chunk_len),
                    };
                }
                Ok(to_value(&out))
            }
            Kind::Identify => {
                let frames: Vec<u32> = match args.get("frames").and_then(Value::as_array) {
                    Some(items) => items
                        .iter()
                        .map(|v| v.as_u64().and_then(|n| u32::try_from(n).ok()))
                        .collect::<Option<Vec<u32>>>()
                        .ok_or_else(|| ToolError::bad_args("`frames` must hold non-negative integers"))?,
                    None => return Err(ToolError::bad_args("`frames` is required")),
                };
                if frames.is_empty() {
                    return Err(ToolError::bad_args("`frames` must not be empty"));
                }
                let category = text(args, "category");
                let description = text(args, "description").unwrap_or_default();
                let (mut out, scores) = identify_candidates(sc, &frames, category, description).map_err(bad)?;
                if scores.ranked.len() > 1
                    && s.noise.p_wrong_identity > 0.0
                    && rng.gen_bool(s.noise.p_wrong_identity)
                {
                    let pick = rng.gen_range(1..scores.ranked.len());
                    out.object_id = Some(scores.ranked[pick].0.clone());
                }
                Ok(to_value(&out))
            }
            Kind::Segment => {
                let pivot = uint(args, "pivot_frame")?.ok_or_else(|| ToolError::bad_args("`pivot_frame` is required"))?;
                let object_id = text(args, "object_id").unwrap_or_default();
                let seq = segment_and_track(sc, pivot, object_id).map_err(bad)?;
                let radius = s.noise.mask_erosion_px;
                let masks: Vec<_> = if radius > 0 {
                    seq.masks().iter().map(|m| m.erode(radius)).collect()
                } else {
                    seq.into_masks()
                };
                Ok(json!({ "masks": masks }))
            }
        }
    }
}

impl ToolBackend for SimTool {
    fn call(&self, call_id: &str, args: &Args) -> Result<Value, ToolError> {
        let s = &self.shared;
        let nth = s.invocations.fetch_add(1, Ordering::SeqCst);
        let mut rng = s.rng(call_id);
        let eligible = match s.noise.fault_scope {
            FaultScope::EveryCall => true,
            FaultScope::FirstCallOnly => nth == 0,
        };
        if eligible && s.noise.p_tool_fault > 0.0 && rng.gen_bool(s.noise.p_tool_fault) {
            let log = format!(
                "Traceback (most recent call last):\n  File \"adapters/{0}.py\", line 88, in invoke\n    return self.model(batch)\nRuntimeError: injected fault in {0} (call {call_id})",
                self.name
            );
            return Err(ToolError::new(ErrorCode::BackendFailure, format!("{} raised an exception", self.name)).with_log(log));
        }
        self.run(&mut rng, args)
    }
}

/// Registry with the five oracle tools over `scenario`. Build one per episode
/// so the first-call fault counter starts fresh.
pub fn standard_registry(scenario: Arc<Scenario>, noise: NoiseConfig, defaults: ToolDefaults) -> Registry {
    let shared = Arc::new(Shared {
        scenario,
        noise,
        defaults,
        invocations: AtomicU64::new(0),
    });
    let kinds = [
        (Kind::Audio, AUDIO_CLASSIFY),
        (Kind::Coarse, TEMPORAL_SEARCH_COARSE),
        (Kind::Fine, TEMPORAL_SEARCH_FINE),
        (Kind::Identify, IDENTIFY_INSTANCE),
        (Kind::Segment, SEGMENT_AND_TRACK),
    ];
    let mut registry = Registry::new();
    for (descriptor, (kind, name)) in standard_descriptors().into_iter().zip(kinds) {
        debug_assert_eq!(descriptor.name, name);
        let backend = Arc::new(SimTool {
            kind,
            name,
            shared: Arc::clone(&shared),
        });
        registry
            .register(descriptor, backend)
            .expect("standard descriptors are valid and distinct");
    }
    registry
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MaskSequence;
    use crate::protocol::{ToolCall, ToolEndpoint, ToolResult};
    use crate::scenario::{generate_scenario, GenerationParams, QueryKind};
    use std::time::Duration;

    fn args(v: Value) -> Args {
        v.as_object().cloned().unwrap()
    }

    fn invoke(r: &Registry, id: &str, tool: &str, a: Value) -> ToolResult {
        r.invoke(&ToolCall::new(id, tool, args(a)), Duration::from_secs(10))
    }

    fn scenario(kind: QueryKind) -> Arc<Scenario> {
        let p = GenerationParams {
            query_kind: Some(kind),
            ..GenerationParams::default()
        };
        Arc::new(generate_scenario(11, &p).unwrap())
    }

    #[test]
    fn five_tools_in_order() {
        let r = standard_registry(scenario(QueryKind::WholeVideo), NoiseConfig::default(), ToolDefaults::default());
        let names: Vec<String> = r.list_tools().unwrap().into_iter().map(|d| d.name).collect();
        assert_eq!(
            names,
            [AUDIO_CLASSIFY, TEMPORAL_SEARCH_COARSE, TEMPORAL_SEARCH_FINE, IDENTIFY_INSTANCE, SEGMENT_AND_TRACK]
        );
    }

    #[test]
    fn segment_round_trips_through_json() {
        let s = scenario(QueryKind::WholeVideo);
        let target = s.queries[0].gt_object_id.clone();
        let r = standard_registry(Arc::clone(&s), NoiseConfig::default(), ToolDefaults::default());
        let res = invoke(&r, "a", SEGMENT_AND_TRACK, json!({"pivot_frame": 0, "object_id": target}));
        let masks: MaskSequence = serde_json::from_value(res.outcome.unwrap()["masks"].clone()).unwrap();
        assert_eq!(masks, s.ground_truth(&target).unwrap());
    }

    #[test]
    fn bad_values_are_bad_args() {
        let r = standard_registry(scenario(QueryKind::WholeVideo), NoiseConfig::default(), ToolDefaults::default());
        let cases = [
            (SEGMENT_AND_TRACK, json!({"pivot_frame": -1, "object_id": "x"})),
            (SEGMENT_AND_TRACK, json!({"pivot_frame": 0, "object_id": "nobody_9"})),
            (IDENTIFY_INSTANCE, json!({"frames": [], "description": ""})),
            (IDENTIFY_INSTANCE, json!({"frames": [0], "category": "dragon", "description": ""})),
            (TEMPORAL_SEARCH_COARSE, json!({"query": "x", "k": 1})),
            (TEMPORAL_SEARCH_FINE, json!({"query": "x", "stride": 0})),
            (AUDIO_CLASSIFY, json!({"start": 5, "end": 2})),
        ];
        for (tool, a) in cases {
            let res = invoke(&r, "b", tool, a.clone());
            assert_eq!(res.error_code(), Some(ErrorCode::BadArgs), "{tool} {a}");
        }
    }

    #[test]
    fn first_call_fault_only_once() {
        let noise = NoiseConfig {
            p_tool_fault: 1.0,
            fault_scope: FaultScope::FirstCallOnly,
            ..NoiseConfig::default()
        };
        let r = standard_registry(scenario(QueryKind::WholeVideo), noise, ToolDefaults::default());
        let first = invoke(&r, "q-1", AUDIO_CLASSIFY, json!({}));
        assert_eq!(first.error_code(), Some(ErrorCode::BackendFailure));
        assert!(first.outcome.unwrap_err().log.contains("Traceback"));
        assert!(invoke(&r, "q-2", AUDIO_CLASSIFY, json!({})).is_ok());
    }

    #[test]
    fn noise_is_keyed_by_call_id() {
        let noise = NoiseConfig {
            rng_seed: 3,
            p_search_miss: 0.5,
            ..NoiseConfig::default()
        };
        let s = scenario(QueryKind::SegmentLong);
        let q = s.queries[0].expression.clone();
        let a = standard_registry(Arc::clone(&s), noise.clone(), ToolDefaults::default());
        let b = standard_registry(s, noise, ToolDefaults::default());
        let mut misses = 0;
        for i in 0..40 {
            let id = format!("c{i}");
            let x = invoke(&a, &id, TEMPORAL_SEARCH_COARSE, json!({"query": q}));
            let y = invoke(&b, &id, TEMPORAL_SEARCH_COARSE, json!({"query": q}));
            assert_eq!(x, y);
            if x.outcome.unwrap()["matched"] == json!(false) {
                misses += 1;
            }
        }
        assert!(misses > 5 && misses < 35, "{misses}");
    }

    #[test]
    fn erosion_noise_shrinks_masks() {
        let s = scenario(QueryKind::WholeVideo);
        let target = s.queries[0].gt_object_id.clone();
        let noise = NoiseConfig {
            mask_erosion_px: 1,
            ..NoiseConfig::default()
        };
        let r = standard_registry(Arc::clone(&s), noise, ToolDefaults::default());
        let res = invoke(&r, "a", SEGMENT_AND_TRACK, json!({"pivot_frame": 0, "object_id": target}));
        let masks: MaskSequence = serde_json::from_value(res.outcome.unwrap()["masks"].clone()).unwrap();
        let gt = s.ground_truth(&target).unwrap();
        let a: u64 = masks.masks().iter().map(|m| m.area()).sum();
        let b: u64 = gt.masks().iter().map(|m| m.area()).sum();
        assert!(a < b);
    }
}
