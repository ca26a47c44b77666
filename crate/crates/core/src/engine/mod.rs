//! The Thought/Action/Observation loop, the fallback strategy and traces.

mod grammar;
mod trace;

pub use grammar::{
    parse_agent_text, render_call, render_final, AgentAction, FinalAnswer, ParseError, ParsedText,
    RenderError, ACTION_TAG, FINAL_TAG, THOUGHT_TAG,
};
pub use trace::{read_trace, write_trace, TraceError};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm::{EpisodeState, GenerationError, GenerationRequest, TextGenerator};
use crate::metrics::MaskSequence;
use crate::planner::Plan;
use crate::protocol::{render_descriptors, Args, ErrorCode, ToolCall, ToolDescriptor, ToolEndpoint, ToolError, ToolResult};
use crate::scenario::Scenario;
use crate::scenario::Query;
use crate::tools::{self, ToolDefaults};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OBSERVATION_TAG: &str = "Observation:";
pub const MAX_LOG_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_steps: usize,
    pub observation_tag: String,
    pub stop_sequences: Vec<String>,
    pub tool_timeout_ms: u64,
    pub max_new_tokens: usize,
    pub in_context_examples: Vec<String>,
    pub tool_defaults: ToolDefaults,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_steps: 10,
            observation_tag: DEFAULT_OBSERVATION_TAG.into(),
            stop_sequences: vec![DEFAULT_OBSERVATION_TAG.into()],
            tool_timeout_ms: 30_000,
            max_new_tokens: 2048,
            in_context_examples: default_examples(),
            tool_defaults: ToolDefaults::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.max_steps < 1 {
            return Err(EpisodeError::Config("max_steps must be at least 1".into()));
        }
        if !self.stop_sequences.contains(&self.observation_tag) {
            return Err(EpisodeError::Config("observation_tag must be one of the stop sequences".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(EpisodeError::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn tool_timeout(&self) -> Duration {
        Duration::from_millis(self.tool_timeout_ms)
    }
}

/// The two worked examples shipped with the engine.
pub fn default_examples() -> Vec<String> {
    vec![
        "Query: the red car turning left\n\
Thought: The query names an action, so I first look for the moment it happens.\n\
Action: temporal_search_coarse(k=8, query=\"the red car turning left\")\n\
Observation: {\"matched\":true,\"sampled\":[0,14,28,42,57,71,85,99],\"window\":{\"end\":71,\"start\":57}}\n\
Thought: The event is visible in frames 57 to 71. I identify the car there.\n\
Action: identify_instance(category=\"car\", description=\"the red car turning left\", frames=[57, 58, 59, 60])\n\
Observation: {\"annotated\":[],\"confidence\":1.0,\"detections\":[{\"box\":[3,4,9,8],\"category\":\"car\",\"frame_index\":57,\"object_id\":\"car_2\"}],\"object_id\":\"car_2\"}\n\
Thought: car_2 is the car turning left and it is visible at frame 57.\n\
Final Answer: {\"object_id\":\"car_2\",\"pivot_frame\":57}"
            .to_string(),
        "Query: the horses\n\
Thought: Only a category is named; any horse that appears is the target.\n\
Action: identify_instance(category=\"horse\", description=\"the horses\", frames=[0, 14, 28])\n\
Observation: ERROR BACKEND_FAILURE: identify_instance raised an exception\n\
Thought: The tool failed. I try the same call again.\n\
Action: identify_instance(category=\"horse\", description=\"the horses\", frames=[0, 14, 28])\n\
Observation: {\"annotated\":[],\"confidence\":1.0,\"detections\":[{\"box\":[10,2,20,9],\"category\":\"horse\",\"frame_index\":14,\"object_id\":\"horse_0\"}],\"object_id\":\"horse_0\"}\n\
Thought: horse_0 first appears at frame 14.\n\
Final Answer: {\"object_id\":\"horse_0\",\"pivot_frame\":14}"
            .to_string(),
    ]
}

const INSTRUCTIONS: &str = "\
You segment the object a query refers to in a video. You cannot see the video; you work \
through tools. Reason step by step. Each step you write one Thought and then either one \
Action or the Final Answer. After an Action, stop; the tool result is given to you as an \
Observation. Tool errors are reported as `ERROR <code>: <message>` followed by the tool \
log. When you know the frame where the target is visible and its object id, give the \
Final Answer; the segmentation and tracking tool is then run for you.";

pub fn build_system_prompt(descriptors: &[ToolDescriptor], config: &EngineConfig) -> String {
    let mut out = String::new();
    out.push_str(INSTRUCTIONS);
    out.push_str("\n\nTools:\n");
    out.push_str(&render_descriptors(descriptors));
    out.push_str("\nFormat:\n");
    out.push_str(&format!(
        "{THOUGHT_TAG} <your reasoning>\n\
{ACTION_TAG} tool_name(key=literal, key=literal)\n\
Literals: \"double-quoted string\", 42, 0.5, true, false, [1, 2, 3].\n\
or, to finish:\n\
{THOUGHT_TAG} <your reasoning>\n\
{FINAL_TAG} {{\"pivot_frame\": <int>, \"object_id\": \"<id>\"}}\n\
Results follow after \"{} \".\n",
        config.observation_tag
    ));
    if !config.in_context_examples.is_empty() {
        out.push_str("\nExamples:\n");
        for (i, ex) in config.in_context_examples.iter().enumerate() {
            out.push_str(&format!("\nExample {}:\n{}\n", i + 1, ex.trim_end()));
        }
    }
    out
}

fn render_plan(plan: &Plan) -> String {
    let mut out = format!("Reference type: {}\n", plan.reference_type);
    out.push_str(&format!("Consolidated query: {}\n", plan.consolidated_query));
    if let Some(c) = &plan.category_hint {
        out.push_str(&format!("Category: {c}\n"));
    }
    out.push_str("Plan:\n");
    for (i, s) in plan.steps.iter().enumerate() {
        let tag = if s.contingent { " (only if the previous step fails)" } else { "" };
        let intent = serde_json::to_value(s.intent).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        out.push_str(&format!("{}. {intent}{tag}: {}\n", i + 1, s.rationale));
    }
    out
}

/// Initial prompt of an episode: system prompt, the task and the plan.
pub fn episode_prompt(system_prompt: &str, query: &Query, plan: &Plan) -> String {
    format!(
        "{system_prompt}\nTask:\nQuery: {}\n{}\n",
        query.expression,
        render_plan(plan)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepAction {
    Call(ToolCall),
    Final(FinalAnswer),
    Invalid { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub raw_text: String,
    pub thought: String,
    pub action: StepAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub schema_version: u32,
    pub query_id: String,
    pub plan: Plan,
    pub steps: Vec<Step>,
    #[serde(rename = "final")]
    pub final_answer: Option<FinalAnswer>,
    pub fallback_used: bool,
    pub wall_time_ms: f64,
    pub episode_error: Option<String>,
}

impl Trace {
    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().filter_map(|s| match &s.action {
            StepAction::Call(c) => Some(c),
            _ => None,
        })
    }

    pub fn parse_errors(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, StepAction::Invalid { .. }))
            .count()
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: Trace,
    /// Empty masks when the episode aborted.
    pub masks: MaskSequence,
}

/// Canonical observation text for a tool result.
pub fn render_observation(result: &ToolResult) -> String {
    match &result.outcome {
        Ok(v) => serde_json::to_string(v).expect("json values serialize"),
        Err(e) => render_tool_error(e),
    }
}

pub fn render_tool_error(e: &ToolError) -> String {
    let mut out = format!("ERROR {}: {}", e.code, e.message);
    if !e.log.is_empty() {
        out.push('\n');
        out.extend(e.log.chars().take(MAX_LOG_CHARS));
    }
    out
}

pub fn render_parse_error(e: &ParseError) -> String {
    format!("ERROR PARSE: {e}")
}

/// Inverse of [`render_observation`] for successful results.
pub fn parse_observation(text: &str) -> Result<Value, String> {
    if text.starts_with("ERROR ") {
        return Err(text.to_string());
    }
    serde_json::from_str(text).map_err(|e| format!("observation is not JSON: {e}"))
}

fn args(v: Value) -> Args {
    match v {
        Value::Object(m) => m,
        _ => Args::new(),
    }
}

fn invoke(tools: &dyn ToolEndpoint, call: &ToolCall, timeout: Duration) -> ToolResult {
    tools.invoke_call(call, timeout).unwrap_or_else(|e| {
        ToolResult::err(
            call.call_id.clone(),
            ToolError::new(ErrorCode::BackendFailure, format!("transport error: {e}")),
        )
    })
}

/// Runs `segment_and_track` and decodes its masks.
fn segment(
    scenario: &Scenario,
    tools: &dyn ToolEndpoint,
    call_id: String,
    answer: &FinalAnswer,
    timeout: Duration,
) -> Result<MaskSequence, String> {
    let t = scenario.num_frames();
    if answer.pivot_frame >= t {
        return Err(render_tool_error(&ToolError::bad_args(format!(
            "pivot_frame {} outside [0, {}]",
            answer.pivot_frame,
            t - 1
        ))));
    }
    let call = ToolCall::new(
        call_id,
        tools::SEGMENT_AND_TRACK,
        args(json!({"pivot_frame": answer.pivot_frame, "object_id": answer.object_id})),
    );
    let value = invoke(tools, &call, timeout).outcome.map_err(|e| render_tool_error(&e))?;
    let masks: MaskSequence = serde_json::from_value(value["masks"].clone())
        .map_err(|e| format!("ERROR BACKEND_FAILURE: malformed masks: {e}"))?;
    let (w, h) = (scenario.video.width, scenario.video.height);
    let shape_ok = masks.len() == t as usize && masks.masks().iter().all(|m| m.width() == w && m.height() == h);
    if !shape_ok {
        return Err("ERROR BACKEND_FAILURE: mask sequence does not match the video shape".into());
    }
    Ok(masks)
}

pub fn run_episode(
    scenario: &Scenario,
    query: &Query,
    plan: &Plan,
    generator: &mut dyn TextGenerator,
    tools: &dyn ToolEndpoint,
    config: &EngineConfig,
) -> Result<EpisodeOutcome, EpisodeError> {
    config.validate()?;
    let started = Instant::now();
    let timeout = config.tool_timeout();
    let descriptors = tools.list_tools().unwrap_or_default();
    let mut prompt = episode_prompt(&build_system_prompt(&descriptors, config), query, plan);
    let (w, h, t) = (scenario.video.width, scenario.video.height, scenario.num_frames());
    let mut steps: Vec<Step> = Vec::new();
    let trace = |steps: Vec<Step>, final_answer, fallback_used, episode_error| Trace {
        schema_version: TRACE_SCHEMA_VERSION,
        query_id: query.query_id.clone(),
        plan: plan.clone(),
        steps,
        final_answer,
        fallback_used,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        episode_error,
    };

    for index in 1..=config.max_steps {
        let request = GenerationRequest {
            prompt: prompt.clone(),
            stop_sequences: config.stop_sequences.clone(),
            max_new_tokens: config.max_new_tokens,
        };
        let state = EpisodeState {
            query,
            plan,
            num_frames: t,
            tool_defaults: config.tool_defaults,
            steps: &steps,
        };
        let generated = match generator.generate(&request, &state) {
            Ok(g) => g,
            Err(e) => {
                let message = e.to_string();
                return Ok(EpisodeOutcome {
                    trace: trace(steps, None, false, Some(message)),
                    masks: MaskSequence::empty(w, h, t as usize),
                });
            }
        };
        let raw = generated.text;
        let call_id = format!("{}-{index}", query.query_id);
        let (thought, action, observation) = match parse_agent_text(&raw) {
            Err(e) => (String::new(), StepAction::Invalid { error: e.to_string() }, render_parse_error(&e)),
            Ok(ParsedText {
                thought,
                action: AgentAction::Call { tool, args },
            }) => {
                let call = ToolCall::new(call_id, tool, args);
                let obs = render_observation(&invoke(tools, &call, timeout));
                (thought, StepAction::Call(call), obs)
            }
            Ok(ParsedText {
                thought,
                action: AgentAction::Final(answer),
            }) => match segment(scenario, tools, call_id, &answer, timeout) {
                Ok(masks) => {
                    steps.push(Step {
                        index,
                        raw_text: raw,
                        thought,
                        action: StepAction::Final(answer.clone()),
                        observation: None,
                    });
                    return Ok(EpisodeOutcome {
                        trace: trace(steps, Some(answer), false, None),
                        masks,
                    });
                }
                Err(obs) => (thought, StepAction::Final(answer), obs),
            },
        };
        prompt.push_str(&raw);
        if !raw.ends_with('\n') {
            prompt.push('\n');
        }
        prompt.push_str(&format!("{} {observation}\n", config.observation_tag));
        steps.push(Step {
            index,
            raw_text: raw,
            thought,
            action,
            observation: Some(observation),
        });
    }

    let answer = apply_fallback(scenario, query, plan, tools, config);
    let masks = segment(scenario, tools, format!("{}-fallback-seg", query.query_id), &answer, timeout)
        .unwrap_or_else(|_| MaskSequence::empty(w, h, t as usize));
    Ok(EpisodeOutcome {
        trace: trace(steps, Some(answer), true, None),
        masks,
    })
}

/// Frame selection followed by box selection, used when the step limit is
/// reached. Never fails: tool errors degrade to the last-resort choice.
pub fn apply_fallback(
    scenario: &Scenario,
    query: &Query,
    plan: &Plan,
    tools: &dyn ToolEndpoint,
    config: &EngineConfig,
) -> FinalAnswer {
    let timeout = config.tool_timeout();
    let t = scenario.num_frames();
    let k = config.tool_defaults.coarse_k.clamp(2, t.max(2));
    let samples = tools::coarse_sample_indices(t, k.min(t)).unwrap_or_else(|_| vec![0]);
    let qid = &query.query_id;

    let coarse = ToolCall::new(
        format!("{qid}-fallback-1"),
        tools::TEMPORAL_SEARCH_COARSE,
        args(json!({"query": plan.consolidated_query, "k": k.min(t)})),
    );
    let window_start = invoke(tools, &coarse, timeout)
        .outcome
        .ok()
        .and_then(|v| v["window"]["start"].as_u64())
        .map(|s| s as u32);
    let pivot = window_start.unwrap_or(samples[0]);

    let mut frames = vec![pivot];
    frames.extend(samples.iter().copied().filter(|&f| f != pivot));
    let mut identify_args = json!({"frames": frames, "description": plan.consolidated_query});
    if let Some(c) = &plan.category_hint {
        identify_args["category"] = json!(c);
    }
    let identify = ToolCall::new(format!("{qid}-fallback-2"), tools::IDENTIFY_INSTANCE, args(identify_args));
    let found = invoke(tools, &identify, timeout).outcome.ok().and_then(|v| {
        let id = v["object_id"].as_str()?.to_string();
        let seen: Vec<u32> = v["detections"]
            .as_array()?
            .iter()
            .filter(|d| d["object_id"] == id)
            .filter_map(|d| d["frame_index"].as_u64().map(|f| f as u32))
            .collect();
        Some((id, seen))
    });
    if let Some((object_id, seen)) = found {
        let pivot_frame = if seen.contains(&pivot) || seen.is_empty() {
            pivot
        } else {
            *seen.iter().min().unwrap()
        };
        return FinalAnswer { pivot_frame, object_id };
    }
    last_resort_answer(scenario, pivot)
}

/// Lexicographically smallest object visible at `pivot`, else the smallest
/// id overall at its first visible frame.
pub fn last_resort_answer(scenario: &Scenario, pivot: u32) -> FinalAnswer {
    let mut visible: Vec<_> = scenario.objects.iter().filter(|o| o.is_visible(pivot)).collect();
    visible.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    if let Some(o) = visible.first() {
        return FinalAnswer {
            pivot_frame: pivot,
            object_id: o.object_id.clone(),
        };
    }
    let o = scenario
        .objects
        .iter()
        .min_by(|a, b| a.object_id.cmp(&b.object_id))
        .expect("validated scenarios have objects");
    FinalAnswer {
        pivot_frame: o.visible_span.start,
        object_id: o.object_id.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayMismatch {
    pub step: usize,
    pub message: String,
}

/// Re-parses every step's raw text and checks it yields the recorded action.
pub fn replay_trace(trace: &Trace) -> Result<usize, ReplayMismatch> {
    for s in &trace.steps {
        let reparsed = match parse_agent_text(&s.raw_text) {
            Err(e) => StepAction::Invalid { error: e.to_string() },
            Ok(p) => match p.action {
                AgentAction::Call { tool, args } => {
                    StepAction::Call(ToolCall::new(format!("{}-{}", trace.query_id, s.index), tool, args))
                }
                AgentAction::Final(f) => StepAction::Final(f),
            },
        };
        if reparsed != s.action {
            return Err(ReplayMismatch {
                step: s.index,
                message: format!("recorded {:?}, reparsed {:?}", s.action, reparsed),
            });
        }
    }
    Ok(trace.steps.len())
}
