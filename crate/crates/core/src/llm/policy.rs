//! Deterministic reference agent. It reads the plan and the observations so
//! far, replays its own decision procedure against them, and writes the next
//! Thought plus Action or Final Answer.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::{truncate_generation, EpisodeState, GenerationError, GenerationRequest, GenerationResult, TextGenerator};
use crate::engine::{parse_observation, render_call, render_final, FinalAnswer, Step};
use crate::planner::PlanIntent;
use crate::protocol::Args;
use crate::scenario::vocab;
use crate::tools::{self, coarse_sample_indices};

pub const MIN_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyGenerator;

impl PolicyGenerator {
    pub fn new() -> Self {
        PolicyGenerator
    }
}

impl TextGenerator for PolicyGenerator {
    fn generate(
        &mut self,
        request: &GenerationRequest,
        state: &EpisodeState<'_>,
    ) -> Result<GenerationResult, GenerationError> {
        Ok(truncate_generation(&decide(state), request))
    }
}

/// Text of the next step.
pub fn decide(state: &EpisodeState<'_>) -> String {
    let mut replay = Replay {
        steps: state.steps,
        pos: 0,
    };
    match run(state, &mut replay) {
        Ok(text) | Err(text) => text,
    }
}

/// `Err` carries the text of an action that has not been taken yet.
type Pending<T> = Result<T, String>;

struct Replay<'a> {
    steps: &'a [Step],
    pos: usize,
}

impl Replay<'_> {
    /// Observation of the next recorded step, if it exists.
    fn take(&mut self) -> Option<Result<Value, String>> {
        let step = self.steps.get(self.pos)?;
        self.pos += 1;
        Some(match &step.observation {
            Some(obs) => parse_observation(obs),
            None => Err("no observation".into()),
        })
    }

    /// Issues `tool(args)`; a failed call is repeated once. Returns the
    /// final outcome, or the text to emit when the call has not happened yet.
    fn call(&mut self, thought: &str, tool: &str, args: &Value) -> Pending<Result<Value, String>> {
        let first = self.take().ok_or_else(|| action_text(thought, tool, args))?;
        if first.is_ok() {
            return Ok(first);
        }
        self.take()
            .ok_or_else(|| action_text("The tool reported an error. I repeat the same call once.", tool, args))
    }
}

fn to_args(v: &Value) -> Args {
    v.as_object().cloned().unwrap_or_default()
}

fn action_text(thought: &str, tool: &str, args: &Value) -> String {
    let call = render_call(tool, &to_args(args)).expect("policy arguments have literal forms");
    format!("Thought: {thought}\nAction: {call}")
}

fn final_text(thought: &str, answer: &FinalAnswer) -> String {
    format!("Thought: {thought}\nFinal Answer: {}", render_final(answer))
}

fn window_of(v: &Value) -> Option<(u32, u32)> {
    if v["matched"] != json!(true) {
        return None;
    }
    let s = v["window"]["start"].as_u64()?;
    let e = v["window"]["end"].as_u64()?;
    Some((s as u32, e as u32))
}

/// `(object_id, detection frames)` when the identifier found a confident
/// winner.
fn winner(v: &Value, need_confidence: bool) -> Option<(String, Vec<u32>)> {
    let id = v["object_id"].as_str()?.to_string();
    let conf = v["confidence"].as_f64().unwrap_or(0.0);
    if need_confidence && conf < MIN_CONFIDENCE {
        return None;
    }
    let mut frames: Vec<u32> = v["detections"]
        .as_array()
        .map(|ds| {
            ds.iter()
                .filter(|d| d["object_id"] == json!(id))
                .filter_map(|d| d["frame_index"].as_u64().map(|f| f as u32))
                .collect()
        })
        .unwrap_or_default();
    frames.sort_unstable();
    frames.dedup();
    Some((id, frames))
}

fn run(state: &EpisodeState<'_>, replay: &mut Replay<'_>) -> Pending<String> {
    let plan = state.plan;
    let t = state.num_frames;
    let defaults = state.tool_defaults;
    let k = defaults.coarse_k.clamp(2, t.max(2)).min(t);
    let samples = coarse_sample_indices(t, k).unwrap_or_else(|_| vec![0]);
    let query = plan.consolidated_query.as_str();
    let has = |i: PlanIntent| plan.steps.iter().any(|s| s.intent == i);
    let mut category = plan.category_hint.clone();

    if plan.use_audio_first {
        let r = replay.call("The query involves sound. I check which source is audible.", tools::AUDIO_CLASSIFY, &json!({}))?;
        if category.is_none() {
            category = r
                .ok()
                .and_then(|v| v["classes"][0]["label"].as_str().map(str::to_string))
                .and_then(|l| vocab::category_for_audio_class(&l).map(str::to_string));
        }
    }

    let mut window = None;
    if has(PlanIntent::CoarseSearch) {
        let r = replay.call(
            "The query describes an action. I look for it on uniformly sampled frames.",
            tools::TEMPORAL_SEARCH_COARSE,
            &json!({"query": query, "k": k}),
        )?;
        window = r.ok().as_ref().and_then(window_of);
        if window.is_none() && has(PlanIntent::FineSearch) {
            let r = replay.call(
                "The coarse pass did not see the event. I scan the video densely.",
                tools::TEMPORAL_SEARCH_FINE,
                &json!({"query": query}),
            )?;
            window = r.ok().as_ref().and_then(window_of);
        }
    }

    let window_frames: Vec<u32> = window.map(|(s, e)| (s..=e).collect()).unwrap_or_default();
    let first_frames = if window_frames.is_empty() { samples.clone() } else { window_frames.clone() };
    let wider: Vec<u32> = window_frames
        .iter()
        .chain(samples.iter())
        .copied()
        .collect::<BTreeSet<u32>>()
        .into_iter()
        .collect();

    let identify_args = |frames: &[u32], category: Option<&str>| {
        let mut a = json!({"frames": frames, "description": query});
        if let Some(c) = category {
            a["category"] = json!(c);
        }
        a
    };
    let where_ = if window.is_some() { "inside the matched window" } else { "on the sampled frames" };
    let mut attempts = vec![(
        format!("I identify the target {where_}."),
        identify_args(&first_frames, category.as_deref()),
    )];
    attempts.push((
        "The identification was not conclusive. I try again over more frames.".to_string(),
        identify_args(&wider, category.as_deref()),
    ));
    if category.is_some() {
        attempts.push((
            "Still not conclusive. I drop the category restriction.".to_string(),
            identify_args(&wider, None),
        ));
    }

    let mut seen_args = Vec::new();
    attempts.retain(|(_, a)| {
        let fresh = !seen_args.contains(a);
        seen_args.push(a.clone());
        fresh
    });

    let mut confident = None;
    let mut weak = None;
    for (thought, a) in &attempts {
        let r = replay.call(thought, tools::IDENTIFY_INSTANCE, a)?;
        let Ok(v) = r else { continue };
        if let Some(w) = winner(&v, true) {
            confident = Some(w);
            break;
        }
        if weak.is_none() {
            weak = winner(&v, false);
        }
    }

    let answer = match confident.or(weak) {
        Some((object_id, seen)) => {
            let pivot_frame = match window {
                Some((s, _)) if seen.contains(&s) => s,
                _ => seen.first().copied().unwrap_or(samples[0]),
            };
            FinalAnswer { pivot_frame, object_id }
        }
        None => {
            // nothing identified: answer anyway so the loop can continue
            return Ok(final_text(
                "No instance could be identified.",
                &FinalAnswer {
                    pivot_frame: samples[0],
                    object_id: String::from("none"),
                },
            ));
        }
    };
    let thought = format!(
        "{} is the target and it is visible at frame {}.",
        answer.object_id, answer.pivot_frame
    );
    Ok(final_text(&thought, &answer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{parse_agent_text, AgentAction, StepAction};
    use crate::planner::{make_plan, Plan, ReferenceType};
    use crate::protocol::ToolCall;
    use crate::scenario::Query;
    use crate::tools::ToolDefaults;

    fn query() -> Query {
        Query {
            query_id: "q".into(),
            expression: "the black car turning left".into(),
            uses_audio: false,
            gt_object_id: "car_1".into(),
            gt_reference_type: ReferenceType::SegmentSpecificInstance,
        }
    }

    fn step(index: usize, text: &str, observation: &str) -> Step {
        let action = match parse_agent_text(text).unwrap().action {
            AgentAction::Call { tool, args } => StepAction::Call(ToolCall::new(format!("q-{index}"), tool, args)),
            AgentAction::Final(f) => StepAction::Final(f),
        };
        Step {
            index,
            raw_text: text.into(),
            thought: String::new(),
            action,
            observation: Some(observation.into()),
        }
    }

    fn next(plan: &Plan, steps: &[Step]) -> String {
        let q = query();
        decide(&EpisodeState {
            query: &q,
            plan,
            num_frames: 100,
            tool_defaults: ToolDefaults::default(),
            steps,
        })
    }

    fn tool_of(text: &str) -> String {
        match parse_agent_text(text).unwrap().action {
            AgentAction::Call { tool, .. } => tool,
            AgentAction::Final(_) => "FINAL".into(),
        }
    }

    #[test]
    fn segment_plan_starts_with_coarse_search() {
        let plan = make_plan(ReferenceType::SegmentSpecificInstance, "the black car turning left", false);
        assert_eq!(tool_of(&next(&plan, &[])), tools::TEMPORAL_SEARCH_COARSE);
    }

    #[test]
    fn coarse_miss_leads_to_fine_search() {
        let plan = make_plan(ReferenceType::SegmentSpecificInstance, "the black car turning left", false);
        let s1 = next(&plan, &[]);
        let steps = [step(1, &s1, r#"{"matched":false,"sampled":[0,14],"window":null}"#)];
        assert_eq!(tool_of(&next(&plan, &steps)), tools::TEMPORAL_SEARCH_FINE);
    }

    #[test]
    fn tool_error_is_retried_once() {
        let plan = make_plan(ReferenceType::CategoryLevel, "the car", false);
        let s1 = next(&plan, &[]);
        let mut steps = vec![step(1, &s1, "ERROR BACKEND_FAILURE: boom\nTraceback")];
        let s2 = next(&plan, &steps);
        let (a1, a2) = (parse_agent_text(&s1).unwrap().action, parse_agent_text(&s2).unwrap().action);
        assert_eq!(a1, a2);
        steps.push(step(2, &s2, "ERROR BACKEND_FAILURE: boom"));
        // after the retry fails, it moves on to a different identify
        let s3 = next(&plan, &steps);
        assert_eq!(tool_of(&s3), tools::IDENTIFY_INSTANCE);
        assert_ne!(parse_agent_text(&s3).unwrap().action, a1);
    }

    #[test]
    fn confident_identify_gives_final_answer() {
        let plan = make_plan(ReferenceType::CategoryLevel, "the car", false);
        let s1 = next(&plan, &[]);
        let obs = r#"{"annotated":[],"confidence":1.0,"detections":[{"box":[0,0,1,1],"category":"car","frame_index":28,"object_id":"car_1"}],"object_id":"car_1"}"#;
        let s2 = next(&plan, &[step(1, &s1, obs)]);
        match parse_agent_text(&s2).unwrap().action {
            AgentAction::Final(f) => assert_eq!(f, FinalAnswer { pivot_frame: 28, object_id: "car_1".into() }),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn low_confidence_triggers_retry() {
        let plan = make_plan(ReferenceType::WholeVideoInstance, "the black car", false);
        let s1 = next(&plan, &[]);
        let obs = r#"{"annotated":[],"confidence":0.3,"detections":[],"object_id":"car_0"}"#;
        let s2 = next(&plan, &[step(1, &s1, obs)]);
        assert_eq!(tool_of(&s2), tools::IDENTIFY_INSTANCE);
    }

    #[test]
    fn audio_plan_starts_with_audio() {
        let plan = make_plan(ReferenceType::CategoryLevel, "the dog", true);
        assert_eq!(tool_of(&next(&plan, &[])), tools::AUDIO_CLASSIFY);
    }
}
