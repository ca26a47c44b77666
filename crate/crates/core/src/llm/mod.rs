//! Text generation backends driven by the reasoning loop.

mod policy;
pub mod remote;

pub use policy::PolicyGenerator;
pub use remote::{ChatClient, RemoteConfig, RemoteGenerator};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Step;
use crate::planner::Plan;
use crate::scenario::Query;
use crate::tools::ToolDefaults;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub stop_sequences: Vec<String>,
    /// Budget in characters; no tokenizer is involved.
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    StopSequence,
    Length,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("playback error: {0}")]
    Playback(String),
    #[error("connectivity error: {0}")]
    Connectivity(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

/// Structured view of an episode in progress, for backends that do not
/// want to re-read the prompt.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeState<'a> {
    pub query: &'a Query,
    pub plan: &'a Plan,
    pub num_frames: u32,
    pub tool_defaults: ToolDefaults,
    pub steps: &'a [Step],
}

pub trait TextGenerator: Send {
    fn generate(
        &mut self,
        request: &GenerationRequest,
        state: &EpisodeState<'_>,
    ) -> Result<GenerationResult, GenerationError>;
}

/// Cuts `text` at the earliest stop sequence, then at the length budget.
pub fn truncate_generation(text: &str, request: &GenerationRequest) -> GenerationResult {
    let cut = request
        .stop_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    let (mut text, mut reason) = match cut {
        Some(at) => (&text[..at], StopReason::StopSequence),
        None => (text, StopReason::End),
    };
    if text.chars().count() > request.max_new_tokens {
        let end = text
            .char_indices()
            .nth(request.max_new_tokens)
            .map_or(text.len(), |(i, _)| i);
        text = &text[..end];
        reason = StopReason::Length;
    }
    GenerationResult {
        text: text.to_string(),
        stop_reason: reason,
    }
}

/// Plays back canned responses in order.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    queue: VecDeque<String>,
    repeat: Option<String>,
}

impl ScriptedGenerator {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedGenerator {
            queue: responses.into_iter().map(Into::into).collect(),
            repeat: None,
        }
    }

    /// Emits `response` forever once the queue is drained.
    pub fn repeating(response: impl Into<String>) -> Self {
        ScriptedGenerator {
            queue: VecDeque::new(),
            repeat: Some(response.into()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl TextGenerator for ScriptedGenerator {
    fn generate(
        &mut self,
        request: &GenerationRequest,
        _state: &EpisodeState<'_>,
    ) -> Result<GenerationResult, GenerationError> {
        let next = match (self.queue.pop_front(), &self.repeat) {
            (Some(text), _) => text,
            (None, Some(text)) => text.clone(),
            (None, None) => return Err(GenerationError::Playback("scripted responses exhausted".into())),
        };
        Ok(truncate_generation(&next, request))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{make_plan, ReferenceType};

    fn request(stops: &[&str]) -> GenerationRequest {
        GenerationRequest {
            prompt: String::new(),
            stop_sequences: stops.iter().map(|s| s.to_string()).collect(),
            max_new_tokens: 4096,
        }
    }

    fn with_state<R>(f: impl FnOnce(&EpisodeState<'_>) -> R) -> R {
        let query = Query {
            query_id: "q".into(),
            expression: "the car".into(),
            uses_audio: false,
            gt_object_id: "car_0".into(),
            gt_reference_type: ReferenceType::CategoryLevel,
        };
        let plan = make_plan(ReferenceType::CategoryLevel, "the car", false);
        f(&EpisodeState {
            query: &query,
            plan: &plan,
            num_frames: 10,
            tool_defaults: ToolDefaults::default(),
            steps: &[],
        })
    }

    #[test]
    fn truncates_at_observation_tag() {
        let r = truncate_generation(
            "Thought: x\nAction: f(a=1)\nObservation: junk",
            &request(&["Observation:"]),
        );
        assert_eq!(r.text, "Thought: x\nAction: f(a=1)\n");
        assert_eq!(r.stop_reason, StopReason::StopSequence);
        let r = truncate_generation("abc", &request(&["Observation:"]));
        assert_eq!(r.stop_reason, StopReason::End);
    }

    #[test]
    fn earliest_stop_wins_and_length_applies() {
        let r = truncate_generation("aXbYc", &request(&["Y", "X"]));
        assert_eq!(r.text, "a");
        let mut req = request(&[]);
        req.max_new_tokens = 3;
        let r = truncate_generation("héllo", &req);
        assert_eq!((r.text.as_str(), r.stop_reason), ("hél", StopReason::Length));
    }

    #[test]
    fn scripted_playback() {
        with_state(|state| {
            let mut g = ScriptedGenerator::new(["one", "two"]);
            let req = request(&["Observation:"]);
            assert_eq!(g.generate(&req, state).unwrap().text, "one");
            assert_eq!(g.generate(&req, state).unwrap().text, "two");
            assert!(matches!(g.generate(&req, state), Err(GenerationError::Playback(_))));
            let mut g = ScriptedGenerator::repeating("again");
            for _ in 0..3 {
                assert_eq!(g.generate(&req, state).unwrap().text, "again");
            }
        });
    }
}
