//! Reference classification, query consolidation and plan selection.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::remote::{ChatClient, RemoteConfig};
use crate::scenario::narrative::{EVENTS_HEADER, OBJECTS_HEADER};
use crate::scenario::vocab::{self, QueryTerms};
use crate::scenario::Query;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReferenceType {
    CategoryLevel,
    WholeVideoInstance,
    SegmentSpecificInstance,
}

impl ReferenceType {
    pub const ALL: [ReferenceType; 3] = [
        ReferenceType::CategoryLevel,
        ReferenceType::WholeVideoInstance,
        ReferenceType::SegmentSpecificInstance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReferenceType::CategoryLevel => "CATEGORY_LEVEL",
            ReferenceType::WholeVideoInstance => "WHOLE_VIDEO_INSTANCE",
            ReferenceType::SegmentSpecificInstance => "SEGMENT_SPECIFIC_INSTANCE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s.trim())
    }
}

impl fmt::Display for ReferenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlanIntent {
    Audio,
    CoarseSearch,
    FineSearch,
    Identify,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub intent: PlanIntent,
    pub rationale: String,
    /// Executed only when the preceding step did not succeed.
    #[serde(default)]
    pub contingent: bool,
}

impl PlanStep {
    fn new(intent: PlanIntent, rationale: &str) -> Self {
        PlanStep {
            intent,
            rationale: rationale.into(),
            contingent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub reference_type: ReferenceType,
    pub consolidated_query: String,
    pub category_hint: Option<String>,
    pub use_audio_first: bool,
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let intents: Vec<PlanIntent> = self.steps.iter().map(|s| s.intent).collect();
        if intents.last() != Some(&PlanIntent::Segment) {
            return Err(PlannerError::InvalidPlan("plan must end with SEGMENT".into()));
        }
        let coarse = intents.iter().position(|&i| i == PlanIntent::CoarseSearch);
        if let Some(fine) = intents.iter().position(|&i| i == PlanIntent::FineSearch) {
            if coarse.is_none_or(|c| c > fine) {
                return Err(PlannerError::InvalidPlan("FINE_SEARCH precedes COARSE_SEARCH".into()));
            }
        }
        if intents.contains(&PlanIntent::Audio) != self.use_audio_first {
            return Err(PlannerError::InvalidPlan("AUDIO step must be present iff use_audio_first".into()));
        }
        Ok(())
    }

    pub fn intents(&self) -> Vec<PlanIntent> {
        self.steps.iter().map(|s| s.intent).collect()
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("planner backend failed: {0}")]
    Backend(String),
}

/// `(object_id, attribute words, category)` for each object line.
fn narrative_objects(narrative: &str) -> Vec<(String, Vec<String>, Option<&'static str>)> {
    let mut out = Vec::new();
    let mut in_objects = false;
    for line in narrative.lines() {
        let line = line.trim();
        if line == OBJECTS_HEADER {
            in_objects = true;
            continue;
        }
        if line == EVENTS_HEADER {
            in_objects = false;
            continue;
        }
        if !in_objects {
            continue;
        }
        let Some((id, rest)) = line.split_once(": ") else { continue };
        let phrase = rest.split(", visible frames").next().unwrap_or(rest);
        let mut attributes = Vec::new();
        let mut category = None;
        for t in vocab::tokenize(phrase) {
            if let Some(c) = vocab::category_of_token(&t) {
                category = Some(c);
            } else if vocab::is_attribute(&t) {
                attributes.push(t);
            }
        }
        out.push((id.to_string(), attributes, category));
    }
    out
}

/// Motion phrase of each event line.
fn narrative_motions(narrative: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_events = false;
    for line in narrative.lines() {
        let line = line.trim();
        if line == EVENTS_HEADER {
            in_events = true;
            continue;
        }
        if line == OBJECTS_HEADER {
            in_events = false;
            continue;
        }
        if !in_events {
            continue;
        }
        let body = line.split_once(": ").map_or(line, |(_, b)| b);
        let body = body.rsplit_once(" [").map_or(body, |(b, _)| b);
        if let Some(m) = QueryTerms::parse(body).motion_phrase {
            out.push(m);
        }
    }
    out
}

fn require_query(query: &str) -> Result<(), PlannerError> {
    if vocab::tokenize(query).is_empty() {
        return Err(PlannerError::Parameter("query must not be empty".into()));
    }
    Ok(())
}

pub fn classify_reference(query: &str, narrative: &str) -> Result<ReferenceType, PlannerError> {
    require_query(query)?;
    let terms = QueryTerms::parse(query);
    if let Some(m) = &terms.motion_phrase {
        if narrative_motions(narrative).iter().any(|n| n == m) {
            return Ok(ReferenceType::SegmentSpecificInstance);
        }
    }
    if !terms.categories.is_empty() && terms.attributes.is_empty() && terms.motion_phrase.is_none() {
        return Ok(ReferenceType::CategoryLevel);
    }
    Ok(ReferenceType::WholeVideoInstance)
}

/// Inserts the attributes of the single narrative object consistent with the
/// query. Words of the original query are never removed.
pub fn consolidate_query(query: &str, narrative: &str) -> String {
    let terms = QueryTerms::parse(query);
    let consistent: Vec<_> = narrative_objects(narrative)
        .into_iter()
        .filter(|(_, attrs, cat)| {
            (terms.categories.is_empty() || cat.is_some_and(|c| terms.categories.contains(&c)))
                && terms.attributes.iter().all(|a| attrs.contains(a))
        })
        .collect();
    let [(_, attrs, _)] = consistent.as_slice() else {
        return query.to_string();
    };
    let missing: Vec<&str> = attrs
        .iter()
        .filter(|a| !terms.attributes.contains(a))
        .map(String::as_str)
        .collect();
    if missing.is_empty() {
        return query.to_string();
    }
    let words: Vec<&str> = query.split_whitespace().collect();
    let is_head = |w: &str| {
        let t = vocab::tokenize(w);
        t.iter().any(|t| vocab::is_attribute(t) || vocab::category_of_token(t).is_some())
    };
    let is_verb = |w: &str| vocab::tokenize(w).iter().any(|t| vocab::is_motion_verb(t));
    let verb_at = words.iter().position(|w| is_verb(w)).unwrap_or(words.len());
    let at = words[..verb_at].iter().position(|w| is_head(w)).unwrap_or(verb_at);
    let mut out: Vec<&str> = Vec::with_capacity(words.len() + missing.len());
    out.extend_from_slice(&words[..at]);
    out.extend(missing);
    out.extend_from_slice(&words[at..]);
    out.join(" ")
}

pub fn make_plan(reference_type: ReferenceType, consolidated_query: &str, has_audio: bool) -> Plan {
    use PlanIntent::*;
    let mut steps = match reference_type {
        ReferenceType::CategoryLevel => vec![
            PlanStep::new(Identify, "detect every instance of the category on sampled frames"),
            PlanStep::new(Segment, "segment and track the selected instance"),
        ],
        ReferenceType::WholeVideoInstance => vec![
            PlanStep::new(Identify, "pick the instance whose appearance matches the query"),
            PlanStep::new(Segment, "segment and track the selected instance"),
        ],
        ReferenceType::SegmentSpecificInstance => vec![
            PlanStep::new(CoarseSearch, "locate the described event on uniformly sampled frames"),
            PlanStep {
                contingent: true,
                ..PlanStep::new(FineSearch, "scan densely if the coarse pass missed the event")
            },
            PlanStep::new(Identify, "pick the instance performing the action inside the window"),
            PlanStep::new(Segment, "segment from the pivot frame and track"),
        ],
    };
    if has_audio {
        steps.insert(0, PlanStep::new(Audio, "find out which source is sounding"));
    }
    let category_hint = QueryTerms::parse(consolidated_query).category().map(str::to_string);
    Plan {
        reference_type,
        consolidated_query: consolidated_query.to_string(),
        category_hint,
        use_audio_first: has_audio,
        steps,
    }
}

/// Anything that can turn a query and narrative into a plan.
pub trait PlannerBackend: Send + Sync {
    fn plan(&self, query: &Query, narrative: &str) -> Result<Plan, PlannerError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedPlanner;

impl PlannerBackend for RuleBasedPlanner {
    fn plan(&self, query: &Query, narrative: &str) -> Result<Plan, PlannerError> {
        let reference = classify_reference(&query.expression, narrative)?;
        let consolidated = consolidate_query(&query.expression, narrative);
        let plan = make_plan(reference, &consolidated, query.uses_audio);
        plan.validate()?;
        Ok(plan)
    }
}

/// Returns a fixed plan regardless of input; for tests and replays.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    pub plan: Plan,
}

impl PlannerBackend for ScriptedPlanner {
    fn plan(&self, _query: &Query, _narrative: &str) -> Result<Plan, PlannerError> {
        self.plan.validate()?;
        Ok(self.plan.clone())
    }
}

pub const REMOTE_PLANNER_TEMPLATE: &str = "\
You classify referring expressions for video object segmentation.
Reply with one line: CATEGORY_LEVEL, WHOLE_VIDEO_INSTANCE or SEGMENT_SPECIFIC_INSTANCE.
CATEGORY_LEVEL: the query names only an object category.
WHOLE_VIDEO_INSTANCE: the query singles out one instance by appearance.
SEGMENT_SPECIFIC_INSTANCE: the query refers to an action that happens during part of the video.

Video narrative:
{narrative}
Query: {query}
Answer:";

/// Asks a chat endpoint for the reference type; consolidation and plan
/// selection stay rule-based so the plan contract holds.
pub struct RemotePlanner {
    client: ChatClient,
}

impl RemotePlanner {
    pub fn new(config: RemoteConfig) -> Self {
        RemotePlanner {
            client: ChatClient::new(config),
        }
    }

    pub fn render_prompt(query: &str, narrative: &str) -> String {
        REMOTE_PLANNER_TEMPLATE
            .replace("{narrative}", narrative.trim_end())
            .replace("{query}", query)
    }
}

impl PlannerBackend for RemotePlanner {
    fn plan(&self, query: &Query, narrative: &str) -> Result<Plan, PlannerError> {
        require_query(&query.expression)?;
        let prompt = Self::render_prompt(&query.expression, narrative);
        let reply = self
            .client
            .complete(&prompt, &[], 32)
            .map_err(|e| PlannerError::Backend(e.to_string()))?;
        let reference = reply
            .split_whitespace()
            .find_map(ReferenceType::parse)
            .ok_or_else(|| PlannerError::Backend(format!("unrecognized reference type in reply `{}`", reply.trim())))?;
        let consolidated = consolidate_query(&query.expression, narrative);
        let plan = make_plan(reference, &consolidated, query.uses_audio);
        plan.validate()?;
        Ok(plan)
    }
}
