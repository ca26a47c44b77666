//! Benchmark suites, agent and baseline runs, reports.

mod report;
mod suite;

pub use report::{compare_reports, Aggregate, Aggregates, Comparison, EvalReport, ReportRow, RunMode, TagDelta};
pub use suite::{
    generate_suite, is_short_event, query_tags, reference_tag, stratify, BenchmarkSuite, SuiteParams, SUITE_FILE,
    TAG_AUDIO, TAG_SHORT_EVENT,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{
    self, render_call, render_final, render_observation, run_episode, write_trace, EngineConfig, FinalAnswer, Step,
    StepAction, Trace, TRACE_SCHEMA_VERSION,
};
use crate::llm::{PolicyGenerator, RemoteConfig, RemoteGenerator, ScriptedGenerator, TextGenerator};
use crate::metrics::{sequence_scores, EvalScores, MaskSequence};
use crate::planner::{classify_reference, Plan, PlanIntent, PlanStep, PlannerBackend, RemotePlanner, RuleBasedPlanner};
use crate::protocol::{Args, ToolCall, ToolEndpoint};
use crate::scenario::vocab::QueryTerms;
use crate::scenario::{load_scenario, synthesize_narrative, Query, Scenario};
use crate::tools::{self, coarse_sample_indices, standard_registry, NoiseConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("comparison error: {0}")]
    Comparison(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Policy,
    /// Responses are replayed in order for every episode.
    Scripted { responses: Vec<String> },
    /// The same response forever.
    Repeating { response: String },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerConfig {
    RuleBased,
    Remote(RemoteConfig),
}

/// Run configuration, loadable from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub backend: BackendConfig,
    pub planner: PlannerConfig,
    pub engine: EngineConfig,
    pub noise: NoiseConfig,
    /// Worker threads; `None` uses every core. Not part of the fingerprint.
    pub parallelism: Option<usize>,
    /// Adds per-row wall time to reports, which makes them non-reproducible.
    pub record_timing: bool,
    /// Where per-query trace files go, if anywhere.
    pub trace_dir: Option<PathBuf>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            backend: BackendConfig::Policy,
            planner: PlannerConfig::RuleBased,
            engine: EngineConfig::default(),
            noise: NoiseConfig::default(),
            parallelism: None,
            record_timing: false,
            trace_dir: None,
        }
    }
}

impl AgentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: AgentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let BackendConfig::Remote(r) = &mut cfg.backend {
            *r = r.clone().with_env_overrides();
        }
        if let PlannerConfig::Remote(r) = &mut cfg.planner {
            *r = r.clone().with_env_overrides();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.engine.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.noise.validate().map_err(HarnessError::Config)?;
        if self.parallelism == Some(0) {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash of everything that can change scores: backend, planner, engine
    /// and noise settings.
    pub fn fingerprint(&self) -> String {
        let v = json!({
            "backend": self.backend,
            "planner": self.planner,
            "engine": self.engine,
            "noise": self.noise,
        });
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    fn generator(&self) -> Box<dyn TextGenerator> {
        match &self.backend {
            BackendConfig::Policy => Box::new(PolicyGenerator::new()),
            BackendConfig::Scripted { responses } => Box::new(ScriptedGenerator::new(responses.clone())),
            BackendConfig::Repeating { response } => Box::new(ScriptedGenerator::repeating(response.clone())),
            BackendConfig::Remote(r) => Box::new(RemoteGenerator::new(r.clone())),
        }
    }

    fn planner(&self) -> Box<dyn PlannerBackend> {
        match &self.planner {
            PlannerConfig::RuleBased => Box::new(RuleBasedPlanner),
            PlannerConfig::Remote(r) => Box::new(RemotePlanner::new(r.clone())),
        }
    }
}

struct Scored {
    scores: EvalScores,
    trace: Trace,
    error: Option<String>,
}

fn score(scenario: &Scenario, query: &Query, masks: &MaskSequence) -> Result<EvalScores, String> {
    let gt = scenario.ground_truth(&query.gt_object_id).map_err(|e| e.to_string())?;
    sequence_scores(masks, &gt).map_err(|e| e.to_string())
}

fn fixed_plan(query: &Query) -> Plan {
    let category_hint = QueryTerms::parse(&query.expression).category().map(str::to_string);
    Plan {
        reference_type: classify_reference(&query.expression, "")
            .unwrap_or(crate::planner::ReferenceType::WholeVideoInstance),
        consolidated_query: query.expression.clone(),
        category_hint,
        use_audio_first: false,
        steps: vec![
            PlanStep {
                intent: PlanIntent::CoarseSearch,
                rationale: "select a frame from the fixed sample set".into(),
                contingent: false,
            },
            PlanStep {
                intent: PlanIntent::Identify,
                rationale: "select a box on that frame".into(),
                contingent: false,
            },
            PlanStep {
                intent: PlanIntent::Segment,
                rationale: "segment and track".into(),
                contingent: false,
            },
        ],
    }
}

fn as_args(v: Value) -> Args {
    v.as_object().cloned().unwrap_or_default()
}

fn baseline_step(index: usize, thought: &str, call: ToolCall, observation: String) -> Step {
    let raw = format!(
        "Thought: {thought}\nAction: {}",
        render_call(&call.tool, &call.args).expect("baseline arguments have literal forms")
    );
    Step {
        index,
        raw_text: raw,
        thought: thought.into(),
        action: StepAction::Call(call),
        observation: Some(observation),
    }
}

/// Frame selection on the fixed coarse samples, then one box selection on
/// that frame, then segmentation. No fine search, retries or feedback.
fn baseline_episode(scenario: &Scenario, query: &Query, config: &AgentConfig, tools: &dyn ToolEndpoint) -> Scored {
    let started = Instant::now();
    let timeout = config.engine.tool_timeout();
    let t = scenario.num_frames();
    let k = config.engine.tool_defaults.coarse_k.clamp(2, t.max(2)).min(t);
    let samples = coarse_sample_indices(t, k).unwrap_or_else(|_| vec![0]);
    let plan = fixed_plan(query);
    let qid = &query.query_id;
    let invoke = |call: &ToolCall| {
        tools.invoke_call(call, timeout).unwrap_or_else(|e| {
            crate::protocol::ToolResult::err(
                call.call_id.clone(),
                crate::protocol::ToolError::new(crate::protocol::ErrorCode::BackendFailure, e.to_string()),
            )
        })
    };

    let coarse = ToolCall::new(
        format!("{qid}-1"),
        tools::TEMPORAL_SEARCH_COARSE,
        as_args(json!({"query": query.expression, "k": k})),
    );
    let r1 = invoke(&coarse);
    let pivot = r1
        .outcome
        .as_ref()
        .ok()
        .and_then(|v| v["window"]["start"].as_u64())
        .map_or(samples[0], |s| s as u32);

    let mut id_args = json!({"frames": [pivot], "description": query.expression});
    if let Some(c) = &plan.category_hint {
        id_args["category"] = json!(c);
    }
    let identify = ToolCall::new(format!("{qid}-2"), tools::IDENTIFY_INSTANCE, as_args(id_args));
    let r2 = invoke(&identify);
    let object_id = r2
        .outcome
        .as_ref()
        .ok()
        .and_then(|v| v["object_id"].as_str().map(str::to_string));
    let answer = match object_id {
        Some(object_id) => FinalAnswer {
            pivot_frame: pivot,
            object_id,
        },
        None => engine::last_resort_answer(scenario, pivot),
    };

    let mut steps = vec![
        baseline_step(1, "Select a pivot frame from the fixed samples.", coarse, render_observation(&r1)),
        baseline_step(2, "Select the box on the pivot frame.", identify, render_observation(&r2)),
    ];
    steps.push(Step {
        index: 3,
        raw_text: format!("Thought: Segment the selection.\nFinal Answer: {}", render_final(&answer)),
        thought: "Segment the selection.".into(),
        action: StepAction::Final(answer.clone()),
        observation: None,
    });
    let seg = ToolCall::new(
        format!("{qid}-3"),
        tools::SEGMENT_AND_TRACK,
        as_args(json!({"pivot_frame": answer.pivot_frame, "object_id": answer.object_id})),
    );
    let (w, h) = (scenario.video.width, scenario.video.height);
    let (masks, error) = match invoke(&seg).outcome {
        Ok(v) => match serde_json::from_value::<MaskSequence>(v["masks"].clone()) {
            Ok(m) => (m, None),
            Err(e) => (MaskSequence::empty(w, h, t as usize), Some(format!("malformed masks: {e}"))),
        },
        Err(e) => (MaskSequence::empty(w, h, t as usize), Some(engine::render_tool_error(&e))),
    };
    let scores = score(scenario, query, &masks).unwrap_or_else(|_| EvalScores::zero());
    Scored {
        scores,
        trace: Trace {
            schema_version: TRACE_SCHEMA_VERSION,
            query_id: qid.clone(),
            plan,
            steps,
            final_answer: Some(answer),
            fallback_used: false,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            episode_error: None,
        },
        error,
    }
}

fn agent_episode(scenario: &Scenario, query: &Query, config: &AgentConfig, tools: &dyn ToolEndpoint) -> Result<Scored, String> {
    let narrative = synthesize_narrative(scenario);
    let plan = config.planner().plan(query, &narrative).map_err(|e| e.to_string())?;
    let mut generator = config.generator();
    let out = run_episode(scenario, query, &plan, generator.as_mut(), tools, &config.engine).map_err(|e| e.to_string())?;
    let error = out.trace.episode_error.clone();
    let scores = if error.is_some() {
        EvalScores::zero()
    } else {
        score(scenario, query, &out.masks)?
    };
    Ok(Scored {
        scores,
        trace: out.trace,
        error,
    })
}

fn episode_rows(suite: &BenchmarkSuite, index: usize, config: &AgentConfig, mode: RunMode) -> Vec<ReportRow> {
    let path = suite.scenario_path(index);
    let rel = suite.scenarios[index].to_string_lossy().replace('\\', "/");
    let scenario = match load_scenario(&path) {
        Ok(s) => Arc::new(s),
        Err(e) => {
            return vec![ReportRow {
                index,
                scenario: rel,
                query_id: String::new(),
                tags: Vec::new(),
                j: 0.0,
                f: 0.0,
                jf: 0.0,
                fallback_used: false,
                steps: 0,
                parse_errors: 0,
                wall_time_ms: None,
                error: Some(e.to_string()),
                load_error: true,
            }]
        }
    };
    let mut rows = Vec::new();
    for query in &scenario.queries {
        let started = Instant::now();
        let registry = standard_registry(Arc::clone(&scenario), config.noise.clone(), config.engine.tool_defaults);
        let scored = match mode {
            RunMode::Agent => agent_episode(&scenario, query, config, &registry),
            RunMode::Baseline => Ok(baseline_episode(&scenario, query, config, &registry)),
        };
        let tags = query_tags(&scenario, query, suite.coarse_k);
        let wall = config.record_timing.then(|| started.elapsed().as_secs_f64() * 1e3);
        let row = match scored {
            Ok(s) => {
                if let Some(dir) = &config.trace_dir {
                    let file = dir.join(format!("{}.jsonl", query.query_id));
                    if let Ok(f) = fs::File::create(&file) {
                        let _ = write_trace(&s.trace, std::io::BufWriter::new(f));
                    }
                }
                ReportRow {
                    index,
                    scenario: rel.clone(),
                    query_id: query.query_id.clone(),
                    tags,
                    j: s.scores.j_mean,
                    f: s.scores.f_mean,
                    jf: s.scores.jf,
                    fallback_used: s.trace.fallback_used,
                    steps: s.trace.steps.len(),
                    parse_errors: s.trace.parse_errors(),
                    wall_time_ms: wall,
                    error: s.error,
                    load_error: false,
                }
            }
            Err(e) => ReportRow {
                index,
                scenario: rel.clone(),
                query_id: query.query_id.clone(),
                tags,
                j: 0.0,
                f: 0.0,
                jf: 0.0,
                fallback_used: false,
                steps: 0,
                parse_errors: 0,
                wall_time_ms: wall,
                error: Some(e),
                load_error: false,
            },
        };
        rows.push(row);
    }
    rows
}

fn run(suite: &BenchmarkSuite, config: &AgentConfig, mode: RunMode) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    if let Some(dir) = &config.trace_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    let threads = config
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let per_scenario: Vec<Vec<ReportRow>> = pool.install(|| {
        (0..suite.scenarios.len())
            .into_par_iter()
            .map(|i| episode_rows(suite, i, config, mode))
            .collect()
    });
    let rows: Vec<ReportRow> = per_scenario.into_iter().flatten().collect();
    let config_fingerprint = match mode {
        RunMode::Agent => config.fingerprint(),
        RunMode::Baseline => {
            let v = json!({"baseline": true, "engine": config.engine, "noise": config.noise});
            hex::encode(Sha256::digest(v.to_string().as_bytes()))
        }
    };
    Ok(EvalReport {
        suite_id: suite.suite_id.clone(),
        suite_fingerprint: suite.fingerprint(),
        config_fingerprint,
        mode,
        aggregates: Aggregates::compute(&rows),
        rows,
    })
}

/// Plans, runs and scores every query of the suite with the reasoning agent.
pub fn run_benchmark(suite: &BenchmarkSuite, config: &AgentConfig) -> Result<EvalReport, HarnessError> {
    run(suite, config, RunMode::Agent)
}

/// The fixed two-step pipeline, scored the same way. Only the engine's tool
/// defaults, the noise settings and the parallelism of `config` are used.
pub fn run_baseline_fixed(suite: &BenchmarkSuite, config: &AgentConfig) -> Result<EvalReport, HarnessError> {
    run(suite, config, RunMode::Baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::read_trace;

    fn small_suite(n: usize) -> (tempfile::TempDir, BenchmarkSuite) {
        let dir = tempfile::tempdir().unwrap();
        let params = SuiteParams {
            seed: 7,
            num_scenarios: n,
            ..SuiteParams::default()
        };
        let suite = generate_suite(&params, dir.path()).unwrap();
        (dir, suite)
    }

    #[test]
    fn aggregates_match_rows() {
        let (_d, suite) = small_suite(10);
        let report = run_benchmark(&suite, &AgentConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 10);
        let n = report.rows.len() as f64;
        let mean_jf = report.rows.iter().map(|r| r.jf).sum::<f64>() / n;
        let miou = report.rows.iter().map(|r| r.j).sum::<f64>() / n;
        assert!((report.aggregates.overall.mean_jf.unwrap() - mean_jf).abs() < 1e-12);
        assert!((report.aggregates.overall.miou.unwrap() - miou).abs() < 1e-12);
        assert!(mean_jf > 0.99, "{mean_jf}");
    }

    #[test]
    fn corrupt_file_is_one_error_row() {
        let (_d, suite) = small_suite(4);
        fs::write(suite.scenario_path(2), "{ not json").unwrap();
        let report = run_benchmark(&suite, &AgentConfig::default()).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.error_rows(), 1);
        assert!(report.rows[2].load_error);
        assert_eq!(report.aggregates.overall.count, 3);
    }

    #[test]
    fn empty_suite_omits_means() {
        let (_d, suite) = small_suite(0);
        let report = run_benchmark(&suite, &AgentConfig::default()).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.aggregates.overall.mean_jf, None);
        let text = report.to_json();
        assert!(!text.contains("\"miou\""));
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn baseline_traces_have_two_calls() {
        let (d, suite) = small_suite(6);
        let trace_dir = d.path().join("traces");
        let cfg = AgentConfig {
            trace_dir: Some(trace_dir.clone()),
            ..AgentConfig::default()
        };
        let report = run_baseline_fixed(&suite, &cfg).unwrap();
        assert_eq!(report.mode, RunMode::Baseline);
        for row in &report.rows {
            let f = fs::File::open(trace_dir.join(format!("{}.jsonl", row.query_id))).unwrap();
            let trace = read_trace(std::io::BufReader::new(f)).unwrap();
            assert_eq!(trace.tool_calls().count(), 2);
            assert_eq!(engine::replay_trace(&trace).unwrap(), 3);
        }
    }

    #[test]
    fn comparisons() {
        let (_d, suite) = small_suite(5);
        let cfg = AgentConfig::default();
        let a = run_benchmark(&suite, &cfg).unwrap();
        let c = compare_reports(&a, &a).unwrap();
        assert_eq!(c.overall.delta, Some(0.0));
        assert!(c.by_tag.iter().all(|d| d.delta == Some(0.0)));
        assert_eq!(c.ties, 5);
        let (_e, other) = small_suite(3);
        let b = run_benchmark(&other, &cfg).unwrap();
        assert!(matches!(compare_reports(&a, &b), Err(HarnessError::Comparison(_))));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let (_d, suite) = small_suite(3);
        let report = run_benchmark(&suite, &AgentConfig::default()).unwrap();
        let csv = report.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("index,scenario,query_id,tags,j,f,jf"));
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = AgentConfig {
            backend: BackendConfig::Repeating {
                response: "Thought: x\nAction: audio_classify()".into(),
            },
            parallelism: Some(2),
            ..AgentConfig::default()
        };
        fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_eq!(AgentConfig::load(&path).unwrap(), cfg);
        let mut other = cfg.clone();
        other.parallelism = Some(8);
        assert_eq!(cfg.fingerprint(), other.fingerprint());
        fs::write(&path, r#"{"engine": {"max_steps": 0}}"#).unwrap();
        assert!(matches!(AgentConfig::load(&path), Err(HarnessError::Config(_))));
    }
}
