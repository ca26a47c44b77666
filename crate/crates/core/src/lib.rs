//! Agent orchestration engine for multimodal-referred video object segmentation.
//!
//! A planner classifies the referring expression and emits a plan, a
//! Thought/Action/Observation loop drives a typed toolset until a pivot frame
//! and object identity are resolved, and a segmentation tool propagates the
//! mask through the whole clip. Every tool has a deterministic oracle
//! implementation backed by a synthetic [`scenario::Scenario`], so complete
//! episodes can be scored without any foundation model.
//!
//! Module map:
//!
//! - [`scenario`]: synthetic video worlds, rasterization, narratives, JSON files
//! - [`metrics`]: run-length masks and the J / F / J&F / mIoU metrics
//! - [`protocol`]: tool descriptors, call/result messages, registry, transports
//! - [`tools`]: oracle implementations of the audio, search, identify and
//!   segmentation tools
//! - [`planner`]: reference classification, query consolidation, plan selection
//! - [`llm`]: text generation backends (scripted, policy, remote)
//! - [`engine`]: the reasoning loop, action grammar, fallback and trace files
//! - [`harness`]: benchmark suites, agent and baseline runs, reports

pub mod engine;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod planner;
pub mod protocol;
pub mod scenario;
pub mod tools;

pub use engine::{
    apply_fallback, build_system_prompt, parse_agent_text, read_trace, run_episode, write_trace,
    AgentAction, EngineConfig, EpisodeError, EpisodeOutcome, FinalAnswer, ParseError, Step,
    StepAction, Trace,
};
pub use harness::{
    compare_reports, generate_suite, run_baseline_fixed, run_benchmark, AgentConfig,
    BackendConfig, BenchmarkSuite, Comparison, EvalReport, PlannerConfig, ReportRow, SuiteParams,
};
pub use llm::{
    EpisodeState, GenerationRequest, GenerationResult, PolicyGenerator, ScriptedGenerator,
    StopReason, TextGenerator,
};
pub use metrics::{
    aggregate_miou, boundary_f, iou, sequence_scores, BinaryMask, EvalScores, MaskSequence,
    MetricsError,
};
pub use planner::{Plan, PlanIntent, PlanStep, PlannerBackend, ReferenceType, RuleBasedPlanner};
pub use protocol::{
    ErrorCode, ParamSpec, ParamType, Registry, ToolCall, ToolDescriptor, ToolEndpoint, ToolError,
    ToolResult,
};
pub use scenario::{generate_scenario, GenerationParams, Query, Scenario};
pub use tools::{coarse_sample_indices, standard_registry, FaultScope, NoiseConfig, ToolDefaults};
