use std::io::Cursor;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use vosagent_core::protocol::http::{serve_http, HttpToolClient};
use vosagent_core::protocol::stdio::serve_stdio;
use vosagent_core::protocol::{
    conformance_check, decode_response, encode_request, ConformanceProbe, TransportError, DEFAULT_TOOL_TIMEOUT,
    LIST_TOOLS,
};
use vosagent_core::scenario::synthesize_narrative;
use vosagent_core::*;

fn registry(seed: u64) -> (Arc<Scenario>, Registry) {
    let s = Arc::new(generate_scenario(seed, &GenerationParams::default()).unwrap());
    let r = standard_registry(Arc::clone(&s), NoiseConfig::default(), ToolDefaults::default());
    (s, r)
}

/// Answers correctly but swaps every call id.
struct Forgetful(Registry);

impl ToolEndpoint for Forgetful {
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        self.0.list_tools()
    }

    fn invoke_call(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError> {
        let mut res = self.0.invoke(call, timeout);
        res.call_id = "someone-else".into();
        Ok(res)
    }
}

#[test]
fn in_process_registry_conforms() {
    let (_, r) = registry(3);
    let report = conformance_check(&r, &ConformanceProbe::default()).unwrap();
    assert!(report.all_passed(), "{report}");
    for name in ["descriptor_listing", "valid_call", "bad_args", "unknown_tool", "timeout", "correlation"] {
        assert!(report.case(name).is_some(), "missing case {name}");
    }
}

#[test]
fn http_server_conforms() {
    let (_, r) = registry(4);
    let server = serve_http(Arc::new(r), "127.0.0.1:0", DEFAULT_TOOL_TIMEOUT).unwrap();
    let client = HttpToolClient::new(server.base_url());
    let report = conformance_check(&client, &ConformanceProbe::default()).unwrap();
    assert!(report.all_passed(), "{report}");
}

#[test]
fn id_swapping_endpoint_fails_correlation() {
    let (_, r) = registry(5);
    let report = conformance_check(&Forgetful(r), &ConformanceProbe::default()).unwrap();
    assert!(!report.all_passed());
    assert!(!report.case("correlation").unwrap().passed);
    assert!(report.case("valid_call").unwrap().passed);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let client = HttpToolClient::new("http://127.0.0.1:9");
    assert!(matches!(
        conformance_check(&client, &ConformanceProbe::default()),
        Err(TransportError::Connectivity(_))
    ));
}

#[test]
fn episode_over_http_matches_in_process() {
    let (s, local) = registry(11);
    let (_, served) = registry(11);
    let server = serve_http(Arc::new(served), "127.0.0.1:0", DEFAULT_TOOL_TIMEOUT).unwrap();
    let remote = HttpToolClient::new(server.base_url());
    let q = &s.queries[0];
    let plan = RuleBasedPlanner.plan(q, &synthesize_narrative(&s)).unwrap();
    let engine = EngineConfig::default();
    let a = run_episode(&s, q, &plan, &mut PolicyGenerator::new(), &local, &engine).unwrap();
    let b = run_episode(&s, q, &plan, &mut PolicyGenerator::new(), &remote, &engine).unwrap();
    assert_eq!(a.masks, b.masks);
    assert_eq!(a.trace.steps, b.trace.steps);
    assert_eq!(a.trace.final_answer, b.trace.final_answer);
}

#[test]
fn stdio_lists_and_invokes() {
    let (_, r) = registry(6);
    let list = ToolCall::new("l1", LIST_TOOLS, Default::default());
    let call = ToolCall::new("c1", "temporal_search_coarse", json!({"query": "the dog", "k": 4}).as_object().unwrap().clone());
    let bad = ToolCall::new("c2", "temporal_search_coarse", Default::default());
    let mut input = Vec::new();
    for (c, t) in [(&list, None), (&call, None), (&bad, Some(1000))] {
        input.extend(encode_request(c, t));
        input.push(b'\n');
    }
    input.extend(b"\n{not json}\n");
    let mut out = Vec::new();
    serve_stdio(&r, Cursor::new(input), &mut out).unwrap();
    let lines: Vec<&[u8]> = out.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 4);

    let listed = decode_response(lines[0]).unwrap();
    assert_eq!(listed.call_id, "l1");
    let names: Vec<String> = listed.outcome.unwrap().as_array().unwrap().iter().map(|d| d["name"].as_str().unwrap().to_string()).collect();
    assert_eq!(names.len(), 5);

    let ok = decode_response(lines[1]).unwrap();
    assert_eq!(ok.call_id, "c1");
    assert!(ok.outcome.unwrap().get("matched").is_some_and(Value::is_boolean));

    let missing = decode_response(lines[2]).unwrap();
    assert_eq!((missing.call_id.as_str(), missing.error_code()), ("c2", Some(ErrorCode::BadArgs)));

    let garbage = decode_response(lines[3]).unwrap();
    assert_eq!(garbage.error_code(), Some(ErrorCode::BadArgs));
}
