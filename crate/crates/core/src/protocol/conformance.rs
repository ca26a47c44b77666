//! Protocol conformance suite runnable against any [`ToolEndpoint`].

use std::fmt;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{is_valid_tool_name, Args, ErrorCode, ToolCall, ToolEndpoint, TransportError};

/// A call that is expected to succeed on the endpoint under test.
#[derive(Debug, Clone)]
pub struct ConformanceProbe {
    pub tool: String,
    pub args: Args,
}

impl Default for ConformanceProbe {
    fn default() -> Self {
        ConformanceProbe {
            tool: "audio_classify".into(),
            args: Args::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub cases: Vec<CaseResult>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn case(&self, name: &str) -> Option<&CaseResult> {
        self.cases.iter().find(|c| c.case == name)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark} {:<18} {}", c.case, c.detail)?;
        }
        Ok(())
    }
}

fn case(name: &str, passed: bool, detail: impl Into<String>) -> CaseResult {
    CaseResult {
        case: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Exercises descriptor listing, a valid call, BAD_ARGS, UNKNOWN_TOOL, the
/// timeout path and call-id correlation.
pub fn conformance_check(
    endpoint: &dyn ToolEndpoint,
    probe: &ConformanceProbe,
) -> Result<ConformanceReport, TransportError> {
    let tools = endpoint.list_tools()?;
    let mut cases = Vec::new();
    let mut mismatched = Vec::new();

    let names_ok = !tools.is_empty() && tools.iter().all(|t| is_valid_tool_name(&t.name));
    let unique = tools
        .iter()
        .enumerate()
        .all(|(i, t)| tools[..i].iter().all(|u| u.name != t.name));
    cases.push(case(
        "descriptor_listing",
        names_ok && unique && tools.iter().any(|t| t.name == probe.tool),
        format!("{} tools listed", tools.len()),
    ));

    let mut run = |id: &str, tool: &str, args: Args, timeout: Duration| -> Result<_, TransportError> {
        let call = ToolCall::new(id, tool, args);
        let res = endpoint.invoke_call(&call, timeout)?;
        if res.call_id != call.call_id {
            mismatched.push(format!("sent {} got {}", call.call_id, res.call_id));
        }
        Ok(res)
    };
    let normal = Duration::from_secs(30);

    let res = run("conf-valid", &probe.tool, probe.args.clone(), normal)?;
    cases.push(case(
        "valid_call",
        res.is_ok(),
        match &res.outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("{}: {}", e.code, e.message),
        },
    ));

    let mut bad = probe.args.clone();
    bad.insert("__conformance_bogus__".into(), Value::Bool(true));
    let res = run("conf-bad-args", &probe.tool, bad, normal)?;
    cases.push(case(
        "bad_args",
        res.error_code() == Some(ErrorCode::BadArgs),
        format!("{:?}", res.error_code()),
    ));

    let res = run("conf-unknown", "no_such_tool_for_conformance", Args::new(), normal)?;
    cases.push(case(
        "unknown_tool",
        res.error_code() == Some(ErrorCode::UnknownTool),
        format!("{:?}", res.error_code()),
    ));

    let res = run("conf-timeout", &probe.tool, probe.args.clone(), Duration::ZERO)?;
    cases.push(case(
        "timeout",
        res.error_code() == Some(ErrorCode::Timeout),
        format!("{:?}", res.error_code()),
    ));

    cases.push(case(
        "correlation",
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "all call ids echoed".to_string()
        } else {
            mismatched.join("; ")
        },
    ));
    Ok(ConformanceReport { cases })
}
