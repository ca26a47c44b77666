//! JSON-lines trace files: a header record, one record per step, a footer.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Step, Trace, TRACE_SCHEMA_VERSION};
use crate::planner::Plan;

use super::grammar::FinalAnswer;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    query_id: String,
    plan: Plan,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    #[serde(rename = "final")]
    final_answer: Option<FinalAnswer>,
    fallback_used: bool,
    wall_time_ms: f64,
    episode_error: Option<String>,
}

fn record(kind: &str, body: impl Serialize) -> String {
    let mut v = serde_json::to_value(body).expect("trace records serialize");
    v.as_object_mut()
        .expect("records are objects")
        .insert("record".into(), Value::String(kind.into()));
    serde_json::to_string(&v).expect("json serializes")
}

pub fn write_trace(trace: &Trace, mut sink: impl Write) -> std::io::Result<()> {
    let header = Header {
        schema_version: trace.schema_version,
        query_id: trace.query_id.clone(),
        plan: trace.plan.clone(),
    };
    writeln!(sink, "{}", record("header", &header))?;
    for step in &trace.steps {
        writeln!(sink, "{}", record("step", step))?;
    }
    let footer = Footer {
        final_answer: trace.final_answer.clone(),
        fallback_used: trace.fallback_used,
        wall_time_ms: trace.wall_time_ms,
        episode_error: trace.episode_error.clone(),
    };
    writeln!(sink, "{}", record("footer", &footer))?;
    sink.flush()
}

fn bad(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_trace(source: impl BufRead) -> Result<Trace, TraceError> {
    let mut header: Option<Header> = None;
    let mut steps = Vec::new();
    let mut footer: Option<Footer> = None;
    let mut last = 0;
    for (i, line) in source.lines().enumerate() {
        let n = i + 1;
        last = n;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(bad(n, "record after the footer"));
        }
        let mut v: Value = serde_json::from_str(&line).map_err(|e| bad(n, format!("malformed JSON: {e}")))?;
        let kind = v
            .as_object_mut()
            .and_then(|o| o.remove("record"))
            .and_then(|k| k.as_str().map(str::to_string))
            .ok_or_else(|| bad(n, "missing `record` kind"))?;
        match (kind.as_str(), header.is_some()) {
            ("header", false) => {
                let h: Header = serde_json::from_value(v).map_err(|e| bad(n, format!("bad header: {e}")))?;
                if h.schema_version != TRACE_SCHEMA_VERSION {
                    return Err(bad(n, format!("unsupported trace schema_version {}", h.schema_version)));
                }
                header = Some(h);
            }
            ("header", true) => return Err(bad(n, "duplicate header")),
            (_, false) => return Err(bad(n, "expected the header record first")),
            ("step", true) => {
                let s: Step = serde_json::from_value(v).map_err(|e| bad(n, format!("bad step: {e}")))?;
                steps.push(s);
            }
            ("footer", true) => {
                footer = Some(serde_json::from_value(v).map_err(|e| bad(n, format!("bad footer: {e}")))?);
            }
            (other, true) => return Err(bad(n, format!("unknown record kind `{other}`"))),
        }
    }
    let header = header.ok_or_else(|| bad(last + 1, "empty trace: missing header"))?;
    let footer = footer.ok_or_else(|| bad(last + 1, "missing footer record"))?;
    Ok(Trace {
        schema_version: header.schema_version,
        query_id: header.query_id,
        plan: header.plan,
        steps,
        final_answer: footer.final_answer,
        fallback_used: footer.fallback_used,
        wall_time_ms: footer.wall_time_ms,
        episode_error: footer.episode_error,
    })
}
