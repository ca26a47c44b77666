//! Line-delimited JSON transport for subprocess backends: requests on stdin,
//! responses on stdout, one object per line.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::message::{decode_request, decode_response, encode_request, encode_response, LIST_TOOLS};
use super::{
    Args, ErrorCode, ToolCall, ToolDescriptor, ToolEndpoint, ToolError, ToolResult, TransportError,
    DEFAULT_TOOL_TIMEOUT,
};

/// Answers requests from `input` until EOF. `rpc.list_tools` returns the
/// descriptor array as its result.
pub fn serve_stdio(
    endpoint: &dyn ToolEndpoint,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = match decode_request(line.as_bytes()) {
            Ok(req) if req.call.tool == LIST_TOOLS => match endpoint.list_tools() {
                Ok(tools) => ToolResult::ok(req.call.call_id, json!(tools)),
                Err(e) => ToolResult::err(
                    req.call.call_id,
                    ToolError::new(ErrorCode::BackendFailure, e.to_string()),
                ),
            },
            Ok(req) => {
                let timeout = req
                    .timeout_ms
                    .map(Duration::from_millis)
                    .unwrap_or(DEFAULT_TOOL_TIMEOUT);
                endpoint.invoke_call(&req.call, timeout).unwrap_or_else(|e| {
                    ToolResult::err(
                        req.call.call_id.clone(),
                        ToolError::new(ErrorCode::BackendFailure, e.to_string()),
                    )
                })
            }
            Err(e) => ToolResult::err("", ToolError::bad_args(e.to_string())),
        };
        output.write_all(&encode_response(&result))?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

struct Pipe {
    stdin: ChildStdin,
    lines: Receiver<String>,
    next_id: u64,
}

/// Tool endpoint backed by a child process.
pub struct StdioToolClient {
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
}

impl StdioToolClient {
    pub fn spawn(mut command: Command) -> Result<Self, TransportError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TransportError::Connectivity(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(StdioToolClient {
            child: Mutex::new(child),
            pipe: Mutex::new(Pipe {
                stdin,
                lines: rx,
                next_id: 0,
            }),
        })
    }

    /// Sends one request and waits for the response with the same id; stale
    /// responses from earlier timed-out calls are discarded.
    fn round_trip(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        pipe.next_id += 1;
        let body = encode_request(call, Some(timeout.as_millis() as u64));
        pipe.stdin.write_all(&body)?;
        pipe.stdin.write_all(b"\n")?;
        pipe.stdin.flush()?;
        let deadline = Instant::now() + timeout + Duration::from_secs(1);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match pipe.lines.recv_timeout(left) {
                Ok(line) => {
                    let res = decode_response(line.as_bytes())?;
                    if res.call_id == call.call_id {
                        return Ok(res);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Ok(ToolResult::err(
                        call.call_id.clone(),
                        ToolError::new(ErrorCode::Timeout, "subprocess did not answer in time"),
                    ))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Ok(ToolResult::err(
                        call.call_id.clone(),
                        ToolError::new(ErrorCode::BackendFailure, "tool subprocess exited"),
                    ))
                }
            }
        }
    }
}

impl ToolEndpoint for StdioToolClient {
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        let id = format!("list-{}", self.pipe.lock().map(|p| p.next_id).unwrap_or(0));
        let call = ToolCall::new(id, LIST_TOOLS, Args::new());
        let res = self.round_trip(&call, Duration::from_secs(10))?;
        match res.outcome {
            Ok(v) => serde_json::from_value(v)
                .map_err(|e| TransportError::Protocol(super::ProtocolError(format!("bad descriptor list: {e}")))),
            Err(e) => Err(TransportError::Connectivity(e.message)),
        }
    }

    fn invoke_call(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError> {
        self.round_trip(call, timeout)
    }
}

impl Drop for StdioToolClient {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ParamSpec, ParamType, Registry, ToolBackend};
    use std::sync::Arc;

    #[test]
    fn serves_lines() {
        let d = ToolDescriptor {
            name: "echo".into(),
            description: "Echo.".into(),
            params: vec![ParamSpec::required("text", ParamType::String, "text")],
            returns: "{echo}".into(),
            result_keys: vec![],
        };
        let b: Arc<dyn ToolBackend> = Arc::new(|_: &str, a: &Args| Ok(json!({"echo": a["text"]})));
        let reg = Registry::new().with(d, b).unwrap();
        let input = concat!(
            r#"{"v":1,"id":"a","tool":"echo","args":{"text":"x"}}"#,
            "\n\n",
            r#"{"v":1,"id":"b","tool":"rpc.list_tools","args":{}}"#,
            "\n",
            "garbage\n",
            r#"{"v":1,"id":"c","tool":"missing","args":{}}"#,
            "\n"
        );
        let mut out = Vec::new();
        serve_stdio(&reg, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<ToolResult> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| decode_response(l.as_bytes()).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], ToolResult::ok("a", json!({"echo": "x"})));
        let tools: Vec<ToolDescriptor> = serde_json::from_value(lines[1].outcome.clone().unwrap()).unwrap();
        assert_eq!(tools[0].name, "echo");
        assert_eq!(lines[2].error_code(), Some(ErrorCode::BadArgs));
        assert_eq!(lines[3].error_code(), Some(ErrorCode::UnknownTool));
    }

    #[test]
    fn missing_binary_is_connectivity_error() {
        let r = StdioToolClient::spawn(Command::new("/nonexistent/tool-server"));
        assert!(matches!(r, Err(TransportError::Connectivity(_))));
    }
}
