//! Wire format: UTF-8 JSON, one message per line (stdio) or per HTTP body.
//!
//! Request:  `{"v":1,"id":"…","tool":"…","args":{…}}` with optional `timeout_ms`.
//! Response: `{"v":1,"id":"…","ok":true,"result":…}` or
//!           `{"v":1,"id":"…","ok":false,"error":{"code","message","log"}}`.

use serde_json::{json, Value};
use thiserror::Error;

use super::{Args, ToolCall, ToolError, ToolResult};

pub const PROTOCOL_VERSION: u64 = 1;

/// Reserved tool name used to list descriptors over transports that only
/// carry invoke messages.
pub const LIST_TOOLS: &str = "rpc.list_tools";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol error: {0}")]
pub struct ProtocolError(pub String);

fn perr<T>(msg: impl Into<String>) -> Result<T, ProtocolError> {
    Err(ProtocolError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub call: ToolCall,
    pub timeout_ms: Option<u64>,
}

pub fn encode_request(call: &ToolCall, timeout_ms: Option<u64>) -> Vec<u8> {
    let mut v = json!({
        "v": PROTOCOL_VERSION,
        "id": call.call_id,
        "tool": call.tool,
        "args": Value::Object(call.args.clone()),
    });
    if let Some(t) = timeout_ms {
        v["timeout_ms"] = json!(t);
    }
    serde_json::to_vec(&v).expect("json values serialize")
}

fn parse_object(bytes: &[u8]) -> Result<serde_json::Map<String, Value>, ProtocolError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ProtocolError(format!("invalid UTF-8: {e}")))?;
    let value: Value =
        serde_json::from_str(text.trim_end()).map_err(|e| ProtocolError(format!("malformed JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return perr("message is not a JSON object");
    };
    match obj.get("v").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => Ok(obj),
        Some(other) => perr(format!("unsupported protocol version {other}")),
        None => perr("missing protocol version `v`"),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, ProtocolError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => perr(format!("`{key}` must be a string")),
        None => perr(format!("missing `{key}`")),
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<WireRequest, ProtocolError> {
    let obj = parse_object(bytes)?;
    let id = string_field(&obj, "id")?;
    let tool = string_field(&obj, "tool")?;
    let args: Args = match obj.get("args") {
        Some(Value::Object(m)) => m.clone(),
        None => Args::new(),
        Some(_) => return perr("`args` must be an object"),
    };
    let timeout_ms = match obj.get("timeout_ms") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(t) => Some(t),
            None => return perr("`timeout_ms` must be a non-negative integer"),
        },
    };
    Ok(WireRequest {
        call: ToolCall::new(id, tool, args),
        timeout_ms,
    })
}

pub fn encode_response(result: &ToolResult) -> Vec<u8> {
    let v = match &result.outcome {
        Ok(value) => json!({
            "v": PROTOCOL_VERSION,
            "id": result.call_id,
            "ok": true,
            "result": value,
        }),
        Err(e) => json!({
            "v": PROTOCOL_VERSION,
            "id": result.call_id,
            "ok": false,
            "error": e,
        }),
    };
    serde_json::to_vec(&v).expect("json values serialize")
}

pub fn decode_response(bytes: &[u8]) -> Result<ToolResult, ProtocolError> {
    let obj = parse_object(bytes)?;
    let id = string_field(&obj, "id")?;
    let ok = match obj.get("ok") {
        Some(Value::Bool(b)) => *b,
        _ => return perr("`ok` must be a boolean"),
    };
    let result = obj.get("result");
    let error = obj.get("error");
    match (ok, result, error) {
        (_, Some(_), Some(_)) => perr("response carries both `result` and `error`"),
        (true, Some(r), None) => Ok(ToolResult::ok(id, r.clone())),
        (false, None, Some(e)) => {
            let err: ToolError = serde_json::from_value(e.clone())
                .map_err(|e| ProtocolError(format!("malformed `error`: {e}")))?;
            Ok(ToolResult::err(id, err))
        }
        (true, None, _) => perr("`ok` is true but `result` is missing"),
        (false, _, None) => perr("`ok` is false but `error` is missing"),
    }
}
