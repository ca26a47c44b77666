//! Typed tool-invocation contract shared by the simulator and remote
//! backends: descriptors, calls, results, the registry and its transports.

pub mod conformance;
pub mod http;
pub mod message;
mod registry;
pub mod stdio;

pub use conformance::{conformance_check, CaseResult, ConformanceProbe, ConformanceReport};
pub use message::{
    decode_request, decode_response, encode_request, encode_response, ProtocolError, WireRequest,
    LIST_TOOLS, PROTOCOL_VERSION,
};
pub use registry::{Registry, RegistryError, ToolBackend};

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);

/// Argument and parameter map. Keys are kept sorted.
pub type Args = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamType {
    #[serde(rename = "string")]
    String,
    #[serde(rename = "int")]
    Int,
    #[serde(rename = "float")]
    Float,
    #[serde(rename = "bool")]
    Bool,
    #[serde(rename = "list-of-int")]
    ListOfInt,
    #[serde(rename = "list-of-string")]
    ListOfString,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Int => "int",
            ParamType::Float => "float",
            ParamType::Bool => "bool",
            ParamType::ListOfInt => "list-of-int",
            ParamType::ListOfString => "list-of-string",
        }
    }

    pub fn accepts(self, value: &Value) -> bool {
        let is_int = |v: &Value| v.as_i64().is_some() || v.as_u64().is_some();
        match self {
            ParamType::String => value.is_string(),
            ParamType::Int => is_int(value),
            ParamType::Float => value.is_number(),
            ParamType::Bool => value.is_boolean(),
            ParamType::ListOfInt => value.as_array().is_some_and(|a| a.iter().all(is_int)),
            ParamType::ListOfString => value
                .as_array()
                .is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType, description: &str) -> Self {
        ParamSpec {
            name: name.into(),
            ty,
            required: true,
            description: description.into(),
        }
    }

    pub fn optional(name: &str, ty: ParamType, description: &str) -> Self {
        ParamSpec {
            required: false,
            ..ParamSpec::required(name, ty, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub returns: String,
    /// Top-level keys every successful result object must carry.
    #[serde(default)]
    pub result_keys: Vec<String>,
}

impl ToolDescriptor {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Type-checks an argument map; the error names the offending parameter.
    pub fn check_args(&self, args: &Args) -> Result<(), String> {
        for key in args.keys() {
            if self.param(key).is_none() {
                return Err(format!("unexpected argument `{key}` for `{}`", self.name));
            }
        }
        for p in &self.params {
            match args.get(&p.name) {
                None if p.required => {
                    return Err(format!("missing required argument `{}`", p.name));
                }
                Some(v) if !p.ty.accepts(v) => {
                    return Err(format!(
                        "argument `{}` expects {}, got {}",
                        p.name,
                        p.ty,
                        type_name(v)
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(n) if n.is_f64() => "float",
        Value::Number(_) => "int",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "object",
    }
}

pub fn is_valid_tool_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Prompt text for a list of tools, one block per tool in the given order.
pub fn render_descriptors(descriptors: &[ToolDescriptor]) -> String {
    let mut out = String::new();
    for d in descriptors {
        let params: Vec<String> = d
            .params
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "?" };
                format!("{}{opt}: {}", p.name, p.ty)
            })
            .collect();
        out.push_str(&format!(
            "- {}({}) -> returns: {}\n",
            d.name,
            params.join(", "),
            d.returns
        ));
        out.push_str(&format!("    {}\n", d.description));
        for p in &d.params {
            out.push_str(&format!("    {}: {}\n", p.name, p.description));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool: String,
    pub args: Args,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool: impl Into<String>, args: Args) -> Self {
        ToolCall {
            call_id: call_id.into(),
            tool: tool.into(),
            args,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownTool,
    BadArgs,
    BackendFailure,
    Timeout,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownTool => "UNKNOWN_TOOL",
            ErrorCode::BadArgs => "BAD_ARGS",
            ErrorCode::BackendFailure => "BACKEND_FAILURE",
            ErrorCode::Timeout => "TIMEOUT",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub log: String,
}

impl ToolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ToolError {
            code,
            message: message.into(),
            log: String::new(),
        }
    }

    pub fn bad_args(message: impl Into<String>) -> Self {
        ToolError::new(ErrorCode::BadArgs, message)
    }

    pub fn with_log(mut self, log: impl Into<String>) -> Self {
        self.log = log.into();
        self
    }
}

/// Result of one invocation: a structured value or a typed error, never both.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolResult {
    pub call_id: String,
    pub outcome: Result<Value, ToolError>,
}

impl ToolResult {
    pub fn ok(call_id: impl Into<String>, value: Value) -> Self {
        ToolResult {
            call_id: call_id.into(),
            outcome: Ok(value),
        }
    }

    pub fn err(call_id: impl Into<String>, error: ToolError) -> Self {
        ToolResult {
            call_id: call_id.into(),
            outcome: Err(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        self.outcome.as_ref().err().map(|e| e.code)
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connectivity error: {0}")]
    Connectivity(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can list and invoke tools: the in-process registry, an HTTP
/// server, or a subprocess speaking line-delimited JSON.
pub trait ToolEndpoint: Send + Sync {
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError>;

    fn invoke_call(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn two_param_tool() -> ToolDescriptor {
        ToolDescriptor {
            name: "probe".into(),
            description: "Probe a thing.".into(),
            params: vec![
                ParamSpec::required("query", ParamType::String, "what to look for"),
                ParamSpec::optional("k", ParamType::Int, "how many"),
            ],
            returns: "{found}".into(),
            result_keys: vec!["found".into()],
        }
    }

    #[test]
    fn one_dash_line_per_tool() {
        let text = render_descriptors(&[two_param_tool()]);
        let dash: Vec<&str> = text.lines().filter(|l| l.starts_with("- ")).collect();
        assert_eq!(dash, vec!["- probe(query: string, k?: int) -> returns: {found}"]);
        assert_eq!(text, render_descriptors(&[two_param_tool()]));
        assert_eq!(render_descriptors(&[]), "");
    }

    #[test]
    fn arg_checking_names_the_parameter() {
        let d = two_param_tool();
        let args = |v: Value| v.as_object().unwrap().clone();
        assert!(d.check_args(&args(json!({"query": "x"}))).is_ok());
        assert!(d.check_args(&args(json!({"query": "x", "k": 3}))).is_ok());
        let e = d.check_args(&args(json!({"k": 3}))).unwrap_err();
        assert!(e.contains("`query`"), "{e}");
        let e = d.check_args(&args(json!({"query": "x", "k": 1.5}))).unwrap_err();
        assert!(e.contains("`k`") && e.contains("float"), "{e}");
        let e = d.check_args(&args(json!({"query": "x", "zzz": 1}))).unwrap_err();
        assert!(e.contains("`zzz`"), "{e}");
    }

    #[test]
    fn param_type_acceptance() {
        assert!(ParamType::Float.accepts(&json!(3)));
        assert!(!ParamType::Int.accepts(&json!(3.5)));
        assert!(ParamType::ListOfInt.accepts(&json!([1, 2])));
        assert!(!ParamType::ListOfInt.accepts(&json!([1, "2"])));
        assert!(ParamType::ListOfString.accepts(&json!([])));
    }

    #[test]
    fn tool_names() {
        assert!(is_valid_tool_name("identify_instance"));
        assert!(!is_valid_tool_name("Identify"));
        assert!(!is_valid_tool_name("rpc.list_tools"));
        assert!(!is_valid_tool_name(""));
    }
}
