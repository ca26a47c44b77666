use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::{
    is_valid_tool_name, Args, ErrorCode, ToolCall, ToolDescriptor, ToolEndpoint, ToolError,
    ToolResult, TransportError,
};

/// Implementation behind a registered tool.
pub trait ToolBackend: Send + Sync {
    fn call(&self, call_id: &str, args: &Args) -> Result<Value, ToolError>;

    /// Backends returning false are never entered concurrently.
    fn is_reentrant(&self) -> bool {
        true
    }
}

impl<F> ToolBackend for F
where
    F: Fn(&str, &Args) -> Result<Value, ToolError> + Send + Sync,
{
    fn call(&self, call_id: &str, args: &Args) -> Result<Value, ToolError> {
        self(call_id, args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
}

struct Entry {
    descriptor: ToolDescriptor,
    backend: Arc<dyn ToolBackend>,
    gate: Option<Arc<Mutex<()>>>,
}

/// Ordered set of tools. Registration order is the prompt rendering order.
#[derive(Default)]
pub struct Registry {
    entries: Vec<Entry>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register(
        &mut self,
        descriptor: ToolDescriptor,
        backend: Arc<dyn ToolBackend>,
    ) -> Result<(), RegistryError> {
        if !is_valid_tool_name(&descriptor.name) {
            return Err(RegistryError::InvalidDescriptor(format!(
                "`{}` is not a lowercase snake_case name",
                descriptor.name
            )));
        }
        if self.get(&descriptor.name).is_some() {
            return Err(RegistryError::Duplicate(descriptor.name));
        }
        for (i, p) in descriptor.params.iter().enumerate() {
            if descriptor.params[..i].iter().any(|q| q.name == p.name) {
                return Err(RegistryError::InvalidDescriptor(format!(
                    "`{}` declares parameter `{}` twice",
                    descriptor.name, p.name
                )));
            }
        }
        let gate = (!backend.is_reentrant()).then(|| Arc::new(Mutex::new(())));
        self.entries.push(Entry {
            descriptor,
            backend,
            gate,
        });
        Ok(())
    }

    pub fn with(mut self, descriptor: ToolDescriptor, backend: Arc<dyn ToolBackend>) -> Result<Self, RegistryError> {
        self.register(descriptor, backend)?;
        Ok(self)
    }

    fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.descriptor.name == name)
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.entries.iter().map(|e| e.descriptor.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Type-checked dispatch. Tool-level failures are reported in the result,
    /// never as a panic or an `Err`.
    pub fn invoke(&self, call: &ToolCall, timeout: Duration) -> ToolResult {
        let id = call.call_id.clone();
        let Some(entry) = self.get(&call.tool) else {
            let known: Vec<&str> = self.entries.iter().map(|e| e.descriptor.name.as_str()).collect();
            return ToolResult::err(
                id,
                ToolError::new(
                    ErrorCode::UnknownTool,
                    format!("unknown tool `{}`; available: {}", call.tool, known.join(", ")),
                ),
            );
        };
        if let Err(msg) = entry.descriptor.check_args(&call.args) {
            return ToolResult::err(id, ToolError::bad_args(msg));
        }
        if timeout.is_zero() {
            return ToolResult::err(
                id,
                ToolError::new(ErrorCode::Timeout, "deadline expired before dispatch"),
            );
        }

        let (tx, rx) = mpsc::channel();
        let backend = Arc::clone(&entry.backend);
        let gate = entry.gate.clone();
        let args = call.args.clone();
        let call_id = call.call_id.clone();
        let spawned = thread::Builder::new()
            .name(format!("tool-{}", call.tool))
            .spawn(move || {
                let _guard = gate.as_ref().map(|g| g.lock().unwrap_or_else(|p| p.into_inner()));
                let out = catch_unwind(AssertUnwindSafe(|| backend.call(&call_id, &args)));
                let _ = tx.send(out);
            });
        if let Err(e) = spawned {
            return ToolResult::err(
                id,
                ToolError::new(ErrorCode::BackendFailure, "could not start tool worker")
                    .with_log(e.to_string()),
            );
        }
        let outcome = match rx.recv_timeout(timeout) {
            Ok(Ok(Ok(value))) => check_result(&entry.descriptor, value),
            Ok(Ok(Err(e))) => Err(e),
            Ok(Err(panic)) => {
                let log = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "non-string panic payload".into());
                Err(ToolError::new(ErrorCode::BackendFailure, "tool backend panicked").with_log(log))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ToolError::new(
                ErrorCode::Timeout,
                format!("`{}` exceeded {} ms", call.tool, timeout.as_millis()),
            )),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(ToolError::new(
                ErrorCode::BackendFailure,
                "tool worker exited without a result",
            )),
        };
        ToolResult { call_id: id, outcome }
    }
}

fn check_result(descriptor: &ToolDescriptor, value: Value) -> Result<Value, ToolError> {
    if descriptor.result_keys.is_empty() {
        return Ok(value);
    }
    let Some(obj) = value.as_object() else {
        return Err(ToolError::new(
            ErrorCode::BackendFailure,
            format!("`{}` returned a non-object result", descriptor.name),
        ));
    };
    if let Some(missing) = descriptor.result_keys.iter().find(|k| !obj.contains_key(*k)) {
        return Err(ToolError::new(
            ErrorCode::BackendFailure,
            format!("`{}` result is missing `{missing}`", descriptor.name),
        ));
    }
    Ok(value)
}

impl ToolEndpoint for Registry {
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        Ok(self.descriptors())
    }

    fn invoke_call(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError> {
        Ok(self.invoke(call, timeout))
    }
}
