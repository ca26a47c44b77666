//! HTTP transport: `GET /tools` lists descriptors, `POST /invoke` carries one
//! request/response message pair.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use super::message::{decode_request, decode_response, encode_request, encode_response};
use super::{
    ErrorCode, ToolCall, ToolDescriptor, ToolEndpoint, ToolError, ToolResult, TransportError,
};

/// Running tool server. Dropping the handle stops it.
pub struct HttpServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl HttpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: Vec<u8>) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

/// Serves `endpoint` on `addr` (use port 0 for an ephemeral port).
pub fn serve_http(
    endpoint: Arc<dyn ToolEndpoint>,
    addr: &str,
    default_timeout: Duration,
) -> Result<HttpServerHandle, TransportError> {
    let server = Server::http(addr).map_err(|e| TransportError::Connectivity(format!("bind {addr}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| TransportError::Connectivity("server has no IP address".into()))?;
    let server = Arc::new(server);
    let accept = Arc::clone(&server);
    let worker = thread::spawn(move || {
        for request in accept.incoming_requests() {
            let endpoint = Arc::clone(&endpoint);
            thread::spawn(move || handle(request, endpoint.as_ref(), default_timeout));
        }
    });
    Ok(HttpServerHandle {
        server,
        addr,
        worker: Some(worker),
    })
}

fn handle(mut request: tiny_http::Request, endpoint: &dyn ToolEndpoint, default_timeout: Duration) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let reply = match (request.method(), path.as_str()) {
        (Method::Get, "/tools") => match endpoint.list_tools() {
            Ok(tools) => json_response(200, serde_json::to_vec(&tools).expect("descriptors serialize")),
            Err(e) => json_response(502, serde_json::to_vec(&serde_json::json!({"error": e.to_string()})).unwrap()),
        },
        (Method::Post, "/invoke") => {
            let mut body = Vec::new();
            if let Err(e) = request.as_reader().read_to_end(&mut body) {
                let err = ToolResult::err("", ToolError::bad_args(format!("unreadable body: {e}")));
                json_response(400, encode_response(&err))
            } else {
                match decode_request(&body) {
                    Ok(req) => {
                        let timeout = req
                            .timeout_ms
                            .map(Duration::from_millis)
                            .unwrap_or(default_timeout)
                            .min(default_timeout);
                        let result = endpoint
                            .invoke_call(&req.call, timeout)
                            .unwrap_or_else(|e| {
                                ToolResult::err(
                                    req.call.call_id.clone(),
                                    ToolError::new(ErrorCode::BackendFailure, e.to_string()),
                                )
                            });
                        json_response(200, encode_response(&result))
                    }
                    Err(e) => {
                        let err = ToolResult::err("", ToolError::bad_args(e.to_string()));
                        json_response(400, encode_response(&err))
                    }
                }
            }
        }
        _ => json_response(404, br#"{"error":"not found"}"#.to_vec()),
    };
    let _ = request.respond(reply);
}

/// Client for a remote tool server.
pub struct HttpToolClient {
    base_url: String,
    list_timeout: Duration,
}

impl HttpToolClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpToolClient {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            list_timeout: Duration::from_secs(10),
        }
    }

    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

impl ToolEndpoint for HttpToolClient {
    fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        let url = format!("{}/tools", self.base_url);
        let mut resp = Self::agent(self.list_timeout)
            .get(&url)
            .call()
            .map_err(|e| TransportError::Connectivity(format!("GET {url}: {e}")))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connectivity(format!("GET {url}: {e}")))?;
        serde_json::from_str(&body)
            .map_err(|e| TransportError::Protocol(super::ProtocolError(format!("bad /tools body: {e}"))))
    }

    fn invoke_call(&self, call: &ToolCall, timeout: Duration) -> Result<ToolResult, TransportError> {
        let url = format!("{}/invoke", self.base_url);
        let body = encode_request(call, Some(timeout.as_millis() as u64));
        let grace = timeout + Duration::from_secs(5);
        let sent = Self::agent(grace)
            .post(&url)
            .header("Content-Type", "application/json")
            .send(&body[..]);
        let mut resp = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Ok(ToolResult::err(
                    call.call_id.clone(),
                    ToolError::new(ErrorCode::Timeout, format!("no response from {url}")),
                ))
            }
            Err(e) => return Err(TransportError::Connectivity(format!("POST {url}: {e}"))),
        };
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Connectivity(format!("POST {url}: {e}")))?;
        Ok(decode_response(text.as_bytes())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Args, ParamSpec, ParamType, Registry, ToolBackend, DEFAULT_TOOL_TIMEOUT};
    use serde_json::json;

    fn registry() -> Registry {
        let d = ToolDescriptor {
            name: "echo".into(),
            description: "Echo.".into(),
            params: vec![ParamSpec::required("text", ParamType::String, "text")],
            returns: "{echo}".into(),
            result_keys: vec!["echo".into()],
        };
        let b: Arc<dyn ToolBackend> = Arc::new(|_: &str, a: &Args| Ok(json!({"echo": a["text"]})));
        Registry::new().with(d, b).unwrap()
    }

    #[test]
    fn http_round_trip() {
        let server = serve_http(Arc::new(registry()), "127.0.0.1:0", DEFAULT_TOOL_TIMEOUT).unwrap();
        let client = HttpToolClient::new(server.base_url());
        let tools = client.list_tools().unwrap();
        assert_eq!(tools.len(), 1);
        let call = ToolCall::new("c9", "echo", json!({"text": "hey"}).as_object().cloned().unwrap());
        let res = client.invoke_call(&call, Duration::from_secs(5)).unwrap();
        assert_eq!(res, ToolResult::ok("c9", json!({"echo": "hey"})));
        let bad = ToolCall::new("c10", "echo", Args::new());
        let res = client.invoke_call(&bad, Duration::from_secs(5)).unwrap();
        assert_eq!(res.error_code(), Some(ErrorCode::BadArgs));
        assert_eq!(res.call_id, "c10");
    }

    #[test]
    fn malformed_body_gets_protocol_error_response() {
        let server = serve_http(Arc::new(registry()), "127.0.0.1:0", DEFAULT_TOOL_TIMEOUT).unwrap();
        let agent = HttpToolClient::agent(Duration::from_secs(5));
        let mut resp = agent
            .post(format!("{}/invoke", server.base_url()))
            .send(&b"{\"v\":2}"[..])
            .unwrap();
        assert_eq!(resp.status().as_u16(), 400);
        let body = resp.body_mut().read_to_string().unwrap();
        let decoded = decode_response(body.as_bytes()).unwrap();
        assert_eq!(decoded.error_code(), Some(ErrorCode::BadArgs));
    }

    #[test]
    fn nothing_listening_is_connectivity_error() {
        // bind then drop to get a port that is very likely closed
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let client = HttpToolClient::new(format!("http://127.0.0.1:{port}"));
        assert!(matches!(client.list_tools(), Err(TransportError::Connectivity(_))));
    }
}
