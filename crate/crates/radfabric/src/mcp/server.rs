//! Tool server: dispatches `initialize`, `tools/list` and `tools/call` over
//! newline-delimited JSON-RPC.
//!
//! Requests on one connection are processed sequentially in arrival order;
//! concurrency lives on the client side.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::envelope::{self, ERR_HANDLER, ERR_INVALID_PARAMS, ERR_METHOD_NOT_FOUND, ERR_PARSE};
use super::schema::validate_schema;
use super::{McpError, ToolHandler, ToolSpec};

pub struct ToolServer {
    tools: Vec<(ToolSpec, ToolHandler)>,
}

impl Default for ToolServer {
    fn default() -> Self {
        Self::new()
    }
}

impl ToolServer {
    pub fn new() -> Self {
        ToolServer { tools: Vec::new() }
    }

    pub fn register(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), McpError> {
        if spec.name.is_empty() {
            return Err(McpError::Protocol("tool name must be nonempty".into()));
        }
        if self.tools.iter().any(|(s, _)| s.name == spec.name) {
            return Err(McpError::DuplicateTool(spec.name));
        }
        self.tools.push((spec, handler));
        Ok(())
    }

    pub fn tool_specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|(s, _)| s.clone()).collect()
    }

    /// Handle one frame. Returns the response frame, or `None` for
    /// notifications (requests without an id).
    pub fn handle_frame(&self, frame: &str) -> Option<String> {
        let msg: Value = match serde_json::from_str(frame) {
            Ok(v) => v,
            Err(e) => {
                let resp =
                    envelope::failure(Value::Null, ERR_PARSE, &format!("parse error: {e}"), None);
                return Some(resp.to_string());
            }
        };
        let id = msg.get("id").cloned();
        let is_notification = id.is_none();
        let id = id.unwrap_or(Value::Null);
        let response = match msg.get("method").and_then(Value::as_str) {
            Some(method) => self.dispatch(method, msg.get("params"), id),
            None => envelope::failure(id, ERR_INVALID_PARAMS, "missing method", None),
        };
        if is_notification {
            None
        } else {
            Some(response.to_string())
        }
    }

    fn dispatch(&self, method: &str, params: Option<&Value>, id: Value) -> Value {
        match method {
            "initialize" => envelope::success(
                id,
                json!({"protocol": "radfabric-mcp/1", "tools_count": self.tools.len()}),
            ),
            "tools/list" => envelope::success(id, json!({"tools": self.tool_specs()})),
            "tools/call" => self.call(params, id),
            other => envelope::failure(
                id,
                ERR_METHOD_NOT_FOUND,
                &format!("method not found: {other}"),
                None,
            ),
        }
    }

    fn call(&self, params: Option<&Value>, id: Value) -> Value {
        let Some(name) = params.and_then(|p| p.get("name")).and_then(Value::as_str) else {
            return envelope::failure(id, ERR_INVALID_PARAMS, "tools/call requires a name", None);
        };
        let default_args = json!({});
        let args = params
            .and_then(|p| p.get("arguments"))
            .unwrap_or(&default_args);
        let Some((spec, handler)) = self.tools.iter().find(|(s, _)| s.name == name) else {
            return envelope::failure(
                id,
                ERR_METHOD_NOT_FOUND,
                &format!("unknown tool: {name}"),
                None,
            );
        };
        if let Err(e) = validate_schema(&spec.input_schema, args) {
            return envelope::failure(id, ERR_INVALID_PARAMS, &format!("invalid arguments: {e}"), None);
        }
        match handler(args) {
            Ok(result) => envelope::success(id, result),
            Err(msg) => {
                envelope::failure(id, ERR_HANDLER, "tool handler failed", Some(json!(msg)))
            }
        }
    }

    /// Serve one connection until EOF.
    pub fn serve_connection<R: BufRead, W: Write>(
        &self,
        reader: R,
        mut writer: W,
    ) -> std::io::Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(response) = self.handle_frame(&line) {
                writer.write_all(response.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
            }
        }
        Ok(())
    }

    pub fn serve_stdio(&self) -> std::io::Result<()> {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        self.serve_connection(stdin.lock(), stdout.lock())
    }

    /// Bind and serve TCP connections on background threads.
    pub fn serve_tcp<A: ToSocketAddrs>(self: Arc<Self>, addr: A) -> Result<TcpServerHandle, McpError> {
        let listener = TcpListener::bind(addr)?;
        let local_addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let accept_shutdown = shutdown.clone();
        let server = self;
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let server = server.clone();
                std::thread::spawn(move || {
                    let reader = BufReader::new(match stream.try_clone() {
                        Ok(s) => s,
                        Err(_) => return,
                    });
                    let _ = server.serve_connection(reader, stream);
                });
            }
        });
        Ok(TcpServerHandle {
            local_addr,
            shutdown,
            thread: Some(thread),
        })
    }
}

pub struct TcpServerHandle {
    local_addr: std::net::SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpServerHandle {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop();
        }
    }
}
