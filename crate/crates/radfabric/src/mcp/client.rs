//! Tool client: concurrent callers share one connection; responses are routed
//! back to their originating caller by request id, not arrival order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::envelope::{self, RpcErrorObj};
use super::{McpError, ToolSpec};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

type PendingMap = Mutex<HashMap<i64, Sender<Result<Value, RpcErrorObj>>>>;

pub struct ToolClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<PendingMap>,
    next_id: AtomicI64,
    closed: Arc<AtomicBool>,
    timeout: Duration,
}

impl ToolClient {
    /// Connect over an arbitrary byte-stream pair (stdio pipes, in-memory
    /// loopback). Spawns a reader thread that routes responses by id.
    pub fn connect<R, W>(reader: R, writer: W) -> ToolClient
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending: Arc<PendingMap> = Arc::new(Mutex::new(HashMap::new()));
        let closed = Arc::new(AtomicBool::new(false));
        let reader_pending = pending.clone();
        let reader_closed = closed.clone();
        std::thread::spawn(move || {
            let buf = BufReader::new(reader);
            for line in buf.lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                let Ok(msg) = serde_json::from_str::<Value>(&line) else {
                    continue;
                };
                let Some(id) = msg.get("id").and_then(Value::as_i64) else {
                    continue;
                };
                let outcome = if let Some(err) = msg.get("error") {
                    match serde_json::from_value::<RpcErrorObj>(err.clone()) {
                        Ok(e) => Err(e),
                        Err(_) => continue,
                    }
                } else {
                    Ok(msg.get("result").cloned().unwrap_or(Value::Null))
                };
                if let Some(tx) = reader_pending.lock().unwrap().remove(&id) {
                    let _ = tx.send(outcome);
                }
            }
            reader_closed.store(true, Ordering::SeqCst);
            // Fail anything still in flight.
            reader_pending.lock().unwrap().clear();
        });
        ToolClient {
            writer: Mutex::new(Box::new(writer)),
            pending,
            next_id: AtomicI64::new(1),
            closed,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn connect_tcp<A: ToSocketAddrs>(addr: A) -> Result<ToolClient, McpError> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Ok(ToolClient::connect(reader, stream))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> ToolClient {
        self.timeout = timeout;
        self
    }

    fn round_trip(&self, method: &str, params: Value) -> Result<Value, McpError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(McpError::Closed);
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = channel();
        self.pending.lock().unwrap().insert(id, tx);
        let frame = envelope::request(id, method, params).to_string();
        {
            let mut writer = self.writer.lock().unwrap();
            let sent = writer
                .write_all(frame.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush());
            if let Err(e) = sent {
                self.pending.lock().unwrap().remove(&id);
                return Err(McpError::Transport(e.to_string()));
            }
        }
        match rx.recv_timeout(self.timeout) {
            Ok(Ok(result)) => Ok(result),
            Ok(Err(err)) => Err(McpError::Server {
                code: err.code,
                message: err.message,
                data: err.data,
            }),
            Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                Err(McpError::Timeout)
            }
            Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => Err(McpError::Closed),
        }
    }

    pub fn initialize(&self) -> Result<Value, McpError> {
        self.round_trip("initialize", json!({}))
    }

    pub fn list_tools(&self) -> Result<Vec<ToolSpec>, McpError> {
        let result = self.round_trip("tools/list", json!({}))?;
        let tools = result
            .get("tools")
            .cloned()
            .ok_or_else(|| McpError::Protocol("tools/list result missing tools".into()))?;
        serde_json::from_value(tools).map_err(|e| McpError::Protocol(e.to_string()))
    }

    pub fn call_tool(&self, name: &str, arguments: Value) -> Result<Value, McpError> {
        if name.is_empty() {
            return Err(McpError::Protocol("tool name must be nonempty".into()));
        }
        self.round_trip("tools/call", json!({"name": name, "arguments": arguments}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcp::transport::duplex;
    use crate::mcp::ToolServer;

    fn loopback_client(server: ToolServer) -> ToolClient {
        let ((client_r, client_w), (server_r, server_w)) = duplex();
        std::thread::spawn(move || {
            let _ = server.serve_connection(BufReader::new(server_r), server_w);
        });
        ToolClient::connect(client_r, client_w).with_timeout(Duration::from_secs(5))
    }

    fn echo_server() -> ToolServer {
        let mut server = ToolServer::new();
        server
            .register(
                super::super::ToolSpec::new("echo", "identity", json!({"type": "object"})),
                Box::new(|args| Ok(args.clone())),
            )
            .unwrap();
        server
    }

    #[test]
    fn echo_round_trip() {
        let client = loopback_client(echo_server());
        let out = client.call_tool("echo", json!({"a": 1})).unwrap();
        assert_eq!(out, json!({"a": 1}));
    }

    #[test]
    fn initialize_and_list() {
        let client = loopback_client(echo_server());
        let init = client.initialize().unwrap();
        assert_eq!(init["tools_count"], 1);
        let tools = client.list_tools().unwrap();
        assert_eq!(tools.len(), 1);
        assert_eq!(tools[0].name, "echo");
    }

    #[test]
    fn responses_route_by_id_even_when_reordered() {
        // Stub server that reads two requests, then answers them in reverse.
        let ((client_r, client_w), (server_r, mut server_w)) = duplex();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(server_r);
            let mut lines = Vec::new();
            for _ in 0..2 {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                lines.push(serde_json::from_str::<Value>(&line).unwrap());
            }
            for req in lines.iter().rev() {
                let id = req["id"].clone();
                let name = req["params"]["name"].clone();
                let resp = envelope::success(id, json!({"tool": name}));
                server_w
                    .write_all(format!("{resp}\n").as_bytes())
                    .unwrap();
            }
        });
        let client =
            Arc::new(ToolClient::connect(client_r, client_w).with_timeout(Duration::from_secs(5)));
        let c1 = client.clone();
        let t1 = std::thread::spawn(move || c1.call_tool("first", json!({})).unwrap());
        // Make request ordering deterministic on the wire.
        std::thread::sleep(Duration::from_millis(50));
        let c2 = client.clone();
        let t2 = std::thread::spawn(move || c2.call_tool("second", json!({})).unwrap());
        assert_eq!(t1.join().unwrap(), json!({"tool": "first"}));
        assert_eq!(t2.join().unwrap(), json!({"tool": "second"}));
    }

    #[test]
    fn closed_transport_is_an_error_not_a_panic() {
        let ((client_r, client_w), server_end) = duplex();
        drop(server_end);
        let client =
            ToolClient::connect(client_r, client_w).with_timeout(Duration::from_millis(200));
        // Reader thread sees EOF immediately; the call fails either way.
        std::thread::sleep(Duration::from_millis(50));
        let err = client.call_tool("echo", json!({})).unwrap_err();
        assert!(matches!(
            err,
            McpError::Closed | McpError::Transport(_) | McpError::Timeout
        ));
    }

    #[test]
    fn server_error_surfaces_code_and_message() {
        let client = loopback_client(echo_server());
        let err = client.call_tool("nope", json!({})).unwrap_err();
        match err {
            McpError::Server { code, .. } => assert_eq!(code, super::super::ERR_METHOD_NOT_FOUND),
            other => panic!("expected server error, got {other:?}"),
        }
    }
}
