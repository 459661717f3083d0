//! JSON-RPC 2.0 tool bus: the protocol layer over which agents are exposed
//! and invoked as tools.
//!
//! The wire format is newline-delimited UTF-8 JSON over stdio or TCP. Only
//! the `initialize`, `tools/list` and `tools/call` methods are served.

mod client;
mod envelope;
mod schema;
mod server;
mod transport;

pub use client::ToolClient;
pub use envelope::{
    RpcErrorObj, ERR_HANDLER, ERR_INVALID_PARAMS, ERR_METHOD_NOT_FOUND, ERR_PARSE,
};
pub use schema::validate_schema;
pub use server::{TcpServerHandle, ToolServer};
pub use transport::{duplex, PipeReader, PipeWriter, TransportConfig, TransportMode};

use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum McpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for response")]
    Timeout,
    #[error("server error {code}: {message}")]
    Server { code: i64, message: String, data: Option<Value> },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("duplicate tool name {0:?}")]
    DuplicateTool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A tool as advertised by `tools/list`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: Value,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, input_schema: Value) -> Self {
        ToolSpec {
            name: name.into(),
            description: description.into(),
            input_schema,
        }
    }
}

/// Handler invoked by `tools/call`; an `Err` becomes a -32000 response with
/// the message in `error.data`.
pub type ToolHandler = Box<dyn Fn(&Value) -> Result<Value, String> + Send + Sync>;
