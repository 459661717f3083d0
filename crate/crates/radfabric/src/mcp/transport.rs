//! Transport configuration and an in-memory duplex pipe for loopback tests.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Stdio,
    Tcp,
}

/// Where a server listens or a client connects. Framing is always
/// newline-delimited JSON.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransportConfig {
    pub mode: TransportMode,
    /// `host:port`, TCP mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
}

impl TransportConfig {
    pub fn stdio() -> Self {
        TransportConfig {
            mode: TransportMode::Stdio,
            address: None,
        }
    }

    pub fn tcp(address: impl Into<String>) -> Self {
        TransportConfig {
            mode: TransportMode::Tcp,
            address: Some(address.into()),
        }
    }
}

/// Create two connected in-memory endpoints; bytes written to one side are
/// read from the other.
pub fn duplex() -> ((PipeReader, PipeWriter), (PipeReader, PipeWriter)) {
    let (a_tx, a_rx) = channel();
    let (b_tx, b_rx) = channel();
    (
        (PipeReader::new(a_rx), PipeWriter { tx: b_tx }),
        (PipeReader::new(b_rx), PipeWriter { tx: a_tx }),
    )
}

pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl PipeReader {
    fn new(rx: Receiver<Vec<u8>>) -> Self {
        PipeReader {
            rx,
            buf: Vec::new(),
            pos: 0,
        }
    }
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                // Sender dropped: EOF.
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe closed"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
