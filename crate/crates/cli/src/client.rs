//! The developer-facing client: northbound calls to the orchestrator and
//! direct real-time submission to a site.

use std::fs;
use std::io;
use std::net::TcpStream;
use std::path::Path;
use std::time::Duration;

use airan_core::auth::AuthToken;
use airan_core::model::TenantId;
use airan_core::o2::{read_frame, write_frame, EnvelopeFactory, Payload, StreamError};
use serde::{Deserialize, Serialize};

const TIMEOUT: Duration = Duration::from_secs(10);

/// Stored credentials and the last token issued.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Identity {
    pub tenant: TenantId,
    pub credential: String,
    #[serde(default)]
    pub token: Option<AuthToken>,
}

impl Identity {
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("identity serializes");
        fs::write(path, text + "\n")
    }
}

#[derive(Debug)]
pub enum CallError {
    Connect(String, io::Error),
    Stream(StreamError),
    Payload(String),
}

impl std::fmt::Display for CallError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CallError::Connect(addr, e) => write!(f, "cannot reach {addr}: {e}"),
            CallError::Stream(e) => write!(f, "transport error: {e}"),
            CallError::Payload(m) => write!(f, "bad reply: {m}"),
        }
    }
}

/// One request/response exchange over a fresh connection.
pub fn call(addr: &str, request: &Payload) -> Result<Payload, CallError> {
    let mut stream = TcpStream::connect(addr).map_err(|e| CallError::Connect(addr.to_string(), e))?;
    stream
        .set_read_timeout(Some(TIMEOUT))
        .map_err(|e| CallError::Connect(addr.to_string(), e))?;
    let env = EnvelopeFactory::new("client").wrap("", request);
    write_frame(&mut stream, &env).map_err(CallError::Stream)?;
    let reply = read_frame(&mut stream).map_err(CallError::Stream)?;
    reply.decode_payload().map_err(|e| CallError::Payload(e.to_string()))
}
