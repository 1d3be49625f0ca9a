//! Out-of-process backends over the child's standard streams.
//!
//! Every message is a 4-byte little-endian length followed by that many bytes
//! of UTF-8 JSON. Images travel as base64 PNG: 8-bit RGB color, 8-bit masks
//! and semantic maps, 16-bit depth in millimeters (0 = invalid).

use std::io::{ErrorKind, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, DepthContext, SynthesisRequest};
use crate::error::{Error, Result};
use crate::geometry::{io, ColorMap, DepthMap};

/// Largest accepted message body.
pub const MAX_MESSAGE: usize = 256 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);
const TRANSCRIPT_LEN: usize = 32;

pub fn write_message(w: &mut impl Write, body: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "message too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one message; `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl Read) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_MESSAGE {
        return Err(std::io::Error::new(ErrorKind::InvalidData, format!("message length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn encode_png(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub fn decode_png(field: &str, value: &Value) -> Result<Vec<u8>> {
    let text = value.get(field).and_then(Value::as_str).ok_or_else(|| Error::parse(field, "missing base64 string"))?;
    B64.decode(text).map_err(|e| Error::parse(field, e.to_string()))
}

/// JSON body of an `inpaint` request.
pub fn inpaint_message(req: &SynthesisRequest) -> Result<Value> {
    let (w, h) = req.dims();
    Ok(json!({
        "op": "inpaint",
        "color": encode_png(&io::color_to_png(&req.color)?),
        "mask": encode_png(&io::mask_to_png(&req.mask, w, h)?),
        "semantic": encode_png(&io::semantic_to_png(&req.semantic)?),
        "depth": encode_png(&io::depth_to_png(&req.depth)?),
        "prompt": req.prompt,
        "seed": req.seed,
    }))
}

pub fn depth_message(color: &ColorMap) -> Result<Value> {
    Ok(json!({ "op": "depth", "color": encode_png(&io::color_to_png(color)?) }))
}

enum Incoming {
    Message(Vec<u8>),
    Closed,
    Failed(String),
}

/// A backend process speaking the length-prefixed JSON protocol.
pub struct ProtocolBackend {
    command: Vec<String>,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    incoming: Option<Receiver<Incoming>>,
    timeout: Duration,
    transcript: Vec<String>,
}

impl ProtocolBackend {
    /// Starts `command[0]` with the remaining arguments.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        let program = command.first().ok_or_else(|| Error::Config("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend { message: format!("cannot start `{program}`: {e}"), transcript: Vec::new() })?;
        let stdin = child.stdin.take();
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let msg = match read_message(&mut stdout) {
                Ok(Some(body)) => Incoming::Message(body),
                Ok(None) => Incoming::Closed,
                Err(e) => Incoming::Failed(e.to_string()),
            };
            let last = !matches!(msg, Incoming::Message(_));
            if tx.send(msg).is_err() || last {
                break;
            }
        });
        Ok(ProtocolBackend {
            command: command.to_vec(),
            child: Some(child),
            stdin,
            incoming: Some(rx),
            timeout,
            transcript: Vec::new(),
        })
    }

    /// Parses a `proto:<cmd>` style command line (whitespace separated).
    pub fn from_command_line(line: &str, timeout: Duration) -> Result<Self> {
        let parts: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        Self::spawn(&parts, timeout)
    }

    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    fn note(&mut self, line: String) {
        if self.transcript.len() == TRANSCRIPT_LEN {
            self.transcript.remove(0);
        }
        self.transcript.push(line);
    }

    fn fail(&mut self, message: String) -> Error {
        self.note(format!("!! {message}"));
        self.shutdown();
        Error::Backend { message, transcript: self.transcript.clone() }
    }

    fn shutdown(&mut self) {
        self.stdin = None;
        self.incoming = None;
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }

    /// Sends one request and waits for its response object.
    pub fn call(&mut self, request: &Value) -> Result<Value> {
        let op = request.get("op").and_then(Value::as_str).unwrap_or("?").to_string();
        let body = serde_json::to_vec(request)?;
        let Some(stdin) = self.stdin.as_mut() else {
            return Err(self.fail(format!("backend `{}` is not running", self.command.join(" "))));
        };
        if let Err(e) = write_message(stdin, &body) {
            return Err(self.fail(format!("write failed: {e}")));
        }
        self.note(format!("-> {op} ({} bytes)", body.len()));
        let received = self.incoming.as_ref().expect("running backend").recv_timeout(self.timeout);
        let bytes = match received {
            Ok(Incoming::Message(b)) => b,
            Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => {
                return Err(self.fail("backend closed its output".into()))
            }
            Ok(Incoming::Failed(e)) => return Err(self.fail(format!("malformed message: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(self.fail(format!("timed out after {:.1} s", self.timeout.as_secs_f64())))
            }
        };
        self.note(format!("<- {} bytes", bytes.len()));
        let value: Value = match serde_json::from_slice(&bytes) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return Err(self.fail("malformed response: not a JSON object".into())),
            Err(e) => return Err(self.fail(format!("malformed response: {e}"))),
        };
        if let Some(msg) = value.get("error") {
            let msg = msg.as_str().map_or_else(|| msg.to_string(), str::to_string);
            self.note(format!("!! backend error: {msg}"));
            return Err(Error::Backend { message: msg, transcript: self.transcript.clone() });
        }
        Ok(value)
    }

    fn decode<T>(&mut self, value: &Value, field: &str, f: impl Fn(&[u8]) -> Result<T>) -> Result<T> {
        match decode_png(field, value).and_then(|b| f(&b)) {
            Ok(v) => Ok(v),
            Err(e) => Err(self.fail(format!("malformed response: {e}"))),
        }
    }
}

impl Drop for ProtocolBackend {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Backend for ProtocolBackend {
    fn name(&self) -> String {
        format!("proto:{}", self.command.join(" "))
    }

    fn inpaint(&mut self, req: &SynthesisRequest) -> Result<ColorMap> {
        let resp = self.call(&inpaint_message(req)?)?;
        self.decode(&resp, "color", io::color_from_png)
    }

    fn estimate_depth(&mut self, color: &ColorMap, _context: Option<DepthContext<'_>>) -> Result<DepthMap> {
        let resp = self.call(&depth_message(color)?)?;
        self.decode(&resp, "depth", io::depth_from_png)
    }
}
