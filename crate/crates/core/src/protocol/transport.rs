//! Client side of the backend protocol: the backend trait, the stdio and
//! HTTP transports, and a pool for parallel evaluation.

use std::fmt;
use std::io::{self, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::mock::{MockBackend, OracleConfig};
use super::{check_response, decode_response, encode_request, BackendRequest, BackendResponse};
use crate::color::Illuminant;
use crate::error::{invalid, Error, ProtocolError, Result};

/// Largest frame accepted on the stdio transport.
pub const MAX_FRAME_BYTES: usize = 512 << 20;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Anything that can inpaint a request. Implementations must answer each
/// request exactly once.
pub trait InpaintBackend: Send + Sync {
    fn name(&self) -> String;
    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse>;
}

impl<B: InpaintBackend + ?Sized> InpaintBackend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        (**self).inpaint(req)
    }
}

impl<B: InpaintBackend + ?Sized> InpaintBackend for std::sync::Arc<B> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        (**self).inpaint(req)
    }
}

/// Where a backend lives.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    /// The in-process mock.
    Mock(OracleConfig),
    /// A program speaking length-prefixed frames on stdin/stdout.
    Subprocess { program: String, args: Vec<String> },
    /// Base URL of an HTTP backend; requests go to `<url>/inpaint`.
    Http(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Mock(_) => f.write_str("mock"),
            Endpoint::Subprocess { program, args } => {
                write!(f, "stdio:{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            Endpoint::Http(url) => f.write_str(url),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    /// `mock`, `stdio:<command line>`, `http://host:port` or `http:<port>`
    /// (shorthand for localhost).
    fn from_str(s: &str) -> Result<Self> {
        if s == "mock" {
            return Ok(Endpoint::Mock(OracleConfig::fixed(Illuminant::neutral())));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts
                .next()
                .ok_or_else(|| invalid("stdio endpoint needs a command"))?;
            return Ok(Endpoint::Subprocess {
                program,
                args: parts.collect(),
            });
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Http(s.trim_end_matches('/').to_owned()));
        }
        if let Some(port) = s.strip_prefix("http:") {
            let port: u16 = port
                .parse()
                .map_err(|_| invalid(format!("bad port in endpoint `{s}`")))?;
            return Ok(Endpoint::Http(format!("http://127.0.0.1:{port}")));
        }
        Err(invalid(format!(
            "unrecognized backend endpoint `{s}` (expected mock, stdio:CMD, http://HOST:PORT or http:PORT)"
        )))
    }
}

impl Endpoint {
    pub fn connect(&self, timeout: Duration) -> Result<Box<dyn InpaintBackend>> {
        Ok(match self {
            Endpoint::Mock(oracle) => Box::new(MockBackend::new(oracle.clone())),
            Endpoint::Subprocess { program, args } => {
                Box::new(SubprocessBackend::new(program.clone(), args.clone(), timeout))
            }
            Endpoint::Http(url) => Box::new(HttpBackend::new(url.clone(), timeout)),
        })
    }
}

/// One-shot request against `endpoint`.
pub fn call_backend(endpoint: &Endpoint, req: &BackendRequest, timeout: Duration) -> Result<BackendResponse> {
    endpoint.connect(timeout)?.inpaint(req)
}

pub(crate) fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the header.
pub(crate) fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("stream ended inside a frame header after {got} bytes"),
                ))
            }
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            ProtocolError::FrameTooLarge(len).to_string(),
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("stream ended inside a {len}-byte frame: {e}"),
        )
    })?;
    Ok(Some(payload))
}

struct Proc {
    child: Child,
    stdin: ChildStdin,
    frames: Receiver<io::Result<Vec<u8>>>,
}

impl Proc {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Backend running as a child process. The process is spawned on first use
/// and respawned after a transport failure.
pub struct SubprocessBackend {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    proc: Mutex<Option<Proc>>,
}

impl SubprocessBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Self {
        Self {
            program: program.into(),
            args,
            timeout,
            proc: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Proc> {
        debug!("spawning backend `{}` {:?}", self.program, self.args);
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("cannot start `{}`: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("backend-reader".into())
            .spawn(move || {
                let mut r = BufReader::new(stdout);
                loop {
                    let frame = match read_frame(&mut r) {
                        Ok(Some(f)) => Ok(f),
                        Ok(None) => Err(io::Error::new(
                            io::ErrorKind::UnexpectedEof,
                            "backend closed its stdout",
                        )),
                        Err(e) => Err(e),
                    };
                    let done = frame.is_err();
                    if tx.send(frame).is_err() || done {
                        break;
                    }
                }
            })
            .map_err(|e| Error::Transport(format!("cannot start reader thread: {e}")))?;
        Ok(Proc {
            child,
            stdin,
            frames: rx,
        })
    }

    fn exchange(&self, payload: &[u8]) -> Result<Vec<u8>> {
        let mut guard = self.proc.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let proc = guard.as_mut().expect("spawned above");
        if let Err(e) = write_frame(&mut proc.stdin, payload) {
            if let Some(a) = guard.take() { Proc::kill(a) }
            return Err(Error::Transport(format!("writing request to backend: {e}")));
        }
        match proc.frames.recv_timeout(self.timeout) {
            Ok(Ok(frame)) => Ok(frame),
            Ok(Err(e)) => {
                if let Some(a) = guard.take() { Proc::kill(a) }
                Err(Error::Transport(format!("backend process failed mid-request: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Some(a) = guard.take() { Proc::kill(a) }
                Err(Error::Timeout(self.timeout.as_millis() as u64))
            }
            Err(RecvTimeoutError::Disconnected) => {
                if let Some(a) = guard.take() { Proc::kill(a) }
                Err(Error::Transport("backend reader stopped".into()))
            }
        }
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        if let Some(mut p) = self.proc.get_mut().ok().and_then(Option::take) {
            // Closing stdin asks a well-behaved server to exit; then reap it.
            drop(p.stdin);
            match p.child.try_wait() {
                Ok(Some(_)) => {}
                _ => {
                    thread::sleep(Duration::from_millis(20));
                    if !matches!(p.child.try_wait(), Ok(Some(_))) {
                        let _ = p.child.kill();
                        let _ = p.child.wait();
                    }
                }
            }
        }
    }
}

impl InpaintBackend for SubprocessBackend {
    fn name(&self) -> String {
        format!("stdio:{}", self.program)
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let reply = self.exchange(&encode_request(req)?)?;
        let resp = decode_response(&reply)?;
        check_response(req, &resp)?;
        Ok(resp)
    }
}

/// Backend reachable over HTTP at `<base>/inpaint`.
pub struct HttpBackend {
    base: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            timeout,
            agent,
        }
    }

    fn map_err(&self, e: ureq::Error) -> Error {
        match e {
            ureq::Error::Timeout(_) => Error::Timeout(self.timeout.as_millis() as u64),
            other => Error::Transport(format!("{}: {other}", self.base)),
        }
    }
}

impl InpaintBackend for HttpBackend {
    fn name(&self) -> String {
        self.base.clone()
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let body = encode_request(req)?;
        let mut resp = self
            .agent
            .post(format!("{}/inpaint", self.base))
            .header("content-type", "application/json")
            .send(&body[..])
            .map_err(|e| self.map_err(e))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_FRAME_BYTES as u64)
            .read_to_vec()
            .map_err(|e| self.map_err(e))?;
        let decoded = decode_response(&bytes);
        if !(200..300).contains(&status) {
            return match decoded {
                Err(e @ Error::Backend { .. }) => Err(e),
                _ => Err(Error::Transport(format!(
                    "{} answered HTTP {status} without an error envelope",
                    self.base
                ))),
            };
        }
        let resp = decoded?;
        check_response(req, &resp)?;
        Ok(resp)
    }
}

/// Fixed set of backends handing out one idle member per call.
pub struct BackendPool {
    members: Vec<Box<dyn InpaintBackend>>,
    idle: Mutex<Vec<usize>>,
    available: Condvar,
}

impl BackendPool {
    pub fn new(members: Vec<Box<dyn InpaintBackend>>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("backend pool needs at least one member"));
        }
        let idle = (0..members.len()).rev().collect();
        Ok(Self {
            members,
            idle: Mutex::new(idle),
            available: Condvar::new(),
        })
    }

    pub fn connect(endpoint: &Endpoint, size: usize, timeout: Duration) -> Result<Self> {
        let members = (0..size.max(1))
            .map(|_| endpoint.connect(timeout))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn checkout(&self) -> usize {
        let mut idle = self.idle.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if let Some(i) = idle.pop() {
                return i;
            }
            idle = self.available.wait(idle).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn checkin(&self, i: usize) {
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(i);
        self.available.notify_one();
    }
}

impl InpaintBackend for BackendPool {
    fn name(&self) -> String {
        self.members[0].name()
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let i = self.checkout();
        let result = self.members[i].inpaint(req);
        self.checkin(i);
        if let Err(e) = &result {
            if e.is_retriable() {
                warn!("pool member {i} failed: {e}");
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert!(matches!("mock".parse::<Endpoint>().unwrap(), Endpoint::Mock(_)));
        assert_eq!(
            "stdio:python3 serve.py --x".parse::<Endpoint>().unwrap(),
            Endpoint::Subprocess {
                program: "python3".into(),
                args: vec!["serve.py".into(), "--x".into()]
            }
        );
        assert_eq!(
            "http:8080".parse::<Endpoint>().unwrap(),
            Endpoint::Http("http://127.0.0.1:8080".into())
        );
        assert_eq!(
            "http://gpu-host:9000/".parse::<Endpoint>().unwrap(),
            Endpoint::Http("http://gpu-host:9000".into())
        );
        assert!("ftp://x".parse::<Endpoint>().is_err());
        assert!("stdio:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn frame_round_trip_and_truncation() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
        let mut short = &buf[..6];
        assert!(read_frame(&mut short).is_err());
        let mut header_only = &buf[..2];
        assert!(read_frame(&mut header_only).is_err());
    }
}
