//! Server side of the protocol: wraps any [`InpaintBackend`] so it can be
//! reached over stdio frames or HTTP.

use std::io::{Read, Write};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{debug, warn};

use super::transport::{read_frame, write_frame, InpaintBackend};
use super::{decode_request, encode_error_response, encode_response};
use crate::error::{Error, ProtocolError, Result};

/// Stable code carried in error envelopes.
pub fn error_code(e: &Error) -> &'static str {
    match e.root() {
        Error::Protocol(ProtocolError::VersionMismatch { .. }) => "version_mismatch",
        Error::Protocol(_) => "bad_request",
        Error::InvalidInput(_) => "invalid_input",
        Error::Timeout(_) => "timeout",
        _ => "internal",
    }
}

fn request_id_hint(bytes: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(bytes)
        .ok()
        .and_then(|v| v.get("request_id")?.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Turns one request envelope into one response envelope. Failures are
/// reported as error envelopes, never dropped.
pub fn handle_envelope(backend: &dyn InpaintBackend, bytes: &[u8]) -> Vec<u8> {
    let result = decode_request(bytes).and_then(|req| {
        let resp = backend.inpaint(&req)?;
        encode_response(&resp)
    });
    match result {
        Ok(out) => out,
        Err(e) => {
            warn!("request failed: {e}");
            encode_error_response(&request_id_hint(bytes), error_code(&e), &e.to_string())
        }
    }
}

/// Serves frames until the reader reaches end of stream.
pub fn serve_stdio(backend: &dyn InpaintBackend, mut reader: impl Read, mut writer: impl Write) -> Result<()> {
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => return Err(Error::Transport(format!("reading request frame: {e}"))),
        };
        let reply = handle_envelope(backend, &frame);
        write_frame(&mut writer, &reply)
            .map_err(|e| Error::Transport(format!("writing response frame: {e}")))?;
    }
}

/// A running HTTP server. Dropping the handle stops it.
pub struct HttpServerHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
}

impl HttpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn json_header() -> tiny_http::Header {
    tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn respond(req: tiny_http::Request, status: u16, body: Vec<u8>) {
    let resp = tiny_http::Response::from_data(body)
        .with_status_code(status)
        .with_header(json_header());
    if let Err(e) = req.respond(resp) {
        debug!("client went away: {e}");
    }
}

fn handle_http(backend: &dyn InpaintBackend, mut req: tiny_http::Request) {
    use tiny_http::Method;
    let path = req.url().split('?').next().unwrap_or("").to_owned();
    match (req.method(), path.as_str()) {
        (Method::Get, "/health") => {
            let body = serde_json::json!({
                "status": "ok",
                "backend": backend.name(),
                "protocol_version": super::PROTOCOL_VERSION,
            });
            respond(req, 200, serde_json::to_vec(&body).expect("json"));
        }
        (Method::Post, "/inpaint") => {
            let mut body = Vec::new();
            if let Err(e) = req.as_reader().read_to_end(&mut body) {
                let env = encode_error_response("", "bad_request", &format!("reading body: {e}"));
                return respond(req, 400, env);
            }
            let reply = handle_envelope(backend, &body);
            let status = match serde_json::from_slice::<serde_json::Value>(&reply)
                .ok()
                .and_then(|v| v.get("error").and_then(|e| e.get("code")).cloned())
            {
                None => 200,
                Some(code) if code == "bad_request" || code == "version_mismatch" || code == "invalid_input" => 400,
                Some(_) => 500,
            };
            respond(req, status, reply);
        }
        _ => {
            let env = encode_error_response("", "not_found", &format!("no route for {path}"));
            respond(req, 404, env);
        }
    }
}

/// Starts an HTTP server on `addr` (port 0 picks a free port).
pub fn serve_http(backend: Arc<dyn InpaintBackend>, addr: &str, workers: usize) -> Result<HttpServerHandle> {
    let server = tiny_http::Server::http(addr)
        .map_err(|e| Error::Transport(format!("cannot listen on {addr}: {e}")))?;
    let local = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Transport("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let backend = Arc::clone(&backend);
            thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle_http(backend.as_ref(), req);
                }
            })
        })
        .collect();
    Ok(HttpServerHandle {
        addr: local,
        server,
        workers,
    })
}
