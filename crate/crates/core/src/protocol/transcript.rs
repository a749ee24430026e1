//! Record backend exchanges to a JSON-lines transcript and replay them
//! later without the backend.
//!
//! Each line is `{"request_sha256": "<hex>", "response": <envelope>}`, keyed
//! by the SHA-256 of the encoded request envelope.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::InpaintBackend;
use super::{check_response, decode_response, encode_request, encode_response, BackendRequest, BackendResponse};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    request_sha256: String,
    response: serde_json::Value,
}

pub fn request_digest(encoded: &[u8]) -> String {
    Sha256::digest(encoded).iter().map(|b| format!("{b:02x}")).collect()
}

/// Forwards to an inner backend and appends every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    file: Mutex<File>,
}

impl<B: InpaintBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            inner,
            path,
            file: Mutex::new(file),
        })
    }
}

impl<B: InpaintBackend> InpaintBackend for RecordingBackend<B> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let digest = request_digest(&encode_request(req)?);
        let resp = self.inner.inpaint(req)?;
        let envelope: serde_json::Value =
            serde_json::from_slice(&encode_response(&resp)?).expect("envelope is json");
        let mut line = serde_json::to_vec(&Entry {
            request_sha256: digest,
            response: envelope,
        })
        .expect("entry serializes");
        line.push(b'\n');
        self.file
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .write_all(&line)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(resp)
    }
}

/// Answers requests from a transcript; unknown requests are an error.
pub struct ReplayBackend {
    responses: HashMap<String, Vec<u8>>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut responses = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: Entry = serde_json::from_str(&line).map_err(|e| {
                Error::InvalidInput(format!("{}:{}: bad transcript line: {e}", path.display(), n + 1))
            })?;
            responses.insert(
                entry.request_sha256,
                serde_json::to_vec(&entry.response).expect("json"),
            );
        }
        Ok(Self { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl InpaintBackend for ReplayBackend {
    fn name(&self) -> String {
        "replay".to_owned()
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let digest = request_digest(&encode_request(req)?);
        let bytes = self.responses.get(&digest).ok_or_else(|| {
            Error::Transport(format!(
                "request {} ({digest}) is not in the transcript",
                req.request_id
            ))
        })?;
        let resp = decode_response(bytes)?;
        check_response(req, &resp)?;
        Ok(resp)
    }
}
