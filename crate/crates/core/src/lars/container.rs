//! Versioned, checksummed model file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "LARSMODL" | version u32 | header_len u64 | header JSON
//! | value_count u64 | f64 values | SHA-256 of all preceding bytes
//! ```
//!
//! The JSON header carries the config, the probability partition and the
//! name and length of every tensor, in the order the values follow.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::LarsConfig;
use super::model::LarsModel;
use super::params::Params;
use super::partition::ProbPartition;

pub const MAGIC: &[u8; 8] = b"LARSMODL";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Header {
    pub config: LarsConfig,
    pub partition: ProbPartition,
    pub tensors: Vec<(String, usize)>,
}

/// Serializes a model to container bytes.
pub fn to_bytes(model: &LarsModel) -> Vec<u8> {
    let tensors = model.params.tensors();
    let header = Header {
        config: model.config.clone(),
        partition: model.partition.clone(),
        tensors: tensors.iter().map(|(n, t)| (n.clone(), t.len())).collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let count: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut body = Vec::with_capacity(8 + 4 + 8 + header_json.len() + 8 + 8 * count + DIGEST_LEN);
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    body.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    body.extend_from_slice(&header_json);
    body.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, t) in &tensors {
        for v in t.iter() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    seal(body)
}

/// Appends the checksum.
pub(crate) fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(digest.as_slice());
    body
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Container("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<LarsModel> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 8 + DIGEST_LEN {
        return Err(Error::Container("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Container("checksum mismatch (file truncated or corrupted)".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Container("not a model file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Container(format!("bad header: {e}")))?;
    let config = header.config;
    config
        .validate()
        .map_err(|e| Error::Container(format!("bad config: {e}")))?;
    if header.partition.k() != config.k || header.partition.d() != config.d {
        return Err(Error::Container(format!(
            "partition (k = {}, d = {}) does not match config (k = {}, d = {})",
            header.partition.k(),
            header.partition.d(),
            config.k,
            config.d
        )));
    }
    let partition = ProbPartition::new(header.partition.boundaries().to_vec(), config.d)
        .map_err(|e| Error::Container(format!("bad partition: {e}")))?;

    let mut params = Params::zeros(&config);
    let expected: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    if expected != header.tensors {
        return Err(Error::Container("tensor layout does not match config".into()));
    }
    let count = r.u64()? as usize;
    if count != expected.iter().map(|(_, n)| n).sum::<usize>() {
        return Err(Error::Container("parameter count does not match config".into()));
    }
    for (_, t) in params.tensors_mut() {
        let raw = r.take(8 * t.len())?;
        for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Container("trailing bytes after parameters".into()));
    }
    Ok(LarsModel {
        config,
        partition,
        params,
    })
}

pub fn save_model(model: &LarsModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LarsModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
