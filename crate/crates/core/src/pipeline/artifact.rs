//! Single-file model artifacts.
//!
//! Layout: 8-byte magic, format version (u32 LE), SHA-256 of the payload, payload.
//! The payload is a u32 LE section count followed by sections, each a u16 LE name
//! length, the name, a u64 LE body length and a JSON body.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blend::BlendedModel;
use crate::error::{Error, Result};
use crate::pipeline::framework::{BandModel, FrameworkConfig, FrameworkModel, PhaseModel, Preprocessor};
use crate::pipeline::EnrichmentTable;
use crate::preprocess::BoxCoxTransform;

pub const MAGIC: &[u8; 8] = b"IDURMDL\0";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 32;
const SECTIONS: [&str; 5] = ["meta", "preprocessing", "classifier", "regressors", "enrichment"];

#[derive(Serialize, Deserialize)]
struct Meta {
    version: String,
    seed: u64,
    config: FrameworkConfig,
    boxcox: BoxCoxTransform,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedArtifact(msg.into())
}

fn put_section(out: &mut Vec<u8>, name: &str, body: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

pub fn to_bytes(model: &FrameworkModel) -> Result<Vec<u8>> {
    let meta = Meta {
        version: model.version.clone(),
        seed: model.seed,
        config: model.config.clone(),
        boxcox: model.boxcox,
    };
    let pre: Vec<&Preprocessor> = model.phases.iter().map(|p| &p.preprocessor).collect();
    let cls: Vec<&BlendedModel> = model.phases.iter().map(|p| &p.classifier).collect();
    let reg: Vec<&Vec<BandModel>> = model.phases.iter().map(|p| &p.regressors).collect();
    let bodies = [
        serde_json::to_vec(&meta)?,
        serde_json::to_vec(&pre)?,
        serde_json::to_vec(&cls)?,
        serde_json::to_vec(&reg)?,
        serde_json::to_vec(&model.enrichment)?,
    ];
    let mut payload = Vec::new();
    payload.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
    for (name, body) in SECTIONS.iter().zip(&bodies) {
        put_section(&mut payload, name, body);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| malformed("unexpected end of payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn section<T: DeserializeOwned>(sections: &[(String, &[u8])], name: &str) -> Result<T> {
    let (_, body) = sections.iter().find(|(n, _)| n == name).ok_or_else(|| malformed(format!("missing section `{name}`")))?;
    serde_json::from_slice(body).map_err(|e| malformed(format!("section `{name}`: {e}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<FrameworkModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(malformed("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    let payload = &bytes[HEADER_LEN..];
    if Sha256::digest(payload).as_slice() != &bytes[12..HEADER_LEN] {
        return Err(Error::Checksum);
    }
    let mut cur = Cursor { buf: payload, pos: 0 };
    let count = cur.u32()?;
    let mut sections = Vec::new();
    for _ in 0..count {
        let n = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(n)?).map_err(|_| malformed("section name is not utf-8"))?.to_string();
        let len = usize::try_from(cur.u64()?).map_err(|_| malformed("section too large"))?;
        sections.push((name, cur.take(len)?));
    }
    if cur.pos != payload.len() {
        return Err(malformed("trailing bytes after the last section"));
    }
    let meta: Meta = section(&sections, "meta")?;
    let pre: Vec<Preprocessor> = section(&sections, "preprocessing")?;
    let cls: Vec<BlendedModel> = section(&sections, "classifier")?;
    let reg: Vec<Vec<BandModel>> = section(&sections, "regressors")?;
    let enrichment: EnrichmentTable = section(&sections, "enrichment")?;
    if pre.is_empty() || pre.len() != cls.len() || pre.len() != reg.len() || reg.iter().any(|r| r.len() != 3) {
        return Err(malformed("phase sections disagree"));
    }
    let phases = pre
        .into_iter()
        .zip(cls)
        .zip(reg)
        .map(|((preprocessor, classifier), regressors)| PhaseModel { preprocessor, classifier, regressors })
        .collect();
    Ok(FrameworkModel {
        version: meta.version,
        seed: meta.seed,
        config: meta.config,
        boxcox: meta.boxcox,
        phases,
        enrichment,
    })
}

pub fn save_model(model: &FrameworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FrameworkModel> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
