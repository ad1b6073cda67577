//! Binary container shared by adapter modules and full-model checkpoints.
//!
//! ```text
//! "LORAMOD" | version byte ('1') | u32 LE header length | JSON header
//!           | f32 LE payload | u32 LE CRC-32 of (JSON header ++ payload)
//! ```

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC_PREFIX: &[u8; 7] = b"LORAMOD";
pub const FORMAT_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[FORMAT_VERSION];

pub const KIND_LORA: &str = "lora-module";
pub const KIND_FULL_MODEL: &str = "full-model";

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn encode(header: &Value, payload: &[f32]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + payload.len() * 4);
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(b'0' + FORMAT_VERSION as u8);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    let body_start = out.len();
    out.extend_from_slice(&json);
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&out[body_start..]);
    out.extend_from_slice(&hasher.finalize().to_le_bytes());
    out
}

/// Splits a container into its JSON header and payload floats.
/// `expected_floats` computes the payload size from the parsed header.
pub fn decode(
    bytes: &[u8],
    origin: &Path,
    expected_floats: impl FnOnce(&Value) -> Result<usize>,
) -> Result<(Value, Vec<f32>)> {
    let corrupt = |message: String| Error::Corruption {
        path: origin.to_path_buf(),
        message,
    };
    if bytes.len() < 16 || &bytes[..7] != MAGIC_PREFIX {
        return Err(corrupt("missing LORAMOD magic".into()));
    }
    let vbyte = bytes[7];
    let version = if vbyte.is_ascii_digit() {
        (vbyte - b'0') as u32
    } else {
        vbyte as u32
    };
    if !SUPPORTED_VERSIONS.contains(&version) {
        return Err(Error::Version {
            found: version,
            supported: SUPPORTED_VERSIONS.to_vec(),
        });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if 12 + hlen + 4 > bytes.len() {
        return Err(corrupt(format!("header length {hlen} exceeds file size")));
    }
    let body = &bytes[12..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32(body);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let header: Value = serde_json::from_slice(&body[..hlen])
        .map_err(|e| corrupt(format!("invalid header json: {e}")))?;
    let header_version = header
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("header lacks format_version".into()))?;
    if header_version as u32 != version {
        if !SUPPORTED_VERSIONS.contains(&(header_version as u32)) {
            return Err(Error::Version {
                found: header_version as u32,
                supported: SUPPORTED_VERSIONS.to_vec(),
            });
        }
        return Err(corrupt(format!(
            "header version {header_version} disagrees with magic version {version}"
        )));
    }
    let want = expected_floats(&header)?;
    let raw = &body[hlen..];
    if raw.len() != want * 4 {
        return Err(corrupt(format!(
            "payload holds {} bytes, header describes {} floats",
            raw.len(),
            want
        )));
    }
    let payload = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
