//! Binary model format.
//!
//! All integers and floats are little-endian. Offsets in bytes:
//!
//! ```text
//!  0  [u8; 4]  magic "PSPL"
//!  4  u32      format version (currently 1)
//!  8  u32      flags: bit 0 = P₀ present, bit 1 = geodetic origin present
//! 12  u64      N, number of Gaussians
//! 20  f64      frequency (Hz)
//! 28  f64      path-loss exponent γ
//! 36  f64      P₀ (dBm), 0 when absent
//! 44  f64      origin latitude (deg), 0 when absent
//! 52  f64      origin longitude (deg), 0 when absent
//! 60  u32      provenance length L
//! 64  [u8; L]  provenance, UTF-8 (training configuration as JSON)
//!  …  N × 11 f64: μx μy μz, ln sx ln sy ln sz, qw qx qy qz, offset dB
//!  …  u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, ModelFileError, Result};
use crate::io::GeoOrigin;
use crate::model::{GaussianPrimitive, ModelState, PARAMS_PER_GAUSSIAN};

pub const MAGIC: [u8; 4] = *b"PSPL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;
const RECORD_LEN: usize = PARAMS_PER_GAUSSIAN * 8;

const FLAG_P0: u32 = 1;
const FLAG_ORIGIN: u32 = 2;

pub fn encode_model(model: &ModelState) -> Vec<u8> {
    let prov = model.provenance.as_deref().unwrap_or("").as_bytes();
    let mut buf = Vec::with_capacity(HEADER_LEN + prov.len() + model.len() * RECORD_LEN + 4);
    let mut flags = 0;
    if model.p0_dbm.is_some() {
        flags |= FLAG_P0;
    }
    if model.origin.is_some() {
        flags |= FLAG_ORIGIN;
    }
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(model.len() as u64).to_le_bytes());
    let origin = model.origin.map_or((0.0, 0.0), |o| (o.lat, o.lon));
    for v in [
        model.frequency_hz,
        model.gamma,
        model.p0_dbm.unwrap_or(0.0),
        origin.0,
        origin.1,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    buf.extend_from_slice(prov);
    for g in &model.gaussians {
        for v in g.to_params() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelState, ModelFileError> {
    if bytes.len() < 4 {
        return Err(ModelFileError::Truncated {
            needed: HEADER_LEN + 4,
            available: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ModelFileError::Truncated {
            needed: HEADER_LEN + 4,
            available: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(ModelFileError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(ModelFileError::Truncated {
            needed: HEADER_LEN + 4,
            available: bytes.len(),
        });
    }
    let n = u64_at(bytes, 12);
    let prov_len = u32_at(bytes, 60) as usize;
    let needed = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(RECORD_LEN))
        .and_then(|r| r.checked_add(HEADER_LEN + prov_len + 4))
        .ok_or_else(|| ModelFileError::Malformed(format!("implausible Gaussian count {n}")))?;
    if bytes.len() < needed {
        return Err(ModelFileError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(ModelFileError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - needed
        )));
    }
    let body = &bytes[..needed - 4];
    let stored = u32_at(bytes, needed - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelFileError::Checksum { stored, computed });
    }

    let flags = u32_at(bytes, 8);
    let malformed = |e: Error| ModelFileError::Malformed(e.to_string());
    let mut model = ModelState::new(f64_at(bytes, 20), f64_at(bytes, 28)).map_err(malformed)?;
    if flags & FLAG_P0 != 0 {
        model.p0_dbm = Some(f64_at(bytes, 36));
    }
    if flags & FLAG_ORIGIN != 0 {
        model.origin = Some(GeoOrigin::new(f64_at(bytes, 44), f64_at(bytes, 52)).map_err(malformed)?);
    }
    if prov_len > 0 {
        let text = std::str::from_utf8(&bytes[HEADER_LEN..HEADER_LEN + prov_len])
            .map_err(|e| ModelFileError::Malformed(format!("provenance is not UTF-8: {e}")))?;
        model.provenance = Some(text.to_string());
    }
    let start = HEADER_LEN + prov_len;
    model.gaussians = body[start..]
        .chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut p = [0.0; PARAMS_PER_GAUSSIAN];
            for (k, v) in p.iter_mut().enumerate() {
                *v = f64_at(rec, 8 * k);
            }
            from_params_exact(&p).map_err(malformed)
        })
        .collect::<Result<_, _>>()?;
    Ok(model)
}

/// Rebuilds a primitive without renormalizing its stored quaternion, so a
/// save/load cycle is bit-exact.
fn from_params_exact(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Result<GaussianPrimitive> {
    let mut g = GaussianPrimitive::from_params(p)?;
    let q = [p[6], p[7], p[8], p[9]];
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("stored quaternion has norm {norm}")));
    }
    g.rotation = crate::geometry::UnitQuaternion::from_stored(q);
    Ok(g)
}

pub fn save_model(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_model(&bytes)?)
}

/// CRC-32 stored in an encoded model (its last four bytes).
pub fn stored_checksum(bytes: &[u8]) -> Option<u32> {
    (bytes.len() >= 4).then(|| u32_at(bytes, bytes.len() - 4))
}
