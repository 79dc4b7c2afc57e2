//! Feature cache files: a little-endian binary body behind a JSON header.
//!
//! Layout: 4-byte LE header length, UTF-8 JSON header
//! `{shape, dtype, params}`, then the row-major values as little-endian
//! f64 (or f32 when dtype is "f32").

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::logmel::{LogMel, MelParams};

#[derive(serde::Serialize, serde::Deserialize)]
struct FeatureHeader {
    shape: Vec<usize>,
    dtype: String,
    params: MelParams,
}

pub fn save_features(path: &Path, feat: &LogMel) -> Result<()> {
    let header = FeatureHeader {
        shape: feat.frames.shape().to_vec(),
        dtype: "f64".to_string(),
        params: feat.params.clone(),
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(4 + hjson.len() + feat.frames.numel() * 8);
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for v in feat.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<LogMel> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Data(format!("{}: truncated feature file", path.display())));
    }
    let hlen = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let hjson = bytes
        .get(4..4 + hlen)
        .ok_or_else(|| Error::Data(format!("{}: truncated header", path.display())))?;
    let header: FeatureHeader = serde_json::from_slice(hjson)?;
    let n: usize = header.shape.iter().product();
    let body = &bytes[4 + hlen..];
    let data: Vec<f64> = match header.dtype.as_str() {
        "f64" => {
            if body.len() != n * 8 {
                return Err(Error::Data(format!("{}: body size mismatch", path.display())));
            }
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect()
        }
        "f32" => {
            if body.len() != n * 4 {
                return Err(Error::Data(format!("{}: body size mismatch", path.display())));
            }
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        other => return Err(Error::Data(format!("{}: unknown dtype {other}", path.display()))),
    };
    Ok(LogMel { frames: Tensor::from_vec(header.shape, data), params: header.params })
}

/// Short hex digest of the feature parameters; cache filenames embed it
/// so features extracted under different settings never collide.
pub fn params_hash(p: &MelParams) -> String {
    let canonical = format!(
        "sr={};window={};hop={};n_mels={};floor_eps={:e};fmin={};fmax={}",
        p.sample_rate,
        p.window,
        p.hop,
        p.n_mels,
        p.floor_eps,
        p.fmin,
        p.fmax_hz()
    );
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache file path for a clip's features under the given parameters.
pub fn feature_cache_path(dir: &Path, clip_stem: &str, p: &MelParams) -> std::path::PathBuf {
    dir.join(format!("{clip_stem}.{}.feat", params_hash(p)))
}
