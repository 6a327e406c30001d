//! Binary feature files.
//!
//! Little-endian layout: magic `VHLF`, version `u32 = 1`, `T`, `d_v`, `d_a`
//! as `u32`, then `T·d_v` visual `f32` (row-major), `T·d_a` audio `f32`,
//! and `T` label bytes in `{0, 1}`.

use std::fs;
use std::path::Path;

use super::VideoSequence;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"VHLF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_features(seq: &VideoSequence) -> Result<Vec<u8>> {
    let t = u32::try_from(seq.len()).map_err(|_| Error::Data("too many segments".into()))?;
    let dv =
        u32::try_from(seq.d_in_visual()).map_err(|_| Error::Data("visual dim too large".into()))?;
    let da =
        u32::try_from(seq.d_in_audio()).map_err(|_| Error::Data("audio dim too large".into()))?;
    let mut out =
        Vec::with_capacity(HEADER_LEN + 4 * (seq.visual.len() + seq.audio.len()) + seq.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, t, dv, da] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in seq.visual.data().iter().chain(seq.audio.data()) {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.extend_from_slice(&seq.labels);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!(
                    "truncated {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

/// Parse a feature file image. The returned sequence has an empty id and
/// category; callers fill those from the manifest.
pub fn decode_features(bytes: &[u8]) -> Result<VideoSequence> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"VHLF\""),
        ));
    }
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let t = r.u32("segment count")? as usize;
    let dv = r.u32("visual dim")? as usize;
    let da = r.u32("audio dim")? as usize;
    if t == 0 || dv == 0 || da == 0 {
        return Err(Error::format(
            8,
            format!("zero extent in header (T={t}, d_v={dv}, d_a={da})"),
        ));
    }
    let payload = t
        .checked_mul(
            dv.checked_add(da)
                .ok_or_else(|| Error::format(12, "dimension overflow"))?,
        )
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(t))
        .ok_or_else(|| Error::format(8, "declared payload size overflows"))?;
    if payload > bytes.len().saturating_sub(HEADER_LEN) {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated payload: header declares {payload} bytes (T={t}, d_v={dv}, d_a={da}), file holds {}",
                bytes.len().saturating_sub(HEADER_LEN)
            ),
        ));
    }
    let visual = Tensor::matrix(t, dv, r.f32s(t * dv, "visual block")?)?;
    let audio = Tensor::matrix(t, da, r.f32s(t * da, "audio block")?)?;
    let label_start = r.pos;
    let labels = r.take(t, "labels")?.to_vec();
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::format(
            (label_start + i) as u64,
            format!("label byte {} is not 0 or 1", labels[i]),
        ));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    VideoSequence::new("", "", visual, audio, labels)
}

pub fn write_features(seq: &VideoSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_features(seq)?)?;
    Ok(())
}

/// Reads a feature file; the id is taken from the file stem.
pub fn read_features(path: &Path) -> Result<VideoSequence> {
    let bytes = fs::read(path)?;
    let mut seq = decode_features(&bytes)?;
    seq.id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(seq)
}
