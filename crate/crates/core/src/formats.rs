//! On-disk formats. All multi-byte integers and floats are little-endian;
//! float payloads are 32-bit IEEE-754.
//!
//! - "HYL1": range-image frame (C,H,W header, channel-major floats, mask bytes)
//! - "HYLL": label map (H,W header, class-id bytes)
//! - "HYLS": domain statistics (H,W header, mean image floats, covariance floats)
//! - "HYLC": checkpoint container (version, key=value meta, named tensors)
//! - manifest: tab-separated text, one frame per line
//! - norm stats: text, one channel per line

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::domainstats::DomainStats;
use crate::rangeview::{LabelMap, NormStats, RangeImage, CHANNELS};
use crate::tensor::Tensor;
use crate::{HyldaError, Result, Scalar};

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(HyldaError::format(self.path, "truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expect {
            return Err(HyldaError::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", m, expect),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| HyldaError::format(self.path, "non-utf8 string"))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(HyldaError::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HyldaError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HyldaError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| HyldaError::io(path, e))
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn write_hyl1<S: Scalar>(path: &Path, img: &RangeImage<S>) -> Result<()> {
    let (h, w) = (img.h(), img.w());
    let mut out = Vec::with_capacity(16 + CHANNELS * h * w * 4 + h * w);
    out.extend_from_slice(b"HYL1");
    for v in [CHANNELS as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in img.channels.data() {
        out.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
    }
    out.extend(img.valid.iter().map(|&b| b as u8));
    write_file(path, &out)
}

/// Reads a frame. The normalized flag is not stored on disk; files written
/// by generation are raw and the flag starts false. Callers loading
/// normalized-space frames (translated fakes) set it themselves.
pub fn read_hyl1<S: Scalar>(path: &Path) -> Result<RangeImage<S>> {
    let buf = read_file(path)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    c.magic(b"HYL1")?;
    let (ch, h, w) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    if ch != CHANNELS {
        return Err(HyldaError::format(path, format!("expected {CHANNELS} channels, got {ch}")));
    }
    let data = c.f32s(ch * h * w)?;
    let mask = c.take(h * w)?;
    c.done()?;
    let channels = Tensor::from_vec(
        &[ch, h, w],
        data.iter().map(|&v| crate::scalar::<S>(v as f64)).collect(),
    )?;
    Ok(RangeImage { channels, valid: mask.iter().map(|&b| b != 0).collect(), normalized: false })
}

pub fn write_hyll(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut out = Vec::with_capacity(12 + labels.ids.len());
    out.extend_from_slice(b"HYLL");
    out.extend_from_slice(&(labels.h as u32).to_le_bytes());
    out.extend_from_slice(&(labels.w as u32).to_le_bytes());
    out.extend_from_slice(&labels.ids);
    write_file(path, &out)
}

pub fn read_hyll(path: &Path) -> Result<LabelMap> {
    let buf = read_file(path)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    c.magic(b"HYLL")?;
    let (h, w) = (c.u32()? as usize, c.u32()? as usize);
    let ids = c.take(h * w)?.to_vec();
    c.done()?;
    Ok(LabelMap { h, w, ids })
}

pub fn write_hyls<S: Scalar>(path: &Path, stats: &DomainStats<S>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"HYLS");
    out.extend_from_slice(&(stats.h as u32).to_le_bytes());
    out.extend_from_slice(&(stats.w as u32).to_le_bytes());
    for v in stats.mean_image.iter().chain(stats.cov.iter()) {
        out.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
    }
    write_file(path, &out)
}

pub fn read_hyls<S: Scalar>(path: &Path) -> Result<DomainStats<S>> {
    let buf = read_file(path)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    c.magic(b"HYLS")?;
    let (h, w) = (c.u32()? as usize, c.u32()? as usize);
    let mean = c.f32s(h * w)?;
    let cov = c.f32s(h * h)?;
    c.done()?;
    Ok(DomainStats {
        h,
        w,
        mean_image: mean.iter().map(|&v| crate::scalar::<S>(v as f64)).collect(),
        cov: cov.iter().map(|&v| crate::scalar::<S>(v as f64)).collect(),
    })
}

const NORM_CHANNEL_NAMES: [&str; CHANNELS] = ["x", "y", "z", "range", "remission"];

pub fn write_norm_stats<S: Scalar>(path: &Path, stats: &NormStats<S>) -> Result<()> {
    let mut out = String::new();
    for c in 0..CHANNELS {
        out.push_str(&format!(
            "{} {} {}\n",
            NORM_CHANNEL_NAMES[c],
            stats.low[c].to_f64().unwrap() as f32,
            stats.high[c].to_f64().unwrap() as f32
        ));
    }
    write_file(path, out.as_bytes())
}

pub fn read_norm_stats<S: Scalar>(path: &Path) -> Result<NormStats<S>> {
    let text = fs::read_to_string(path).map_err(|e| HyldaError::io(path, e))?;
    let mut low = [S::zero(); CHANNELS];
    let mut high = [S::zero(); CHANNELS];
    let mut seen = 0;
    for line in text.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(HyldaError::format(path, format!("bad norm stats line: {line}")));
        }
        let c = NORM_CHANNEL_NAMES
            .iter()
            .position(|n| *n == parts[0])
            .ok_or_else(|| HyldaError::format(path, format!("unknown channel {}", parts[0])))?;
        let lo: f32 = parts[1].parse().map_err(|_| HyldaError::format(path, "bad float"))?;
        let hi: f32 = parts[2].parse().map_err(|_| HyldaError::format(path, "bad float"))?;
        low[c] = crate::scalar(lo as f64);
        high[c] = crate::scalar(hi as f64);
        seen += 1;
    }
    if seen != CHANNELS {
        return Err(HyldaError::format(path, format!("{seen} channels, expected {CHANNELS}")));
    }
    Ok(NormStats { low, high })
}

/// One dataset frame as indexed by a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub split: String,
    pub frame_path: String,
    pub label_path: String,
    pub seed: u64,
    pub labeled: bool,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.frame_id,
            e.split,
            e.frame_path,
            e.label_path,
            e.seed,
            e.labeled as u8
        ));
    }
    write_file(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| HyldaError::io(path, e))?;
    let mut entries = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 6 {
            return Err(HyldaError::format(path, format!("bad manifest line: {line}")));
        }
        entries.push(ManifestEntry {
            frame_id: parts[0].to_string(),
            split: parts[1].to_string(),
            frame_path: parts[2].to_string(),
            label_path: parts[3].to_string(),
            seed: parts[4].parse().map_err(|_| HyldaError::format(path, "bad seed"))?,
            labeled: parts[5] == "1",
        });
    }
    Ok(entries)
}

/// Named-tensor checkpoint with key=value metadata.
pub fn write_checkpoint(
    path: &Path,
    meta: &[(String, String)],
    tensors: &[(String, Tensor<f32>)],
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"HYLC");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        push_string(&mut out, k);
        push_string(&mut out, v);
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        push_string(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, String)>, Vec<(String, Tensor<f32>)>)> {
    let buf = read_file(path)?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    c.magic(b"HYLC")?;
    let version = c.u32()?;
    if version != 1 {
        return Err(HyldaError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let n_meta = c.u32()? as usize;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let k = c.string()?;
        let v = c.string()?;
        meta.push((k, v));
    }
    let n_tensors = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = c.f32s(n)?;
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    c.done()?;
    Ok((meta, tensors))
}

pub fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

/// Joins a manifest-relative path onto the dataset root.
pub fn resolve_relative(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}
