//! Binary dataset files. Byte layout (all integers and floats little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic | 8 bytes `SPNDSET\0` |
//! | version | u32 (= 1) |
//! | flags | u32, bit 0 config present, bit 1 truth present |
//! | seed | u64 |
//! | rng algorithm | u32 length + UTF-8 |
//! | units tag | u32 length + UTF-8 |
//! | config | u32 length + UTF-8 TOML (length 0 when absent) |
//! | n_bins, n_segments | u64, u64 |
//! | freq | n_bins × f64 |
//! | truth | u32 count, then per entry u32 length + UTF-8 name, n_bins × f64 |
//! | channels F, L, M | each n_segments × n_bins × (f64 re, f64 im), segment-major |
//! | checksum | 32 bytes SHA-256 of everything above |

use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::config::{run_config_from_toml, run_config_to_toml};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::spectrum::{validate_grid, Units};
use crate::synth::{RunDataset, TruthSet};

pub const MAGIC: &[u8; 8] = b"SPNDSET\0";
pub const VERSION: u32 = 1;
const FLAG_CONFIG: u32 = 1;
const FLAG_TRUTH: u32 = 2;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_dataset(ds: &RunDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let n_bins = ds.n_bins();
    let n_cplx = 3 * ds.n_segments * n_bins;
    let mut out = Vec::with_capacity(128 + 8 * n_bins * 20 + 16 * n_cplx);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0;
    if ds.config.is_some() {
        flags |= FLAG_CONFIG;
    }
    if ds.truth.is_some() {
        flags |= FLAG_TRUTH;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    let seed = ds.config.as_ref().map_or(0, |c| c.seed);
    out.extend_from_slice(&seed.to_le_bytes());
    put_str(&mut out, &ds.rng_algorithm);
    put_str(&mut out, ds.units.tag());
    let config = match &ds.config {
        Some(c) => run_config_to_toml(c)?,
        None => String::new(),
    };
    put_str(&mut out, &config);
    out.extend_from_slice(&(n_bins as u64).to_le_bytes());
    out.extend_from_slice(&(ds.n_segments as u64).to_le_bytes());
    put_f64s(&mut out, &ds.freq);
    match &ds.truth {
        Some(t) => {
            out.extend_from_slice(&(t.entries.len() as u32).to_le_bytes());
            for (name, values) in &t.entries {
                put_str(&mut out, name);
                put_f64s(&mut out, values);
            }
        }
        None => out.extend_from_slice(&0u32.to_le_bytes()),
    }
    for ch in &ds.channels {
        for z in ch {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptData(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::CorruptData(format!("{what} is not UTF-8")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn overflow(what: &str) -> Error {
    Error::CorruptData(format!("{what} size overflows"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<RunDataset> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptData("bad magic bytes".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::CorruptData("checksum mismatch".into()));
    }
    let mut c = Cursor { buf: body, pos: 8 };
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::CorruptData(format!("unsupported version {version}")));
    }
    let flags = c.u32("flags")?;
    let seed = c.u64("seed")?;
    let rng_algorithm = c.str("rng algorithm")?.to_string();
    let units: Units = c
        .str("units")?
        .parse()
        .map_err(|e: Error| Error::CorruptData(e.to_string()))?;
    let config_text = c.str("config")?;
    let config = if flags & FLAG_CONFIG != 0 {
        let cfg = run_config_from_toml(config_text)?;
        if cfg.seed != seed {
            return Err(Error::CorruptData("seed field disagrees with embedded config".into()));
        }
        Some(cfg)
    } else {
        None
    };
    let n_bins = c.u64("n_bins")? as usize;
    let n_segments = c.u64("n_segments")? as usize;
    let freq = c.f64s(n_bins, "frequency grid")?;
    validate_grid(&freq).map_err(|e| Error::CorruptData(e.to_string()))?;
    let n_truth = c.u32("truth count")? as usize;
    let mut entries = Vec::with_capacity(n_truth.min(64));
    for _ in 0..n_truth {
        let name = c.str("truth name")?.to_string();
        let values = c.f64s(n_bins, "truth values")?;
        entries.push((name, values));
    }
    let truth = if flags & FLAG_TRUTH != 0 {
        Some(TruthSet {
            freq: freq.clone(),
            entries,
        })
    } else {
        None
    };
    let per_channel = n_segments.checked_mul(n_bins).ok_or_else(|| overflow("channels"))?;
    let mut read_channel = |what: &str| -> Result<Vec<Complex64>> {
        let raw = c.f64s(per_channel.checked_mul(2).ok_or_else(|| overflow(what))?, what)?;
        Ok(raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    };
    let channels = [
        read_channel("channel F")?,
        read_channel("channel L")?,
        read_channel("channel M")?,
    ];
    if c.pos != body.len() {
        return Err(Error::CorruptData(format!(
            "{} trailing bytes before checksum",
            body.len() - c.pos
        )));
    }
    let ds = RunDataset {
        config,
        rng_algorithm,
        freq,
        n_segments,
        units,
        channels,
        truth,
    };
    ds.validate().map_err(|e| Error::CorruptData(e.to_string()))?;
    Ok(ds)
}

/// Writes the dataset atomically plus a `.meta.json` sidecar holding the
/// creation time, which is kept out of the dataset so repeated runs produce
/// identical files.
pub fn write_dataset(path: &Path, ds: &RunDataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    write_atomic(path, &bytes)?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "created_unix_s": created,
        "sha256": hex_digest(&bytes[bytes.len() - 32..]),
        "bytes": bytes.len(),
    });
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta.json");
    write_atomic(
        Path::new(&sidecar),
        serde_json::to_string_pretty(&meta).unwrap().as_bytes(),
    )
}

fn hex_digest(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_dataset(path: &Path) -> Result<RunDataset> {
    decode_dataset(&std::fs::read(path)?)
}
