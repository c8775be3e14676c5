//! On-disk dataset formats.
//!
//! Binary layout, little-endian: magic `TSG1`, `u32` signal count N, `u32`
//! length L, `f32` sample rate, N `u8` labels (255 = unlabeled), then N*L
//! `f32` values, row-major.
//!
//! CSV layout: a `sample_rate,<hz>` line, a header `label,s0,...`, then one
//! row per signal with an empty label field for unlabeled signals.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"TSG1";
const NO_LABEL: u8 = 255;

pub fn save_binary(data: &Dataset, path: &Path) -> Result<()> {
    let n = data.len();
    let l = data.signal_len();
    let mut buf = Vec::with_capacity(16 + n + 4 * n * l);
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(
        &u32::try_from(n)
            .map_err(|_| Error::Data("too many signals".into()))?
            .to_le_bytes(),
    );
    buf.extend_from_slice(
        &u32::try_from(l)
            .map_err(|_| Error::Data("signals too long".into()))?
            .to_le_bytes(),
    );
    buf.extend_from_slice(&(data.sample_rate as f32).to_le_bytes());
    for label in data.labels() {
        match label {
            Some(NO_LABEL) => return Err(Error::Data("label 255 is reserved".into())),
            Some(v) => buf.push(*v),
            None => buf.push(NO_LABEL),
        }
    }
    for v in data.signals().iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let fail = |detail: String| Error::format(path, detail);
    if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
        return Err(fail("missing TSG1 header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let n = word(4) as usize;
    let l = word(8) as usize;
    let sample_rate = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
    let expected = n
        .checked_mul(l)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(16 + n))
        .ok_or_else(|| fail("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(fail(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let labels = bytes[16..16 + n]
        .iter()
        .map(|&b| (b != NO_LABEL).then_some(b))
        .collect();
    let signals = bytes[16 + n..]
        .chunks_exact(4 * l.max(1))
        .take(n)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    let signals = if l == 0 { vec![Vec::new(); n] } else { signals };
    Dataset::new(signals, labels, sample_rate).map_err(|e| fail(e.to_string()))
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = format!("sample_rate,{}\nlabel", data.sample_rate);
    for i in 0..data.signal_len() {
        out.push_str(&format!(",s{i}"));
    }
    out.push('\n');
    for (s, label) in data.signals().iter().zip(data.labels()) {
        if let Some(v) = label {
            out.push_str(&v.to_string());
        }
        for v in s {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let fail =
        |line: usize, detail: &str| Error::format(path, format!("line {}: {detail}", line + 1));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or_else(|| fail(0, "empty file"))?;
    let sample_rate = first
        .strip_prefix("sample_rate,")
        .and_then(|v| v.trim().parse::<f64>().ok())
        .ok_or_else(|| fail(i, "expected sample_rate,<hz>"))?;
    let (i, header) = lines.next().ok_or_else(|| fail(i, "missing header"))?;
    let width = header.split(',').count();
    if !header.starts_with("label") {
        return Err(fail(i, "header must start with label"));
    }
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or("").trim();
        labels.push(if label.is_empty() {
            None
        } else {
            Some(
                label
                    .parse::<u8>()
                    .map_err(|_| fail(i, "label must be an integer 0-254"))?,
            )
        });
        let row = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| fail(i, "non-numeric sample"))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() + 1 != width {
            return Err(fail(
                i,
                &format!("expected {} samples, found {}", width - 1, row.len()),
            ));
        }
        signals.push(row);
    }
    Dataset::new(signals, labels, sample_rate).map_err(|e| Error::format(path, e.to_string()))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Load by extension: `.csv` is text, anything else binary.
pub fn load(path: &Path) -> Result<Dataset> {
    if is_csv(path) {
        load_csv(path)
    } else {
        load_binary(path)
    }
}

pub fn save(data: &Dataset, path: &Path) -> Result<()> {
    if is_csv(path) {
        save_csv(data, path)
    } else {
        save_binary(data, path)
    }
}
