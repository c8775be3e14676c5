//! Named parameter tensors and their on-disk form.
//!
//! A parameter file is `TSGP`, then little-endian `u32` version, element bit
//! width (32 or 64) and tensor count; each tensor is a `u32` name length, the
//! UTF-8 name, a `u32` rank, `u32` extents, and the values. A plain-text
//! manifest next to it lists `name<TAB>shape<TAB>byte offset of the values`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"TSGP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        ParamSet { entries }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        let i = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(i).1)
    }

    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.entries.retain(|(n, _)| keep(n));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Record every tensor on `graph`, as variables when `trainable`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> Result<Bound<'g, T>> {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut index = HashMap::with_capacity(self.entries.len());
        for (i, (name, t)) in self.entries.iter().enumerate() {
            let v = if trainable {
                graph.variable(t.clone())?
            } else {
                graph.constant(t.clone())?
            };
            vars.push(v);
            index.insert(name.clone(), i);
        }
        Ok(Bound { vars, index })
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Parameters recorded on one graph.
pub struct Bound<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
    index: HashMap<String, usize>,
}

impl<'g, T: Real> Bound<'g, T> {
    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    /// Variables in parameter-set order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest")
}

/// Encode tensors in the parameter file format; returns bytes and manifest text.
pub fn encode_tensors<T: Real>(entries: &[(String, Tensor<T>)]) -> (Vec<u8>, String) {
    let mut out = Vec::new();
    let mut manifest = String::from("# name\tshape\toffset\n");
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::BITS.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name}\t{}\t{}\n", shape.join("x"), out.len()));
        for &v in t.data() {
            v.to_le_bytes_vec(&mut out);
        }
    }
    (out, manifest)
}

pub fn write_tensors<T: Real>(path: &Path, entries: &[(String, Tensor<T>)]) -> Result<()> {
    let (bytes, manifest) = encode_tensors(entries);
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Decode a parameter file, converting values to `T` if the stored width differs.
pub fn decode_tensors<T: Real>(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let bits = r.u32()?;
    if bits != 32 && bits != 64 {
        return Err(Error::format(
            path,
            format!("unsupported element width {bits}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * bits as usize / 8)?;
        let data: Vec<T> = if bits == 32 {
            raw.chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_slice(c) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_slice(c)))
                .collect()
        };
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(entries)
}

pub fn read_tensors<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path)?;
    decode_tensors(&bytes, path)
}
