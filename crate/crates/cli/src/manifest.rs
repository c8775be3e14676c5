//! Run manifests: what was run, on which inputs, producing what.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: String,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
    pub started_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// SHA-256 over a git-style `blob <len>\0` header and the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a file, or of every file under a directory (sorted by relative path).
pub fn content_hash(path: &Path) -> Result<String> {
    if path.is_file() {
        return Ok(blob_hash(
            &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        ));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut tree = String::new();
    for rel in files {
        let hash = blob_hash(&fs::read(path.join(&rel))?);
        tree.push_str(&format!("{hash} {}\n", rel.display()));
    }
    Ok(blob_hash(tree.as_bytes()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            seed: None,
            config: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now_unix(),
        }
    }

    pub fn input(mut self, label: &str, path: &Path) -> Self {
        self.inputs.push((label.to_string(), path.to_path_buf()));
        self
    }

    pub fn output(mut self, label: &str, path: &Path) -> Self {
        self.outputs.push((label.to_string(), path.to_path_buf()));
        self
    }

    pub fn render(&self) -> Result<String> {
        let mut s = format!("command = {}\n", self.command);
        if let Some(seed) = self.seed {
            s.push_str(&format!("seed = {seed}\n"));
        }
        for (label, path) in &self.inputs {
            s.push_str(&format!("input.{label} = {}\n", path.display()));
            s.push_str(&format!("input.{label}.hash = {}\n", content_hash(path)?));
        }
        for (label, path) in &self.outputs {
            s.push_str(&format!("output.{label} = {}\n", path.display()));
        }
        s.push_str(&format!("started_unix = {}\n", self.started_unix));
        s.push_str(&format!("finished_unix = {}\n", now_unix()));
        for line in self.config.lines() {
            s.push_str(&format!("config.{line}\n"));
        }
        Ok(s)
    }

    /// Write to `path`; directories get `manifest.txt` inside them.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let target = if path.is_dir() {
            path.join(FILE_NAME)
        } else {
            sidecar(path)
        };
        fs::write(&target, self.render()?)
            .with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    }
}

/// Manifest location for a single-file output.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_header_scheme() {
        let mut h = Sha256::new();
        h.update(b"blob 3\0abc");
        let expect: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(blob_hash(b"abc"), expect);
    }

    #[test]
    fn directory_hash_ignores_creation_order() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        fs::write(a.path().join("x"), "1").unwrap();
        fs::write(a.path().join("y"), "2").unwrap();
        fs::write(b.path().join("y"), "2").unwrap();
        fs::write(b.path().join("x"), "1").unwrap();
        assert_eq!(
            content_hash(a.path()).unwrap(),
            content_hash(b.path()).unwrap()
        );
    }
}
