//! Text formats: class mapping (`id name` lines), per-frame label files (one
//! class name per line), split bundles (one video id per line) and flat
//! `key = value` configuration files.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

fn malformed(path: &Path, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn utf8<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| malformed(path, format!("not UTF-8: {e}")))
}

/// Lines of a text file; a single trailing newline does not start a new line
/// and `\r\n` endings are accepted.
fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.strip_suffix('\n')
        .unwrap_or(text)
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bijection between contiguous class ids `0..C` and class names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Dataset("class mapping is empty".into()));
        }
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Dataset(format!("invalid class name {n:?}")));
            }
            if ids.insert(n.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate class name {n:?}")));
            }
        }
        Ok(ClassMap { names, ids })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let text = utf8(bytes, path)?;
        let mut entries = Vec::new();
        for (i, line) in lines(text).enumerate() {
            let mut parts = line.split_whitespace();
            let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(malformed(path, format!("line {i}: expected \"id name\", got {line:?}")));
            };
            let id: usize = id
                .parse()
                .map_err(|_| malformed(path, format!("line {i}: bad class id {id:?}")))?;
            entries.push((id, name.to_string()));
        }
        entries.sort_by_key(|e| e.0);
        if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
            return Err(malformed(path, "class ids must be contiguous from 0"));
        }
        ClassMap::new(entries.into_iter().map(|e| e.1).collect()).map_err(|e| malformed(path, e.to_string()))
    }

    pub fn render(&self) -> String {
        self.names.iter().enumerate().map(|(i, n)| format!("{i} {n}\n")).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write(path, &self.render())
    }
}

pub fn parse_labels(bytes: &[u8], path: &Path, mapping: &ClassMap) -> Result<Vec<usize>> {
    let text = utf8(bytes, path)?;
    if text.is_empty() {
        return Err(malformed(path, "label file has no frames"));
    }
    lines(text)
        .enumerate()
        .map(|(line, name)| {
            mapping.id(name).ok_or_else(|| Error::UnknownClass {
                path: path.to_path_buf(),
                line,
                name: name.to_string(),
            })
        })
        .collect()
}

pub fn render_labels(labels: &[usize], mapping: &ClassMap) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty label sequence".into()));
    }
    let mut out = String::new();
    for &l in labels {
        let name = mapping
            .name(l)
            .ok_or_else(|| Error::InvalidArgument(format!("class id {l} not in mapping")))?;
        out.push_str(name);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_labels(path: &Path, mapping: &ClassMap) -> Result<Vec<usize>> {
    parse_labels(&read(path)?, path, mapping)
}

pub fn write_labels(path: &Path, labels: &[usize], mapping: &ClassMap) -> Result<()> {
    write(path, &render_labels(labels, mapping)?)
}

/// Video ids of a split bundle; blank lines are ignored.
pub fn parse_bundle(bytes: &[u8], path: &Path) -> Result<Vec<String>> {
    let text = utf8(bytes, path)?;
    let ids: Vec<String> = lines(text)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if ids.is_empty() {
        return Err(malformed(path, "split lists no videos"));
    }
    Ok(ids)
}

pub fn read_bundle(path: &Path) -> Result<Vec<String>> {
    parse_bundle(&read(path)?, path)
}

pub fn write_bundle(path: &Path, ids: &[String]) -> Result<()> {
    write(path, &ids.iter().map(|i| format!("{i}\n")).collect::<String>())
}

/// `key = value` pairs in file order; `#` starts a comment, blank lines are
/// skipped, repeated keys are rejected.
pub fn parse_key_values(bytes: &[u8], path: &Path) -> Result<Vec<(String, String)>> {
    let text = utf8(bytes, path)?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in lines(text).enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| malformed(path, format!("line {i}: expected key = value")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(malformed(path, format!("line {i}: empty key or value")));
        }
        if out.iter().any(|(prev, _)| prev == k) {
            return Err(malformed(path, format!("line {i}: duplicate key {k:?}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&read(path)?, path)
}

/// Parses a configuration value, naming the key on failure.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}
