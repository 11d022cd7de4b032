//! Header + binary container shared by datasets, PCA models and checkpoints.
//!
//! A file is a sequence of sections. Each section is a block of
//! `key = value` text lines starting with `section = <tag>` and ending with
//! `n_values = <N>` followed by a blank line, then `N` little-endian f64
//! values.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub tag: String,
    header: Vec<(String, String)>,
    pub values: Vec<f64>,
}

impl Section {
    pub fn new(tag: impl Into<String>) -> Self {
        let mut s = Self {
            tag: tag.into(),
            header: Vec::new(),
            values: Vec::new(),
        };
        s.set("version", FORMAT_VERSION);
        s
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        assert!(
            !key.contains(['=', '\n']) && !value.contains('\n'),
            "invalid header entry {key:?}"
        );
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, fmt_f64(value));
    }

    pub fn set_f64_list(&mut self, key: &str, values: &[f64]) {
        let joined = values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>();
        self.set(key, joined.join(","));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.header.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::format(format!("section `{}` lacks key `{key}`", self.tag)))?;
        raw.parse().map_err(|_| {
            Error::format(format!(
                "section `{}`: cannot parse `{key} = {raw}`",
                self.tag
            ))
        })
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw: String = self.require(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|x| {
                x.trim().parse().map_err(|_| {
                    Error::format(format!("section `{}`: bad list item `{x}` in `{key}`", self.tag))
                })
            })
            .collect()
    }

    pub fn check_version(&self) -> Result<()> {
        let v: u32 = self.require("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::format(format!(
                "section `{}` has version {v}, expected {FORMAT_VERSION}",
                self.tag
            )));
        }
        Ok(())
    }
}

/// Shortest decimal form that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_sections<W: Write>(mut out: W, sections: &[Section]) -> std::io::Result<()> {
    for s in sections {
        writeln!(out, "section = {}", s.tag)?;
        for (k, v) in &s.header {
            writeln!(out, "{k} = {v}")?;
        }
        writeln!(out, "n_values = {}", s.values.len())?;
        writeln!(out)?;
        let mut buf = Vec::with_capacity(s.values.len() * 8);
        for v in &s.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_sections(bytes: &[u8]) -> Result<Vec<Section>> {
    let mut sections = Vec::new();
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let err = |offset: usize, line: usize, message: String| Error::Format {
        offset,
        line,
        message,
    };
    while pos < bytes.len() {
        let mut tag: Option<String> = None;
        let mut header = Vec::new();
        let mut n_values: Option<usize> = None;
        loop {
            let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                return Err(err(pos, line_no + 1, "unterminated header".into()));
            };
            line_no += 1;
            let line = std::str::from_utf8(&bytes[pos..pos + len])
                .map_err(|_| err(pos, line_no, "header is not UTF-8".into()))?;
            let start = pos;
            pos += len + 1;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(start, line_no, format!("expected `key = value`, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "section" if tag.is_none() => tag = Some(v.to_string()),
                _ if tag.is_none() => {
                    return Err(err(start, line_no, "section must start with `section = <tag>`".into()))
                }
                "n_values" => {
                    n_values = Some(v.parse().map_err(|_| {
                        err(start, line_no, format!("bad n_values `{v}`"))
                    })?)
                }
                _ => header.push((k.to_string(), v.to_string())),
            }
        }
        let tag = tag.ok_or_else(|| err(pos, line_no, "empty header".into()))?;
        let n = n_values.ok_or_else(|| err(pos, line_no, format!("section `{tag}` lacks n_values")))?;
        let nbytes = n
            .checked_mul(8)
            .ok_or_else(|| err(pos, line_no, "n_values overflows".into()))?;
        if bytes.len() - pos < nbytes {
            return Err(err(
                pos,
                line_no,
                format!(
                    "section `{tag}` truncated: expected {nbytes} payload bytes, found {}",
                    bytes.len() - pos
                ),
            ));
        }
        let values = bytes[pos..pos + nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += nbytes;
        sections.push(Section {
            tag,
            header,
            values,
        });
    }
    Ok(sections)
}

pub fn save(path: &Path, sections: &[Section]) -> Result<()> {
    let mut buf = Vec::new();
    write_sections(&mut buf, sections).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Section>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_sections(&bytes)
}

/// Picks the unique section with `tag`.
pub fn find<'a>(sections: &'a [Section], tag: &str) -> Result<&'a Section> {
    let mut it = sections.iter().filter(|s| s.tag == tag);
    match (it.next(), it.next()) {
        (Some(s), None) => Ok(s),
        (None, _) => Err(Error::format(format!("no `{tag}` section"))),
        _ => Err(Error::format(format!("more than one `{tag}` section"))),
    }
}
