//! Plain-text dataset persistence.
//!
//! Format: line 1 is `d n`; each following line is
//! `label idx:val idx:val ...` with 0-based indices of the nonzero features
//! and values printed with 17 significant digits, so a round trip is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

impl Dataset {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.dimension(), self.len());
        for s in self.samples() {
            let _ = write!(out, "{}", s.label);
            for (i, v) in s.features.iter().enumerate() {
                if *v != 0.0 {
                    let _ = write!(out, " {}:{:.16e}", i, v);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty dataset file".into() })?;
        let mut parts = header.split_whitespace();
        let dimension: usize = parse_field(parts.next(), 1, "dimension")?;
        let size: usize = parse_field(parts.next(), 1, "size")?;

        let mut samples = Vec::with_capacity(size);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let mut fields = line.split_whitespace();
            let label: f64 = parse_field(fields.next(), lineno, "label")?;
            let mut features = vec![0.0; dimension];
            for field in fields {
                let (idx, val) = field.split_once(':').ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("expected idx:val, got {field:?}"),
                })?;
                let idx: usize = idx.parse().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad index {idx:?}: {e}"),
                })?;
                if idx >= dimension {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("index {idx} out of range for dimension {dimension}"),
                    });
                }
                features[idx] = val.parse().map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad value {val:?}: {e}"),
                })?;
            }
            samples.push(Sample { features, label });
        }
        if samples.len() != size {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {size} samples, file holds {}", samples.len()),
            });
        }
        Dataset::new(samples, dimension)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = field.ok_or_else(|| Error::Parse { line, msg: format!("missing {what}") })?;
    raw.parse().map_err(|e| Error::Parse { line, msg: format!("bad {what} {raw:?}: {e}") })
}
