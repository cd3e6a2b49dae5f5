//! Dataset manifests.
//!
//! One sample per line: `role<TAB>features<TAB>labels`, with `-` for a
//! missing path. Relative paths resolve against the manifest's directory.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Human-annotated training sample.
    Gt,
    /// Sample to be pseudo-labeled.
    Unlabeled,
    /// Evaluation-only sample.
    Holdout,
    /// Sample carrying a generated label.
    Pseudo,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Gt => "gt",
            Role::Unlabeled => "unlabeled",
            Role::Holdout => "holdout",
            Role::Pseudo => "pseudo",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(Role::Gt),
            "unlabeled" => Ok(Role::Unlabeled),
            "holdout" => Ok(Role::Holdout),
            "pseudo" => Ok(Role::Pseudo),
            other => Err(Error::InvalidConfig(format!("unknown role {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub role: Role,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse { line: idx + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let role = fields[0].parse::<Role>().map_err(|e| err(e.to_string()))?;
            let path = |f: &str| -> Option<PathBuf> {
                match f.trim() {
                    "" | "-" => None,
                    p => Some(base.join(p)),
                }
            };
            let entry = ManifestEntry {
                role,
                features: path(fields[1]),
                labels: path(fields[2]),
            };
            if entry.features.is_none() && entry.labels.is_none() {
                return Err(err("entry names neither features nor labels".into()));
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Serialized form. Paths inside `base` are written relative to it.
    pub fn to_text(&self, base: &Path) -> String {
        let show = |p: &Option<PathBuf>| match p {
            None => "-".to_string(),
            Some(p) => p.strip_prefix(base).unwrap_or(p).display().to_string(),
        };
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.role, show(&e.features), show(&e.labels)))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }
}
