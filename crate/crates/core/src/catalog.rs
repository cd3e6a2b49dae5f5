//! Class catalogs: which ids exist and which of them are countable things.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::VOID_ID;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub id: u16,
    pub name: String,
    pub is_thing: bool,
}

/// Ordered class list with ids `0..len`. [`VOID_ID`] is reserved and never listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    entries: Vec<ClassEntry>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<(String, bool)>) -> Result<Self> {
        let entries = classes
            .into_iter()
            .enumerate()
            .map(|(id, (name, is_thing))| ClassEntry {
                id: id as u16,
                name,
                is_thing,
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.len() >= VOID_ID as usize {
            return Err(Error::InvalidConfig(format!(
                "catalog holds {} classes; ids must stay below the void id {VOID_ID}",
                entries.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::InvalidConfig(format!(
                    "class ids must be contiguous from 0; entry {i} has id {}",
                    e.id
                )));
            }
        }
        if !entries.iter().any(|e| e.is_thing) || !entries.iter().any(|e| !e.is_thing) {
            return Err(Error::InvalidConfig(
                "catalog needs at least one thing and one stuff class".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Parses the `id<TAB>name<TAB>thing|stuff` text format. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let id: u16 = fields[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad class id {:?}", fields[0])))?;
            let is_thing = match fields[2].trim() {
                "thing" => true,
                "stuff" => false,
                other => return Err(parse_err(format!("expected thing|stuff, got {other:?}"))),
            };
            entries.push(ClassEntry {
                id,
                name: fields[1].to_string(),
                is_thing,
            });
        }
        Self::from_entries(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let kind = if e.is_thing { "thing" } else { "stuff" };
            let _ = writeln!(out, "{}\t{}\t{}", e.id, e.name, kind);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn void_id(&self) -> u16 {
        VOID_ID
    }

    /// False for void and unknown ids.
    #[inline]
    pub fn is_thing(&self, id: u16) -> bool {
        self.entries.get(id as usize).is_some_and(|e| e.is_thing)
    }

    #[inline]
    pub fn is_stuff(&self, id: u16) -> bool {
        self.entries.get(id as usize).is_some_and(|e| !e.is_thing)
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.name.as_str())
    }

    pub fn thing_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.iter().filter(|e| e.is_thing).map(|e| e.id)
    }

    pub fn stuff_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.iter().filter(|e| !e.is_thing).map(|e| e.id)
    }

    /// Three stuff and four thing classes, the layout used by the synthetic
    /// generator.
    pub fn synthetic_default() -> Self {
        let classes = [
            ("road", false),
            ("building", false),
            ("vegetation", false),
            ("car", true),
            ("person", true),
            ("truck", true),
            ("bicycle", true),
        ];
        Self::new(classes.iter().map(|(n, t)| (n.to_string(), *t)).collect())
            .expect("default catalog is valid")
    }
}
