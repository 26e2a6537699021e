//! CSV rendering and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use deteq::io::format_float;

/// A named file produced by a command; contents are built fully before anything is written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// Comma-separated table with optional `#` comment lines above the header.
#[derive(Debug, Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(comments: &[String], header: &[&str]) -> Self {
        let mut text = String::new();
        for c in comments {
            text.push_str("# ");
            text.push_str(c);
            text.push('\n');
        }
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let cells: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn finish(self, name: &str) -> OutputFile {
        OutputFile { name: name.into(), contents: self.text }
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format_float(*v),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

/// Writes each file to a temporary sibling and renames it into place.
pub fn write_all(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut written = Vec::with_capacity(files.len());
    for f in files {
        let target = dir.join(&f.name);
        let tmp = dir.join(format!(".{}.tmp-{}", f.name, std::process::id()));
        let mut handle = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        handle.write_all(f.contents.as_bytes())?;
        handle.sync_all()?;
        drop(handle);
        fs::rename(&tmp, &target).with_context(|| format!("cannot move output into {}", target.display()))?;
        written.push(target);
    }
    Ok(written)
}
