//! CSV and JSON artifact emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::Grid1D;
use crate::error::{Error, Result};

/// Floats are printed with 17 significant digits so that bit-identical
/// results give byte-identical files.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(usize),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x)
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::F(x) => out.push_str(&fmt_f64(*x)),
            Cell::I(x) => {
                let _ = write!(out, "{x}");
            }
            Cell::S(s) if s.contains([',', '"', '\n']) => {
                let _ = write!(out, "\"{}\"", s.replace('"', "\"\""));
            }
            Cell::S(s) => out.push_str(s),
        }
    }
}

/// Writes artifacts under one directory and remembers what it wrote.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn csv<R: IntoIterator<Item = Vec<Cell>>>(&mut self, name: &str, header: &[String], rows: R) -> Result<()> {
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                cell.render(&mut out);
            }
            out.push('\n');
        }
        self.write(name, &out)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Space-time matrix: header `t,x_0,…`, then one row per written slice.
    pub fn matrix(&mut self, name: &str, grid: &Grid1D, values: &[Vec<f64>], slices: &[usize]) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..grid.nx).map(|i| format!("x_{i}")));
        let rows = slices.iter().map(|&n| {
            let mut row = vec![Cell::F(grid.time(n))];
            row.extend(values[n].iter().map(|v| Cell::F(*v)));
            row
        });
        self.csv(name, &header, rows)
    }
}

/// `count` slice indices spread evenly over `0..=nt`, always including both
/// ends.
pub fn output_slices(nt: usize, count: usize) -> Vec<usize> {
    if count > nt {
        return (0..=nt).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| ((k as f64) * nt as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
