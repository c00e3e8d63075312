//! File emission: atomic writes, fixed-precision CSV, the binary matrix
//! container and the content-hash manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

pub const MATRIX_MAGIC: &[u8; 8] = b"MUSMAT01";

/// 17 significant digits, so values round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Output directory that remembers the hash of everything written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(OutputDir {
            root,
            manifest: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Relative path (forward slashes) to SHA-256 hex digest.
    pub fn manifest(&self) -> &BTreeMap<String, String> {
        &self.manifest
    }

    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(relative), bytes)?;
        self.manifest.insert(relative.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, relative: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    /// Write outside the manifest (the run record itself).
    pub fn write_unlisted(&self, relative: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(relative), bytes)
    }
}

/// CSV builder with a header row; floats use [`fmt_f64`].
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
    columns: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum Cell {
    Int(usize),
    Float(f64),
    Missing,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: format!("{}\n", header.join(",")),
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "row width");
        let fields: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) => fmt_f64(*v),
                Cell::Missing => String::new(),
            })
            .collect();
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Whitespace-separated `x y` lines for plotting.
pub fn two_column(points: impl IntoIterator<Item = (f64, f64)>) -> Vec<u8> {
    let mut text = String::new();
    for (x, y) in points {
        let _ = writeln!(text, "{} {}", fmt_f64(x), fmt_f64(y));
    }
    text.into_bytes()
}

/// Magic, `u64` rows, `u64` cols, then row-major `f64`, all little-endian.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(24 + 8 * rows * cols);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Option<DMatrix<f64>> {
    let body = bytes.strip_prefix(MATRIX_MAGIC.as_slice())?;
    let word = |i: usize| -> Option<[u8; 8]> { body.get(8 * i..8 * i + 8)?.try_into().ok() };
    let rows = usize::try_from(u64::from_le_bytes(word(0)?)).ok()?;
    let cols = usize::try_from(u64::from_le_bytes(word(1)?)).ok()?;
    if body.len() != 16 + 8 * rows.checked_mul(cols)? {
        return None;
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        data.push(f64::from_le_bytes(word(2 + i)?));
    }
    Some(DMatrix::from_row_slice(rows, cols, &data))
}

/// Text fallback: `# MUSMAT01 rows cols` then one line per row.
pub fn matrix_text(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut text = format!("# MUSMAT01 {rows} {cols}\n");
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| fmt_f64(m[(i, j)])).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    text.into_bytes()
}
