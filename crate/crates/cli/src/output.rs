//! CSV and JSON writers. Every file starts with the config hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

pub struct Csv {
    buf: String,
    width: usize,
}

impl Csv {
    pub fn new(hash: &str, header: &[String]) -> Self {
        let mut buf = format!("# config sha256 {hash}\n");
        buf.push_str(&header.join(","));
        buf.push('\n');
        Self {
            buf,
            width: header.len(),
        }
    }

    pub fn with_columns(hash: &str, header: &[&str]) -> Self {
        let owned: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        Self::new(hash, &owned)
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.width);
        for (k, v) in values.iter().enumerate() {
            if k > 0 {
                self.buf.push(',');
            }
            push_number(&mut self.buf, *v);
        }
        self.buf.push('\n');
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        write_file(dir, name, &self.buf)
    }
}

/// Shortest round-trip form, in exponent notation outside `[1e-4, 1e15)`.
fn push_number(buf: &mut String, v: f64) {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        write!(buf, "{v}").unwrap();
    } else {
        write!(buf, "{v:e}").unwrap();
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_sha256: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, hash: &str, body: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(&Stamped {
        config_sha256: hash,
        body,
    })
    .expect("result serializes");
    text.push('\n');
    write_file(dir, name, &text)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let io = |path: PathBuf| move |source| CliError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(io(path.clone()))?;
    Ok(path)
}

/// `n` evenly spaced points on `[a, b]`.
pub fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect()
}
