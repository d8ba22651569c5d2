//! Plain-text particle files: one `x y z` triple per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub fn read_particles(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_particles(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Parses particle text; errors carry a 1-based line number.
pub fn parse_particles(text: &str) -> Result<Vec<Vector3<f64>>, (usize, String)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err((lineno + 1, format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            let v: f64 = f
                .parse()
                .map_err(|_| (lineno + 1, format!("cannot parse `{f}` as a number")))?;
            if !v.is_finite() {
                return Err((lineno + 1, format!("non-finite coordinate `{f}`")));
            }
            *slot = v;
        }
        out.push(Vector3::new(p[0], p[1], p[2]));
    }
    Ok(out)
}

pub fn format_particles(points: &[Vector3<f64>]) -> Result<String> {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite particle {p:?}")));
        }
        // Shortest round-trip representation; exact on re-read.
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    Ok(s)
}

pub fn write_particles(points: &[Vector3<f64>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_particles(points)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
