//! ASCII PLY with `x y z` vertices and triangular faces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;

pub fn format_mesh(mesh: &SurfaceMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply");
    let _ = writeln!(s, "format ascii 1.0");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    let _ = writeln!(s, "property double x");
    let _ = writeln!(s, "property double y");
    let _ = writeln!(s, "property double z");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    let _ = writeln!(s, "property list uchar int vertex_indices");
    let _ = writeln!(s, "end_header");
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

pub fn write_mesh(mesh: &SurfaceMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_mesh(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<SurfaceMesh> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(Error::Mesh("missing `ply` magic".into()));
    }

    let mut n_vertices = None;
    let mut n_faces = None;
    let mut vertex_props = Vec::new();
    let mut current = "";
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Mesh("unterminated header".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "ascii" {
                    return Err(Error::Mesh(format!("unsupported PLY format `{fmt}`")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| Error::Mesh(format!("bad element count `{count}`")))?;
                match *name {
                    "vertex" => {
                        n_vertices = Some(count);
                        current = "vertex";
                    }
                    "face" => {
                        n_faces = Some(count);
                        current = "face";
                    }
                    other => return Err(Error::Mesh(format!("unsupported element `{other}`"))),
                }
            }
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            _ => return Err(Error::Mesh(format!("unexpected header line `{line}`"))),
        }
    }

    let pos = |name: &str| vertex_props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Mesh("vertex element needs x, y, z".into())),
    };

    let n_vertices = n_vertices.unwrap_or(0);
    let mut vertices = Vec::with_capacity(n_vertices);
    for i in 0..n_vertices {
        let line = lines
            .next()
            .ok_or_else(|| Error::Mesh(format!("missing vertex {i}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Mesh(format!("bad vertex line `{line}`")))?;
        if vals.len() != vertex_props.len() {
            return Err(Error::Mesh(format!("vertex {i}: wrong number of properties")));
        }
        let v = Vector3::new(vals[xi], vals[yi], vals[zi]);
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::Mesh(format!("vertex {i} is not finite")));
        }
        vertices.push(v);
    }

    let n_faces = n_faces.unwrap_or(0);
    let mut faces = Vec::with_capacity(n_faces);
    for i in 0..n_faces {
        let line = lines
            .next()
            .ok_or_else(|| Error::Mesh(format!("missing face {i}")))?;
        let vals: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Mesh(format!("bad face line `{line}`")))?;
        if vals.first() != Some(&3) || vals.len() != 4 {
            return Err(Error::Mesh(format!("face {i} is not a triangle")));
        }
        let f = [vals[1], vals[2], vals[3]];
        if f.iter().any(|&ix| ix >= vertices.len()) {
            return Err(Error::Mesh(format!("face {i} references a missing vertex")));
        }
        faces.push(f);
    }
    Ok(SurfaceMesh { vertices, faces })
}
