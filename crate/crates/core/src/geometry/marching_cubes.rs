//! Marching cubes over scalar volumes.
//!
//! The 256-entry case table is derived at first use from the cube topology
//! instead of being transcribed by hand: on each cube face the iso crossings
//! are paired into segments, the segments chain into closed loops, and every
//! loop is fanned into triangles oriented towards the outside corners.
//! Ambiguous faces (diagonal corners inside) always separate the inside
//! corners, i.e. the face centre is treated as background. Because that rule
//! only looks at the four corners of a face, neighbouring cubes agree on the
//! shared face and the resulting surface is closed.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::Vector3;

use super::SurfaceMesh;
use crate::io::Volume;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Edges as (lower corner, upper corner); edge `e` runs along axis `e / 4`.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    EDGES
        .iter()
        .position(|&e| e == (lo, hi))
        .expect("corners must share an edge")
}

/// Corners of each of the six faces in cyclic order.
fn face_cycles() -> Vec<[usize; 4]> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let corner = |cu: usize, cv: usize| {
                let mut off = [0; 3];
                off[axis] = side;
                off[u] = cu;
                off[v] = cv;
                CORNERS.iter().position(|&c| c == off).unwrap()
            };
            faces.push([corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)]);
        }
    }
    faces
}

fn edge_midpoint(e: usize) -> Vector3<f64> {
    let (a, b) = EDGES[e];
    let pa = CORNERS[a].map(|x| x as f64);
    let pb = CORNERS[b].map(|x| x as f64);
    Vector3::new(pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]) * 0.5
}

fn corner_pos(c: usize) -> Vector3<f64> {
    let p = CORNERS[c];
    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;

    // Segments on each face, as pairs of edge ids.
    let mut neighbours: [Vec<usize>; 12] = Default::default();
    for cyc in face_cycles() {
        let crossings: Vec<usize> = (0..4)
            .filter(|&i| inside(cyc[i]) != inside(cyc[(i + 1) % 4]))
            .collect();
        let mut link = |a: usize, b: usize| {
            neighbours[a].push(b);
            neighbours[b].push(a);
        };
        let edge_after = |i: usize| edge_between(cyc[i], cyc[(i + 1) % 4]);
        match crossings.len() {
            0 => {}
            2 => link(edge_after(crossings[0]), edge_after(crossings[1])),
            4 => {
                // Cut off each inside corner on its own.
                for i in 0..4 {
                    if inside(cyc[i]) {
                        link(edge_after((i + 3) % 4), edge_after(i));
                    }
                }
            }
            n => unreachable!("a face cycle has an even number of crossings, got {n}"),
        }
    }

    let mut visited = [false; 12];
    let mut triangles = Vec::new();
    for start in 0..12 {
        if visited[start] || neighbours[start].is_empty() {
            continue;
        }
        let mut lp = vec![start];
        visited[start] = true;
        let mut prev = start;
        let mut cur = neighbours[start][0];
        while cur != start {
            visited[cur] = true;
            lp.push(cur);
            let next = if neighbours[cur][0] != prev {
                neighbours[cur][0]
            } else {
                neighbours[cur][1]
            };
            prev = cur;
            cur = next;
        }

        // Newell normal against the inside -> outside direction of the crossed edges.
        let pts: Vec<Vector3<f64>> = lp.iter().map(|&e| edge_midpoint(e)).collect();
        let mut normal = Vector3::zeros();
        for i in 0..pts.len() {
            normal += pts[i].cross(&pts[(i + 1) % pts.len()]);
        }
        let outward: Vector3<f64> = lp
            .iter()
            .map(|&e| {
                let (a, b) = EDGES[e];
                if inside(a) {
                    corner_pos(b) - corner_pos(a)
                } else {
                    corner_pos(a) - corner_pos(b)
                }
            })
            .sum();
        if normal.dot(&outward) < 0.0 {
            lp.reverse();
        }
        for i in 1..lp.len() - 1 {
            triangles.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    triangles
}

fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangulate_case).collect())
}

/// Extracts the `iso` level set of `v` as a closed triangle mesh in physical
/// coordinates. The volume is padded with one voxel of background on every
/// side, so foreground touching the border is capped. Normals face outward
/// (from values above `iso` towards values below).
pub fn marching_cubes(v: &Volume, iso: f64) -> SurfaceMesh {
    let [nx, ny, nz] = v.dims;
    let (px, py, pz) = (nx + 2, ny + 2, nz + 2);
    let value = |i: usize, j: usize, k: usize| -> f64 {
        if i == 0 || j == 0 || k == 0 || i > nx || j > ny || k > nz {
            0.0
        } else {
            v.value(v.index(i - 1, j - 1, k - 1))
        }
    };
    let table = case_table();

    let mut mesh = SurfaceMesh::default();
    let mut vertex_of_edge: HashMap<(usize, u8), usize> = HashMap::new();

    for k in 0..pz - 1 {
        for j in 0..py - 1 {
            for i in 0..px - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = value(i + off[0], j + off[1], k + off[2]);
                    if vals[c] > iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let (a, b) = EDGES[e as usize];
                        let oa = CORNERS[a];
                        let base = (i + oa[0]) + px * ((j + oa[1]) + py * (k + oa[2]));
                        let axis = (e / 4) as u8;
                        *slot = *vertex_of_edge.entry((base, axis)).or_insert_with(|| {
                            let (va, vb) = (vals[a], vals[b]);
                            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                            let ob = CORNERS[b];
                            let f = |d: usize| {
                                (oa[d] as f64) + t * (ob[d] as f64 - oa[d] as f64)
                            };
                            let p = v.physical(
                                (i as f64) + f(0) - 1.0,
                                (j as f64) + f(1) - 1.0,
                                (k as f64) + f(2) - 1.0,
                            );
                            mesh.vertices.push(p);
                            mesh.vertices.len() - 1
                        });
                    }
                    mesh.faces.push(ids);
                }
            }
        }
    }
    remove_degenerate_faces(&mut mesh, 1e-12);
    mesh
}

fn remove_degenerate_faces(mesh: &mut SurfaceMesh, min_area: f64) {
    let verts = &mesh.vertices;
    mesh.faces.retain(|&[a, b, c]| {
        a != b
            && b != c
            && a != c
            && 0.5 * (verts[b] - verts[a]).cross(&(verts[c] - verts[a])).norm() > min_area
    });
}
