//! Axis-aligned bounding-box hierarchy for closest-point queries.

use nalgebra::Vector3;

use super::SurfaceMesh;
use crate::error::{Error, Result};

type Vec3 = Vector3<f64>;

const LEAF_SIZE: usize = 4;

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub point: Vec3,
    pub distance: f64,
    pub face: usize,
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `order[start..start + count]`. Inner (`count == 0`): `left`, `right`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Immutable closest-point index over a mesh's triangles.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    mesh: SurfaceMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
    normals: Vec<Vec3>,
    area: f64,
    diagonal: f64,
    centroid: Vec3,
}

impl SurfaceIndex {
    pub fn build(mesh: SurfaceMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptySurface("cannot index a mesh without faces".into()));
        }
        let n = mesh.faces.len();
        let centroids: Vec<Vec3> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build_node(&mesh, &centroids, &mut order, 0, n, &mut nodes);

        let normals = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                let nrm = (b - a).cross(&(c - a));
                let len = nrm.norm();
                if len > 0.0 {
                    nrm / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        Ok(SurfaceIndex {
            area: mesh.area(),
            diagonal: mesh.bbox_diagonal(),
            centroid: mesh.centroid(),
            mesh,
            nodes,
            order,
            normals,
        })
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Bounding-box diagonal of the indexed mesh.
    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Unit normal of face `f` (zero for degenerate faces).
    pub fn normal(&self, f: usize) -> Vec3 {
        self.normals[f]
    }

    /// Nearest surface point to `p`.
    pub fn closest_point(&self, p: &Vec3) -> SurfaceHit {
        let mut best = SurfaceHit {
            point: *p,
            distance: f64::INFINITY,
            face: usize::MAX,
        };
        let mut best_d2 = f64::INFINITY;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.dist2(p) >= best_d2 {
                continue;
            }
            if node.is_leaf() {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = self.mesh.triangle(f);
                    let q = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && f < best.face) {
                        best_d2 = d2;
                        best = SurfaceHit {
                            point: q,
                            distance: 0.0,
                            face: f,
                        };
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let (dl, dr) = (self.nodes[l].dist2(p), self.nodes[r].dist2(p));
                // push the farther child first so the nearer one is explored first
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.distance = best_d2.sqrt();
        best
    }
}

fn build_node(
    mesh: &SurfaceMesh,
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &f in &order[start..end] {
        for v in mesh.triangle(f) {
            lo = lo.inf(&v);
            hi = hi.sup(&v);
        }
    }
    let idx = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start,
        count: end - start,
        left: 0,
        right: 0,
    });
    if end - start <= LEAF_SIZE {
        return idx;
    }

    let mut clo = Vec3::repeat(f64::INFINITY);
    let mut chi = Vec3::repeat(f64::NEG_INFINITY);
    for &f in &order[start..end] {
        clo = clo.inf(&centroids[f]);
        chi = chi.sup(&centroids[f]);
    }
    let extent = chi - clo;
    let axis = extent.imax();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });

    let left = build_node(mesh, centroids, order, start, mid, nodes);
    let right = build_node(mesh, centroids, order, mid, end, nodes);
    let node = &mut nodes[idx];
    node.count = 0;
    node.left = left;
    node.right = right;
    idx
}

/// Closest point to `p` on triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
