//! Surface extraction and spatial queries.

mod bvh;
mod marching_cubes;
mod mesh;
mod sampling;

pub use bvh::{closest_point_on_triangle, SurfaceHit, SurfaceIndex};
pub use marching_cubes::marching_cubes;
pub use mesh::SurfaceMesh;
pub use sampling::{area_weighted_samples, surface_points};

use crate::error::Result;
use crate::io::Volume;

/// Builds the closest-point index over `mesh`; errors on an empty mesh.
pub fn build_index(mesh: SurfaceMesh) -> Result<SurfaceIndex> {
    SurfaceIndex::build(mesh)
}

/// Convenience: mask -> closed surface -> index.
pub fn index_mask(mask: &Volume) -> Result<SurfaceIndex> {
    SurfaceIndex::build(marching_cubes(mask, 0.5))
}
