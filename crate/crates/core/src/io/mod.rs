//! File formats: MetaImage volumes, particle files, PLY meshes and cohort manifests.

mod manifest;
mod particles;
mod ply;
mod volume;

pub use manifest::{load_manifest, CohortManifest, ManifestEntry, Source, Split, SEMI_METHODS};
pub use particles::{format_particles, parse_particles, read_particles, write_particles};
pub use ply::{format_mesh, parse_mesh, read_mesh, write_mesh};
pub use volume::{read_volume, write_volume, Volume, VolumeKind, VoxelData};
