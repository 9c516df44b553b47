//! Meshes, rays, transforms and the BVH used for every visibility query.

pub mod bvh;
pub mod mesh;
pub mod mesh_io;
pub mod ray;
pub mod shapes;
pub mod transform;

pub use bvh::Bvh;
pub use mesh::{Aabb, TriangleMesh};
pub use ray::{BruteForce, EmptyScene, Hit, Ray, RayQuery, RAY_EPSILON};
pub use transform::{apply_transform, AffineTransform};

/// Builds the BVH for `mesh`. Fails with "empty geometry" for meshes without triangles.
pub fn build_bvh(mesh: &TriangleMesh) -> crate::Result<Bvh> {
    Bvh::build(mesh)
}
