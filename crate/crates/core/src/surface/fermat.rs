use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{Bvh, Ray, RayQuery, TriangleMesh};
use crate::scene::WallScanGrid;

/// Normals with `|n.z|` below this never reach the wall plane.
const GRAZING: f64 = 1e-9;

/// Per-triangle flag: the ray from the centroid along the wall-facing normal lands on
/// the scanned rectangle of the wall without passing through the mesh.
///
/// Normals pointing away from the wall are flipped first, so an open surface is judged
/// by its wall side regardless of winding. On a closed mesh the flipped rays of the
/// far side run through the mesh and are blocked.
pub fn fermat_mask(mesh: &TriangleMesh, wall: &WallScanGrid) -> Result<Vec<bool>> {
    if mesh.is_empty() {
        return Ok(Vec::new());
    }
    let bvh = Bvh::build(mesh)?;
    Ok((0..mesh.len())
        .into_par_iter()
        .map(|t| {
            let mut n = mesh.normal(t);
            if n.z > 0.0 {
                n = -n;
            }
            if n.z > -GRAZING {
                return false;
            }
            let c = mesh.centroid(t);
            let s = -c.z / n.z;
            let hit = c + n * s;
            if !wall.contains_xy(hit.x, hit.y) {
                return false;
            }
            !bvh.any_hit(&Ray::segment(c, Point3::new(hit.x, hit.y, 0.0)))
        })
        .collect())
}

/// Keeps the triangles that pass [`fermat_mask`].
pub fn fermat_filter(mesh: &TriangleMesh, wall: &WallScanGrid) -> Result<TriangleMesh> {
    let keep = fermat_mask(mesh, wall)?;
    Ok(mesh.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;
    use crate::scene::SceneConfig;
    use nalgebra::{Rotation3, Vector3};

    #[test]
    fn facing_plate_is_kept() {
        let wall = SceneConfig::confocal_small().wall;
        for facing in [true, false] {
            let plate = shapes::rect_z(0.0, 0.0, 0.3, 0.3, 0.3, 6, facing);
            let m = fermat_mask(&plate, &wall).unwrap();
            assert!(m.iter().all(|&k| k));
        }
    }

    #[test]
    fn edge_on_plate_is_dropped() {
        let wall = SceneConfig::confocal_small().wall;
        let plate = shapes::rect_z(0.0, 0.0, 0.3, 0.3, 0.0, 6, true);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let turned = plate
            .map_points(|p| Point3::from(rot * p.coords + Vector3::new(0.0, 0.0, 0.35)))
            .unwrap();
        let out = fermat_filter(&turned, &wall).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn sphere_matches_the_aperture_solid_angle() {
        let cfg = SceneConfig::confocal_small();
        let zc = cfg.hidden_cube.center().z;
        let sphere = shapes::uv_sphere(Point3::new(0.0, 0.0, zc), 0.1, 192, 128);
        let out = fermat_filter(&sphere, &cfg.wall).unwrap();
        let (a, b) = (cfg.wall.extent[0] / 2.0, cfg.wall.extent[1] / 2.0);
        let omega = 4.0 * (a * b / (zc * (zc * zc + a * a + b * b).sqrt())).atan();
        let expected = omega / (4.0 * std::f64::consts::PI);
        let got = out.total_area() / sphere.total_area();
        assert!((got - expected).abs() / expected < 0.05, "got {got} expected {expected}");
    }

    #[test]
    fn output_is_a_subset() {
        let wall = SceneConfig::confocal_small().wall;
        let m = shapes::cuboid(Point3::new(-0.1, -0.05, 0.2), Point3::new(0.1, 0.05, 0.3));
        let out = fermat_filter(&m, &wall).unwrap();
        assert!(out.len() <= m.len());
        let keep = fermat_mask(&m, &wall).unwrap();
        assert_eq!(keep.iter().filter(|&&k| k).count(), out.len());
        // Only the two triangles of the wall-facing side survive.
        assert_eq!(out.len(), 2);
    }
}
