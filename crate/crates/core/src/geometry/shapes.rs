//! Procedural meshes used as built-in sources and test fixtures.
//!
//! All closed shapes are wound counter-clockwise seen from outside.

use nalgebra::{Point3, Vector3};
use std::f64::consts::PI;

use super::mesh::TriangleMesh;

/// Names of the shapes available through [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["plate", "sphere", "box", "letter-L", "letter-T", "letter-H"];

/// Built-in source meshes, normalized to a unit bounding box centered at the origin.
pub fn builtin(name: &str) -> Option<TriangleMesh> {
    let m = match name {
        "plate" => rect_z(0.0, 0.0, 1.0, 1.0, 0.0, 16, true),
        "sphere" => uv_sphere(Point3::origin(), 0.5, 48, 32),
        "box" => cuboid_tessellated(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5), 4),
        "letter-L" => letter(&[[0.0, 0.2, 0.2, 1.0], [0.0, 0.0, 0.7, 0.2]]),
        "letter-T" => letter(&[[0.0, 0.8, 0.7, 1.0], [0.25, 0.0, 0.45, 0.8]]),
        "letter-H" => letter(&[[0.0, 0.0, 0.2, 1.0], [0.5, 0.0, 0.7, 1.0], [0.2, 0.4, 0.5, 0.6]]),
        _ => return None,
    };
    m.normalized_to_unit_box().ok()
}

/// Axis-aligned rectangle in the plane `z`, centered at `(cx, cy)`, split into
/// `n × n` quads. `facing_neg_z` selects the winding so normals point to −z.
pub fn rect_z(cx: f64, cy: f64, w: f64, h: f64, z: f64, n: usize, facing_neg_z: bool) -> TriangleMesh {
    let n = n.max(1);
    let mut verts = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            verts.push(Point3::new(
                cx - w / 2.0 + w * i as f64 / n as f64,
                cy - h / 2.0 + h * j as f64 / n as f64,
                z,
            ));
        }
    }
    let mut tris = Vec::with_capacity(2 * n * n);
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if facing_neg_z {
                tris.push([a, c, b]);
                tris.push([a, d, c]);
            } else {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
    }
    TriangleMesh::new(verts, tris).expect("rectangle is valid")
}

/// Closed box with two triangles per face.
pub fn cuboid(min: Point3<f64>, max: Point3<f64>) -> TriangleMesh {
    cuboid_tessellated(min, max, 1)
}

/// Closed box with each face split into an `n × n` grid.
pub fn cuboid_tessellated(min: Point3<f64>, max: Point3<f64>, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut parts = Vec::with_capacity(6);
    let e = max - min;
    // (origin, u, v): u × v is the outward normal.
    let faces = [
        (min, Vector3::new(0.0, e.y, 0.0), Vector3::new(e.x, 0.0, 0.0)), // -z
        (Point3::new(min.x, min.y, max.z), Vector3::new(e.x, 0.0, 0.0), Vector3::new(0.0, e.y, 0.0)), // +z
        (min, Vector3::new(e.x, 0.0, 0.0), Vector3::new(0.0, 0.0, e.z)), // -y
        (Point3::new(min.x, max.y, min.z), Vector3::new(0.0, 0.0, e.z), Vector3::new(e.x, 0.0, 0.0)), // +y
        (min, Vector3::new(0.0, 0.0, e.z), Vector3::new(0.0, e.y, 0.0)), // -x
        (Point3::new(max.x, min.y, min.z), Vector3::new(0.0, e.y, 0.0), Vector3::new(0.0, 0.0, e.z)), // +x
    ];
    for (o, u, v) in faces {
        parts.push(grid_patch(o, u, v, n));
    }
    TriangleMesh::merge(parts.iter())
}

fn grid_patch(o: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, n: usize) -> TriangleMesh {
    let mut verts = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            verts.push(o + u * (i as f64 / n as f64) + v * (j as f64 / n as f64));
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let mut tris = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            tris.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            tris.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(verts, tris).expect("patch is valid")
}

/// Latitude/longitude sphere with poles on the y axis.
///
/// Triangle count is `2 · n_lon · (n_lat − 1)`.
pub fn uv_sphere(center: Point3<f64>, radius: f64, n_lon: usize, n_lat: usize) -> TriangleMesh {
    let n_lon = n_lon.max(3);
    let n_lat = n_lat.max(2);
    let mut verts = vec![center + Vector3::new(0.0, radius, 0.0)];
    for j in 1..n_lat {
        let theta = PI * j as f64 / n_lat as f64;
        for i in 0..n_lon {
            let phi = 2.0 * PI * i as f64 / n_lon as f64;
            verts.push(
                center
                    + radius
                        * Vector3::new(theta.sin() * phi.cos(), theta.cos(), -theta.sin() * phi.sin()),
            );
        }
    }
    verts.push(center - Vector3::new(0.0, radius, 0.0));
    let south = (verts.len() - 1) as u32;
    let ring = |j: usize, i: usize| (1 + (j - 1) * n_lon + (i % n_lon)) as u32;
    let mut tris = Vec::new();
    for i in 0..n_lon {
        tris.push([0, ring(1, i), ring(1, i + 1)]);
    }
    for j in 1..n_lat - 1 {
        for i in 0..n_lon {
            let (a, b, c, d) = (ring(j, i), ring(j + 1, i), ring(j + 1, i + 1), ring(j, i + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    for i in 0..n_lon {
        tris.push([south, ring(n_lat - 1, i + 1), ring(n_lat - 1, i)]);
    }
    TriangleMesh::new(verts, tris).expect("sphere is valid")
}

/// Extruded block glyph: union of non-overlapping rectangles `[x0, y0, x1, y1]`
/// in a unit em box, extruded over `z ∈ [0, 0.15]`.
pub fn letter(rects: &[[f64; 4]]) -> TriangleMesh {
    let parts: Vec<TriangleMesh> = rects
        .iter()
        .map(|r| cuboid(Point3::new(r[0], r[1], 0.0), Point3::new(r[2], r[3], 0.15)))
        .collect();
    TriangleMesh::merge(parts.iter())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Signed volume via the divergence theorem; positive for outward winding.
    fn signed_volume(m: &TriangleMesh) -> f64 {
        (0..m.len())
            .map(|t| {
                let [a, b, c] = m.corners(t);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }

    #[test]
    fn closed_shapes_wind_outward() {
        let b = cuboid(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0));
        assert!((signed_volume(&b) - 6.0).abs() < 1e-12);
        let s = uv_sphere(Point3::new(0.3, 0.0, 0.0), 0.5, 64, 48);
        let v = 4.0 / 3.0 * PI * 0.125;
        assert!((signed_volume(&s) - v).abs() / v < 0.01);
        assert_eq!(s.len(), 2 * 64 * 47);
    }

    #[test]
    fn plate_faces_the_wall() {
        let p = rect_z(0.0, 0.0, 1.0, 1.0, 0.3, 4, true);
        assert!((0..p.len()).all(|t| p.normal(t).z < -0.999));
        assert_eq!(p.len(), 32);
    }

    #[test]
    fn builtins_are_normalized() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let b = m.aabb();
            let e = b.extent();
            assert!((e.x.max(e.y).max(e.z) - 1.0).abs() < 1e-12, "{name}");
            assert!(b.center().coords.norm() < 1e-12, "{name}");
        }
        assert!(builtin("teapot").is_none());
    }
}
