use nalgebra::{Point3, Vector3};

use super::mesh::TriangleMesh;

/// Offset applied to both ends of every ray's parametric range to avoid self-hits.
pub const RAY_EPSILON: f64 = 1e-5;

/// Rays closer to parallel with a triangle plane than this (cosine) are treated as misses.
pub const PARALLEL_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit length.
    pub dir: Vector3<f64>,
    pub t_max: f64,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>, t_max: f64) -> Self {
        Ray {
            origin,
            dir: dir.normalize(),
            t_max,
        }
    }

    /// Ray from `a` towards `b` with `t_max = |b - a|`.
    pub fn segment(a: Point3<f64>, b: Point3<f64>) -> Self {
        let d = b - a;
        let len = d.norm();
        Ray {
            origin: a,
            dir: d / len,
            t_max: len,
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }

    pub fn inv_dir(&self) -> Vector3<f64> {
        self.dir.map(|c| 1.0 / c)
    }
}

/// Closest intersection record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of the second and third corner.
    pub u: f64,
    pub v: f64,
}

/// Two-sided Möller–Trumbore test. Returns `(t, u, v)` for any plane crossing inside
/// the triangle; the caller applies its own `t` window.
///
/// The determinant is compared against [`PARALLEL_EPSILON`] after dividing by the
/// doubled triangle area, i.e. it is a cosine cutoff that does not depend on scale.
#[inline]
pub fn intersect_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    v0: &Point3<f64>,
    e1: &Vector3<f64>,
    e2: &Vector3<f64>,
    double_area: f64,
) -> Option<(f64, f64, f64)> {
    let pvec = dir.cross(e2);
    let det = e1.dot(&pvec);
    if det.abs() <= PARALLEL_EPSILON * double_area {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(&qvec) * inv_det, u, v))
}

/// Read-only ray queries against an occluder set.
pub trait RayQuery: Sync {
    /// True iff some triangle is hit with `t` in `(ε, t_max − ε)`.
    fn any_hit(&self, ray: &Ray) -> bool;

    /// Minimal-`t` hit with `t` in `(ε, t_max)`.
    fn closest_hit(&self, ray: &Ray) -> Option<Hit>;
}

/// A scene without geometry: nothing is ever hit.
#[derive(Clone, Copy, Debug, Default)]
pub struct EmptyScene;

impl RayQuery for EmptyScene {
    fn any_hit(&self, _ray: &Ray) -> bool {
        false
    }

    fn closest_hit(&self, _ray: &Ray) -> Option<Hit> {
        None
    }
}

/// Exhaustive iteration over every triangle of a mesh.
pub struct BruteForce<'a>(pub &'a TriangleMesh);

impl BruteForce<'_> {
    fn hits(&self, ray: &Ray) -> impl Iterator<Item = Hit> + '_ {
        let ray = *ray;
        (0..self.0.len()).filter_map(move |t| {
            let [a, b, c] = self.0.corners(t);
            let (e1, e2) = (b - a, c - a);
            let area2 = e1.cross(&e2).norm();
            intersect_triangle(&ray.origin, &ray.dir, &a, &e1, &e2, area2)
                .map(|(tt, u, v)| Hit { t: tt, triangle: t, u, v })
        })
    }
}

impl RayQuery for BruteForce<'_> {
    fn any_hit(&self, ray: &Ray) -> bool {
        self.hits(ray)
            .any(|h| h.t > RAY_EPSILON && h.t < ray.t_max - RAY_EPSILON)
    }

    fn closest_hit(&self, ray: &Ray) -> Option<Hit> {
        self.hits(ray)
            .filter(|h| h.t > RAY_EPSILON && h.t < ray.t_max)
            .min_by(|a, b| a.t.total_cmp(&b.t).then(a.triangle.cmp(&b.triangle)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(-0.5, -0.5, 0.0),
                Point3::new(0.5, -0.5, 0.0),
                Point3::new(0.5, 0.5, 0.0),
                Point3::new(-0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn ray_through_quad_hits() {
        let m = unit_quad();
        let q = BruteForce(&m);
        let r = Ray::new(Point3::new(0.0, 0.0, -1.0), Vector3::z(), 10.0);
        assert!(q.any_hit(&r));
        let h = q.closest_hit(&r).unwrap();
        assert!((h.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn back_face_counts() {
        let m = unit_quad();
        let q = BruteForce(&m);
        let r = Ray::new(Point3::new(0.1, 0.2, 1.0), -Vector3::z(), 10.0);
        assert!(q.any_hit(&r));
    }

    #[test]
    fn parallel_offset_ray_misses() {
        let m = unit_quad();
        let q = BruteForce(&m);
        let r = Ray::new(Point3::new(-2.0, 0.0, 0.1), Vector3::x(), 10.0);
        assert!(!q.any_hit(&r));
        assert!(q.closest_hit(&r).is_none());
    }

    #[test]
    fn t_window_excludes_endpoints() {
        let m = unit_quad();
        let q = BruteForce(&m);
        // Starts on the surface.
        let r = Ray::new(Point3::new(0.0, 0.0, 0.0), Vector3::z(), 1.0);
        assert!(!q.any_hit(&r));
        // Ends on the surface.
        let r = Ray::segment(Point3::new(0.0, 0.0, -1.0), Point3::new(0.0, 0.0, 0.0));
        assert!(!q.any_hit(&r));
        // Ends just past it.
        let r = Ray::segment(Point3::new(0.0, 0.0, -1.0), Point3::new(0.0, 0.0, 1e-3));
        assert!(q.any_hit(&r));
    }

    #[test]
    fn segment_is_unit() {
        let r = Ray::segment(Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, -2.0, 3.0));
        assert!((r.dir.norm() - 1.0).abs() < 1e-12);
        assert!((r.t_max - 5.0).abs() < 1e-12);
    }
}
