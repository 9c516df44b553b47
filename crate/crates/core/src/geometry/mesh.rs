use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// Triangles whose doubled area falls below this are dropped at load time.
const DEGENERATE_AREA: f64 = 1e-14;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test. Returns the parametric entry/exit interval clipped to `[t_min, t_max]`.
    ///
    /// Zero direction components are handled explicitly so that rays running exactly
    /// along a slab boundary are not culled.
    pub fn intersect_ray(
        &self,
        origin: &Point3<f64>,
        inv_dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
    ) -> Option<(f64, f64)> {
        let mut lo = t_min;
        let mut hi = t_max;
        for a in 0..3 {
            let inv = inv_dir[a];
            if inv.is_infinite() {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let mut t0 = (self.min[a] - origin[a]) * inv;
            let mut t1 = (self.max[a] - origin[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }
}

/// Indexed triangle mesh with a per-triangle albedo.
///
/// Construction through [`TriangleMesh::new`] validates indices and drops
/// zero-area triangles, so every stored face has a well-defined unit normal.
/// Normals follow counter-clockwise winding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    albedo: Vec<f64>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = triangles.len();
        Self::with_albedo(vertices, triangles, vec![1.0; n])
    }

    pub fn with_albedo(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        albedo: Vec<f64>,
    ) -> Result<Self> {
        if albedo.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} albedo values for {} triangles",
                albedo.len(),
                triangles.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {p:?}")));
        }
        let nv = vertices.len();
        let mut kept_tris = Vec::with_capacity(triangles.len());
        let mut kept_albedo = Vec::with_capacity(triangles.len());
        for (tri, rho) in triangles.into_iter().zip(albedo) {
            if tri.iter().any(|&i| i as usize >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {tri:?} references vertex beyond {nv}"
                )));
            }
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidMesh(format!("albedo {rho} outside [0, 1]")));
            }
            let [a, b, c] = tri.map(|i| vertices[i as usize]);
            if (b - a).cross(&(c - a)).norm() <= DEGENERATE_AREA {
                continue;
            }
            kept_tris.push(tri);
            kept_albedo.push(rho);
        }
        Ok(TriangleMesh {
            vertices,
            triangles: kept_tris,
            albedo: kept_albedo,
        })
    }

    pub fn empty() -> Self {
        TriangleMesh::default()
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn albedo(&self) -> &[f64] {
        &self.albedo
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point3<f64>; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Unit face normal from counter-clockwise winding.
    pub fn normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn centroid(&self, t: usize) -> Point3<f64> {
        let [a, b, c] = self.corners(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.len()).map(|t| self.area(t)).sum()
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.triangles.iter().flatten().map(|&i| &self.vertices[i as usize]))
    }

    /// Returns a copy with every albedo multiplied by `factor` (clamped to `[0, 1]`).
    pub fn scaled_albedo(&self, factor: f64) -> TriangleMesh {
        let mut m = self.clone();
        for rho in &mut m.albedo {
            *rho = (*rho * factor).clamp(0.0, 1.0);
        }
        m
    }

    pub fn set_albedo(&mut self, rho: f64) {
        self.albedo.iter_mut().for_each(|a| *a = rho);
    }

    /// Applies `f` to every vertex. Normals are implied by the transformed positions.
    pub fn map_points(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Result<TriangleMesh> {
        TriangleMesh::with_albedo(
            self.vertices.iter().map(f).collect(),
            self.triangles.clone(),
            self.albedo.clone(),
        )
    }

    /// Reverses the winding of every triangle.
    pub fn flipped(&self) -> TriangleMesh {
        let mut m = self.clone();
        for t in &mut m.triangles {
            t.swap(1, 2);
        }
        m
    }

    /// Keeps only the triangles selected by `keep`; unused vertices are dropped.
    pub fn subset(&self, keep: &[bool]) -> TriangleMesh {
        assert_eq!(keep.len(), self.len());
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut albedo = Vec::new();
        for (t, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            let tri = self.triangles[t].map(|i| {
                let slot = &mut remap[i as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                *slot
            });
            triangles.push(tri);
            albedo.push(self.albedo[t]);
        }
        TriangleMesh {
            vertices,
            triangles,
            albedo,
        }
    }

    /// Splits every triangle into `m²` similar pieces, with `m` chosen per triangle so
    /// no edge is longer than `max_edge`. Winding and albedo are kept; vertices are
    /// not shared between original triangles.
    pub fn subdivided(&self, max_edge: f64) -> Result<TriangleMesh> {
        if !(max_edge > 0.0) {
            return Err(Error::InvalidInput(format!("max_edge must be positive, got {max_edge}")));
        }
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut albedo = Vec::new();
        for t in 0..self.len() {
            let [a, b, c] = self.corners(t);
            let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            let m = ((longest / max_edge).ceil() as usize).max(1);
            let base = vertices.len() as u32;
            // Row-major barycentric lattice: (i, j) with i + j ≤ m.
            let mut row_start = Vec::with_capacity(m + 2);
            for j in 0..=m {
                row_start.push(vertices.len() as u32 - base);
                for i in 0..=(m - j) {
                    let (u, v) = (i as f64 / m as f64, j as f64 / m as f64);
                    vertices.push(a + (b - a) * u + (c - a) * v);
                }
            }
            let idx = |i: usize, j: usize| base + row_start[j] + i as u32;
            for j in 0..m {
                for i in 0..(m - j) {
                    triangles.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                    albedo.push(self.albedo[t]);
                    if i + j + 2 <= m {
                        triangles.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                        albedo.push(self.albedo[t]);
                    }
                }
            }
        }
        TriangleMesh::with_albedo(vertices, triangles, albedo)
    }

    /// Concatenates meshes without welding shared vertices.
    pub fn merge<'a>(meshes: impl IntoIterator<Item = &'a TriangleMesh>) -> TriangleMesh {
        let mut out = TriangleMesh::empty();
        for m in meshes {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles
                .extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
            out.albedo.extend_from_slice(&m.albedo);
        }
        out
    }

    /// Centers the bounding box at the origin and scales so the longest side is 1.
    pub fn normalized_to_unit_box(&self) -> Result<TriangleMesh> {
        if self.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let b = self.aabb();
        let c = b.center();
        let e = b.extent();
        let s = e.x.max(e.y).max(e.z);
        self.map_points(|p| Point3::from((p - c) / s))
    }

    /// Cumulative area table used for area-uniform sampling.
    pub fn area_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        (0..self.len())
            .map(|t| {
                acc += self.area(t);
                acc
            })
            .collect()
    }

    /// Draws `n` points uniformly by area. Returns the points and their triangle ids.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> (Vec<Point3<f64>>, Vec<usize>) {
        let cdf = self.area_cdf();
        let total = *cdf.last().unwrap_or(&0.0);
        let mut points = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        if total <= 0.0 {
            return (points, ids);
        }
        for _ in 0..n {
            let r = rng.gen::<f64>() * total;
            let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            let su = u.sqrt();
            let [a, b, c] = self.corners(t);
            let p = a.coords * (1.0 - su) + b.coords * (su * (1.0 - v)) + c.coords * (su * v);
            points.push(Point3::from(p));
            ids.push(t);
        }
        (points, ids)
    }
}
