//! Bounding volume hierarchy over triangle bounding boxes.
//!
//! Built top-down by median split on the longest axis of the centroid bounds;
//! leaves hold at most [`MAX_LEAF`] triangles. Node boxes are padded by a few ulps
//! so that traversal never culls a triangle the exhaustive scan would hit.

use nalgebra::{Point3, Vector3};

use super::mesh::{Aabb, TriangleMesh};
use super::ray::{intersect_triangle, Hit, Ray, RayQuery, RAY_EPSILON};
use crate::error::{Error, Result};

pub const MAX_LEAF: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    aabb: Aabb,
    /// Leaf: first triangle slot. Interior: index of the left child (right is `left + 1`).
    first: u32,
    /// Zero for interior nodes.
    count: u32,
}

#[derive(Clone, Debug)]
struct PackedTriangle {
    v0: Point3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    double_area: f64,
    id: u32,
}

/// Immutable after construction; queries are read-only and thread-safe.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    tris: Vec<PackedTriangle>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Result<Bvh> {
        if mesh.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let n = mesh.len();
        let boxes: Vec<Aabb> = (0..n).map(|t| Aabb::from_points(&mesh.corners(t))).collect();
        let centroids: Vec<Point3<f64>> = (0..n).map(|t| mesh.centroid(t)).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / MAX_LEAF + 1);
        nodes.push(Node {
            aabb: Aabb::empty(),
            first: 0,
            count: 0,
        });
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((node, lo, hi)) = stack.pop() {
            let slice = &mut order[lo..hi];
            let bounds = slice
                .iter()
                .fold(Aabb::empty(), |b, &t| b.union(&boxes[t as usize]));
            nodes[node].aabb = pad(bounds);
            if slice.len() <= MAX_LEAF {
                nodes[node].first = lo as u32;
                nodes[node].count = slice.len() as u32;
                continue;
            }
            let cb = Aabb::from_points(slice.iter().map(|&t| &centroids[t as usize]));
            let axis = cb.longest_axis();
            let mid = slice.len() / 2;
            slice.select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                aabb: Aabb::empty(),
                first: 0,
                count: 0,
            });
            nodes.push(Node {
                aabb: Aabb::empty(),
                first: 0,
                count: 0,
            });
            nodes[node].first = left as u32;
            stack.push((left + 1, lo + mid, hi));
            stack.push((left, lo, lo + mid));
        }
        let tris = order
            .iter()
            .map(|&t| {
                let [a, b, c] = mesh.corners(t as usize);
                let (e1, e2) = (b - a, c - a);
                PackedTriangle {
                    v0: a,
                    e1,
                    e2,
                    double_area: e1.cross(&e2).norm(),
                    id: t,
                }
            })
            .collect();
        Ok(Bvh { nodes, tris })
    }

    pub fn root_aabb(&self) -> Aabb {
        self.nodes[0].aabb
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Walks the hierarchy and checks structural invariants: each triangle referenced
    /// exactly once, leaves within size, and parents enclosing their children.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = vec![0u32; self.tris.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.count > 0 {
                if node.count as usize > MAX_LEAF {
                    return Err(format!("leaf {i} holds {} triangles", node.count));
                }
                for s in node.first..node.first + node.count {
                    seen[self.tris[s as usize].id as usize] += 1;
                }
            } else {
                for c in [node.first as usize, node.first as usize + 1] {
                    if !node.aabb.contains_box(&self.nodes[c].aabb) {
                        return Err(format!("node {i} does not contain child {c}"));
                    }
                    stack.push(c);
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(t) => Err(format!("triangle {t} referenced {} times", seen[t])),
            None => Ok(()),
        }
    }

    fn traverse(&self, ray: &Ray, t_hi: f64, mut visit: impl FnMut(&PackedTriangle, f64) -> bool) {
        let inv = ray.inv_dir();
        let mut stack = [0u32; 96];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.aabb.intersect_ray(&ray.origin, &inv, 0.0, t_hi).is_none() {
                continue;
            }
            if node.count > 0 {
                for tri in &self.tris[node.first as usize..(node.first + node.count) as usize] {
                    if visit(tri, t_hi) {
                        return;
                    }
                }
            } else {
                stack[sp] = node.first + 1;
                stack[sp + 1] = node.first;
                sp += 2;
            }
        }
    }
}

fn pad(b: Aabb) -> Aabb {
    let scale = b.min.coords.abs().max().max(b.max.coords.abs().max()).max(1.0);
    let eps = Vector3::repeat(scale * 4.0 * f64::EPSILON);
    Aabb::new(b.min - eps, b.max + eps)
}

impl RayQuery for Bvh {
    fn any_hit(&self, ray: &Ray) -> bool {
        let lo = RAY_EPSILON;
        let hi = ray.t_max - RAY_EPSILON;
        if hi <= lo {
            return false;
        }
        let mut found = false;
        self.traverse(ray, hi, |tri, _| {
            if let Some((t, _, _)) =
                intersect_triangle(&ray.origin, &ray.dir, &tri.v0, &tri.e1, &tri.e2, tri.double_area)
            {
                if t > lo && t < hi {
                    found = true;
                    return true;
                }
            }
            false
        });
        found
    }

    fn closest_hit(&self, ray: &Ray) -> Option<Hit> {
        let inv = ray.inv_dir();
        let mut best: Option<Hit> = None;
        let mut stack = [0u32; 96];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            let limit = best.map_or(ray.t_max, |h| h.t);
            if node.aabb.intersect_ray(&ray.origin, &inv, 0.0, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for tri in &self.tris[node.first as usize..(node.first + node.count) as usize] {
                    if let Some((t, u, v)) = intersect_triangle(
                        &ray.origin,
                        &ray.dir,
                        &tri.v0,
                        &tri.e1,
                        &tri.e2,
                        tri.double_area,
                    ) {
                        if t <= RAY_EPSILON || t >= ray.t_max {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some(b) => t < b.t || (t == b.t && (tri.id as usize) < b.triangle),
                        };
                        if better {
                            best = Some(Hit {
                                t,
                                triangle: tri.id as usize,
                                u,
                                v,
                            });
                        }
                    }
                }
            } else {
                // Near child first.
                let (l, r) = (node.first, node.first + 1);
                let dl = self.nodes[l as usize].aabb.intersect_ray(&ray.origin, &inv, 0.0, limit);
                let dr = self.nodes[r as usize].aabb.intersect_ray(&ray.origin, &inv, 0.0, limit);
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a.0 <= b.0 { (l, r) } else { (r, l) };
                        stack[sp] = far;
                        stack[sp + 1] = near;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = l;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = r;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }
}
