use std::collections::HashMap;

use nalgebra::Point3;

use super::tables::{EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::FieldGrid;
use crate::error::Result;
use crate::geometry::TriangleMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Iso-surface of `grid` at `iso` in metres, wound so normals point from the region
/// above `iso` towards the region below it.
///
/// The grid is padded with one layer of zeros, so the surface closes at the cube
/// faces. Vertices on shared lattice edges are welded. An empty iso-surface yields
/// an empty mesh.
pub fn marching_cubes(grid: &FieldGrid, iso: f64) -> Result<TriangleMesh> {
    let r = grid.resolution;
    let n = r + 2;
    let h = grid.cell_size();
    let min = grid.cube.aabb().min;
    let value = |i: usize, j: usize, k: usize| -> f64 {
        if i == 0 || j == 0 || k == 0 || i > r || j > r || k > r {
            0.0
        } else {
            grid.get(i - 1, j - 1, k - 1)
        }
    };
    let position = |i: usize, j: usize, k: usize| {
        Point3::new(
            min.x + (i as f64 - 0.5) * h,
            min.y + (j as f64 - 0.5) * h,
            min.z + (k as f64 - 0.5) * h,
        )
    };

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut welded: HashMap<u64, u32> = HashMap::new();

    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = value(i + off[0], j + off[1], k + off[2]);
                    if vals[c] > iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let mut edge_vertex = [u32::MAX; 12];
                for (e, &(a, b)) in EDGE_CORNERS.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (oa, ob) = (CORNERS[a], CORNERS[b]);
                    let axis = (0..3).find(|&d| oa[d] != ob[d]).expect("edge spans one axis");
                    let base = [
                        i + oa[0].min(ob[0]),
                        j + oa[1].min(ob[1]),
                        k + oa[2].min(ob[2]),
                    ];
                    let key = (((base[2] * n + base[1]) * n + base[0]) * 3 + axis) as u64;
                    edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                        let pa = position(i + oa[0], j + oa[1], k + oa[2]);
                        let pb = position(i + ob[0], j + ob[1], k + ob[2]);
                        let t = (iso - vals[a]) / (vals[b] - vals[a]);
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks_exact(3) {
                    if tri[0] == 255 {
                        break;
                    }
                    let [a, b, c] = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[1] as usize],
                        edge_vertex[tri[2] as usize],
                    ];
                    if a == b || b == c || a == c {
                        continue;
                    }
                    // The table winds around the low-valued corners; reverse so the
                    // normal leaves the high-valued region.
                    triangles.push([a, c, b]);
                }
            }
        }
    }
    if triangles.is_empty() {
        return Ok(TriangleMesh::empty());
    }
    TriangleMesh::new(vertices, triangles)
}
