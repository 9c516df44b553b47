use nalgebra::Point3;
use occfield::geometry::{shapes, Bvh, TriangleMesh};
use occfield::metrics::chamfer;
use occfield::scene::SceneConfig;
use occfield::surface::{evaluate_oracle, extract_surface, fermat_filter, marching_cubes, segment_nlos_surface, FieldGrid};
use proptest::prelude::*;

fn to_unit(cfg: &SceneConfig, m: &TriangleMesh) -> TriangleMesh {
    m.map_points(|p| cfg.hidden_cube.to_unit(p)).unwrap()
}

#[test]
fn oracle_round_trip_lands_within_two_cells() {
    let cfg = SceneConfig::confocal_small();
    let sensors = cfg.wall.with_resolution(5, 5).positions();
    let c = cfg.hidden_cube.center();
    let shapes_under_test = [
        shapes::cuboid(c + nalgebra::Vector3::new(-0.08, -0.06, -0.1), c + nalgebra::Vector3::new(0.08, 0.06, 0.0)),
        shapes::uv_sphere(c + nalgebra::Vector3::new(0.0, 0.0, -0.05), 0.09, 64, 48),
    ];
    let r = 64;
    let h = 1.0 / r as f64;
    for gt in shapes_under_test {
        let bvh = Bvh::build(&gt).unwrap();
        let grid = evaluate_oracle(&bvh, &sensors, 1, cfg.hidden_cube, r).unwrap();
        let k = sensors.len();
        let s = extract_surface(&grid, &sensors, k).unwrap();
        let fine = gt.subdivided(0.25 * h * cfg.hidden_cube.side).unwrap();
        let visible = segment_nlos_surface(&fine, &sensors, k, 1e-5).unwrap();
        let d = chamfer(&to_unit(&cfg, &s.nlos), &to_unit(&cfg, &visible.nlos), 5000, 1).unwrap();
        assert!(d.sqrt() < 2.0 * h, "rms {} vs cell {h}", d.sqrt());
    }
}

#[test]
fn sphere_indicator_vertices_and_area() {
    let cfg = SceneConfig::confocal_small();
    let cube = cfg.hidden_cube;
    let c = cube.center();
    let radius = 0.3 * cube.side;
    let grid = |r: usize| {
        let h = cube.side / r as f64;
        FieldGrid::from_fn(cube, r, |p| (0.5 - ((p - c).norm() - radius) / h).clamp(0.0, 1.0)).unwrap()
    };
    let g64 = grid(64);
    let m = marching_cubes(&g64, 0.5).unwrap();
    assert!(m.vertices().iter().all(|v| ((v - c).norm() - radius).abs() <= 1.5 * g64.cell_size()));
    let m128 = marching_cubes(&grid(128), 0.5).unwrap();
    let area = 4.0 * std::f64::consts::PI * radius * radius;
    assert!((m128.total_area() - area).abs() / area < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn outputs_are_subsets_of_their_inputs(
        x in -0.1f64..0.1, y in -0.1f64..0.1, z in 0.2f64..0.45, w in 0.05f64..0.2, k in 1usize..26,
    ) {
        let cfg = SceneConfig::confocal_small();
        let sensors = cfg.wall.with_resolution(5, 5).positions();
        let plate = shapes::rect_z(x, y, w, w, z, 3, true);
        let bvh = Bvh::build(&plate).unwrap();
        let grid = evaluate_oracle(&bvh, &sensors, 1, cfg.hidden_cube, 16).unwrap();
        let s = extract_surface(&grid, &sensors, k).unwrap();
        let kept: Vec<[Point3<f64>; 3]> = (0..s.nlos.len()).map(|t| s.nlos.corners(t)).collect();
        let all: Vec<[Point3<f64>; 3]> = (0..s.closed.len()).map(|t| s.closed.corners(t)).collect();
        prop_assert!(kept.iter().all(|t| all.contains(t)));
        let f = fermat_filter(&s.closed, &cfg.wall).unwrap();
        prop_assert!((0..f.len()).all(|t| all.contains(&f.corners(t))));
    }
}
