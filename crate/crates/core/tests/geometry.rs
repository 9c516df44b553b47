use nalgebra::{Point3, Vector3};
use occfield::geometry::{shapes, AffineTransform, BruteForce, Bvh, Ray, RayQuery, TriangleMesh};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn fixtures() -> Vec<TriangleMesh> {
    let l = AffineTransform {
        scale: 0.4,
        rot_deg: [0.0; 3],
        trans: [-0.1, 0.0, -0.2],
    };
    let t = AffineTransform {
        scale: 0.4,
        rot_deg: [0.0, 15.0, 0.0],
        trans: [0.1, 0.05, 0.2],
    };
    vec![
        shapes::builtin("plate").unwrap(),
        shapes::builtin("sphere").unwrap(),
        shapes::builtin("box").unwrap(),
        TriangleMesh::merge(
            [
                l.apply(&shapes::builtin("letter-L").unwrap()).unwrap(),
                t.apply(&shapes::builtin("letter-T").unwrap()).unwrap(),
            ]
            .iter(),
        ),
    ]
}

#[test]
fn bvh_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mesh in fixtures() {
        let bvh = Bvh::build(&mesh).unwrap();
        bvh.validate().unwrap();
        let brute = BruteForce(&mesh);
        for _ in 0..3000 {
            let o = Point3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
            let ray = Ray::new(o, random_dir(&mut rng), rng.gen_range(0.05..2.0));
            assert_eq!(bvh.any_hit(&ray), brute.any_hit(&ray));
            match (bvh.closest_hit(&ray), brute.closest_hit(&ray)) {
                (None, None) => {}
                (Some(a), Some(b)) => assert!((a.t - b.t).abs() < 1e-6, "{} vs {}", a.t, b.t),
                (a, b) => panic!("bvh {a:?} brute {b:?}"),
            }
        }
    }
}

#[test]
fn sphere_rays_match_the_analytic_sphere() {
    let r = 0.5;
    let mesh = shapes::uv_sphere(Point3::origin(), r, 192, 128);
    let bvh = Bvh::build(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mut agree = 0;
    for _ in 0..n {
        let o = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.5);
        let target = Point3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), 0.0);
        let ray = Ray::new(o, target - o, 10.0);
        // |o + t d|² = r² has a real root iff the discriminant is non-negative.
        let b = o.coords.dot(&ray.dir);
        let c = o.coords.norm_squared() - r * r;
        let analytic = b * b - c >= 0.0 && -b > 0.0;
        if analytic == bvh.any_hit(&ray) {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.999 * n as f64, "{agree}/{n}");
}

#[test]
fn axis_aligned_rays_along_grid_lines_never_slip_through() {
    // A tessellated box has shared edges and vertices on every grid line.
    let mesh = shapes::cuboid_tessellated(Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5), 8);
    let bvh = Bvh::build(&mesh).unwrap();
    for i in 0..=8 {
        for j in 0..=8 {
            let (x, y) = (-0.5 + i as f64 / 8.0, -0.5 + j as f64 / 8.0);
            if x.abs() == 0.5 || y.abs() == 0.5 {
                continue;
            }
            let ray = Ray::new(Point3::new(x, y, -2.0), Vector3::z(), 10.0);
            let hit = bvh.closest_hit(&ray).expect("grid-line ray must hit the front face");
            assert!((hit.t - 1.5).abs() < 1e-9);
        }
    }
}

#[test]
fn stacked_quads_report_the_nearer_one() {
    let near = shapes::rect_z(0.0, 0.0, 1.0, 1.0, 1.0, 1, true);
    let far = shapes::rect_z(0.0, 0.0, 1.0, 1.0, 2.0, 1, true);
    let mesh = TriangleMesh::merge([far, near].iter());
    let bvh = Bvh::build(&mesh).unwrap();
    let hit = bvh.closest_hit(&Ray::new(Point3::new(0.1, 0.2, 0.0), Vector3::z(), 5.0)).unwrap();
    assert!(hit.triangle >= 2);
    assert!((hit.t - 1.0).abs() < 1e-12);
    assert!(bvh.closest_hit(&Ray::new(Point3::new(3.0, 0.0, 0.0), Vector3::z(), 5.0)).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_then_transform_equals_transform(
        scale in 0.3f64..0.6,
        rx in -30.0f64..30.0, ry in -30.0f64..30.0, rz in -30.0f64..30.0,
        tx in -0.05f64..0.05, ty in -0.05f64..0.05, tz in -0.05f64..0.05,
    ) {
        let m = shapes::builtin("letter-H").unwrap();
        let xf = AffineTransform { scale, rot_deg: [rx, ry, rz], trans: [tx, ty, tz] };
        let a = xf.apply(&AffineTransform::identity().apply(&m).unwrap()).unwrap();
        let b = xf.apply(&m).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            prop_assert!((p - q).norm() < 1e-9);
        }
        // Normals are re-derived and stay unit length.
        for t in 0..a.len() {
            prop_assert!((a.normal(t).norm() - 1.0).abs() < 1e-9);
        }
        // Areas scale with s².
        prop_assert!((a.total_area() - scale * scale * m.total_area()).abs() < 1e-9);
    }

    #[test]
    fn any_hit_matches_brute_force_on_random_rays(
        ox in -1.0f64..1.0, oy in -1.0f64..1.0, oz in -1.0f64..1.0,
        dx in -1.0f64..1.0, dy in -1.0f64..1.0, dz in -1.0f64..1.0,
        t_max in 0.01f64..3.0,
    ) {
        let d = Vector3::new(dx, dy, dz);
        prop_assume!(d.norm() > 1e-3);
        let mesh = shapes::builtin("letter-T").unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        let ray = Ray::new(Point3::new(ox, oy, oz), d, t_max);
        prop_assert_eq!(bvh.any_hit(&ray), BruteForce(&mesh).any_hit(&ray));
    }
}
