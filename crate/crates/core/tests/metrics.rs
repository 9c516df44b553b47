use occfield::geometry::{shapes, TriangleMesh};
use occfield::metrics::{chamfer, fscore, label_iou};
use proptest::prelude::*;

fn plate_at(z: f64) -> TriangleMesh {
    shapes::rect_z(0.0, 0.0, 1.0, 1.0, z, 4, true)
}

#[test]
fn fscore_falls_as_the_plate_moves_away() {
    let gt = plate_at(0.0);
    let mut prev = f64::INFINITY;
    for d in [0.0, 0.004, 0.008, 0.012, 0.02] {
        let f = fscore(&plate_at(d), &gt, 0.01, 4000, 3).unwrap();
        assert!(f <= prev + 1e-12, "d={d} f={f} prev={prev}");
        prev = f;
    }
    assert_eq!(prev, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chamfer_is_symmetric_and_scales_quadratically(
        dz in 0.01f64..0.2,
        s in 0.2f64..3.0,
        seed in 0u64..1000,
    ) {
        let a = shapes::builtin("letter-L").unwrap();
        let b = shapes::builtin("letter-T").unwrap().map_points(|p| p + nalgebra::Vector3::new(0.0, 0.0, dz)).unwrap();
        let ab = chamfer(&a, &b, 1500, seed).unwrap();
        let ba = chamfer(&b, &a, 1500, seed).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1e-300));
        let sa = a.map_points(|p| p * s).unwrap();
        let sb = b.map_points(|p| p * s).unwrap();
        let scaled = chamfer(&sa, &sb, 1500, seed).unwrap();
        prop_assert!((scaled - s * s * ab).abs() <= 1e-9 * scaled.max(1e-300));
    }

    #[test]
    fn iou_is_bounded_and_symmetric(
        pairs in proptest::collection::vec((0u8..2, 0u8..2), 0..200),
    ) {
        let (p, g): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let a = label_iou(&p, &g).unwrap();
        let b = label_iou(&g, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
        prop_assert_eq!(label_iou(&p, &p).unwrap(), 1.0);
    }
}
