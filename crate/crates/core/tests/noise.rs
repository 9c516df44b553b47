use occfield::noise::{add_spad_noise, NoiseOptions, SignalScale};
use occfield::render::TransientVolume;
use occfield::scene::{SceneConfig, WallScanGrid};
use proptest::prelude::*;

fn volume(nx: usize, n_bins: usize, f: impl Fn(usize) -> f64) -> TransientVolume {
    let cfg = SceneConfig {
        wall: WallScanGrid::new([0.7, 0.7], [nx, 1]),
        n_bins,
        ..SceneConfig::confocal_small()
    };
    let mut v = TransientVolume::zeros(&cfg);
    for (i, x) in v.data.iter_mut().enumerate() {
        *x = f(i);
    }
    v
}

#[test]
fn mean_converges_to_signal_plus_mean_base() {
    let v = volume(4, 16, |i| 0.5 + (i % 7) as f64);
    let opts = NoiseOptions {
        scale: SignalScale::Constant(2.0),
        base: [1.0, 3.0],
        per_bin_base: false,
    };
    let draws = 2000;
    let mut sum = vec![0.0; v.data.len()];
    for seed in 0..draws {
        let n = add_spad_noise(&v, &opts, seed).unwrap();
        for (s, x) in sum.iter_mut().zip(n.data.iter()) {
            *s += x;
        }
    }
    for (s, m) in sum.iter().zip(v.data.iter()) {
        let expected = 2.0 * m + 2.0;
        let mean = s / draws as f64;
        // Var = λ plus the spread of B, (b − a)²/12.
        let sd = ((expected + 4.0 / 12.0) / draws as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * sd, "mean {mean} expected {expected}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn counts_are_non_negative_integers_and_seeded(
        seed in any::<u64>(),
        peak in 1.0f64..500.0,
        a in 0.0f64..5.0,
        w in 0.0f64..5.0,
        per_bin in any::<bool>(),
    ) {
        let v = volume(3, 32, |i| ((i * 37) % 11) as f64 * 0.1);
        let opts = NoiseOptions { scale: SignalScale::PeakPhotons(peak), base: [a, a + w], per_bin_base: per_bin };
        let x = add_spad_noise(&v, &opts, seed).unwrap();
        prop_assert!(x.data.iter().all(|c| *c >= 0.0 && c.fract() == 0.0));
        prop_assert_eq!(&x, &add_spad_noise(&v, &opts, seed).unwrap());
    }
}
