use nasp_core::fourier::{
    adjoint, adjoint_f64, data_consistency_error, fft2c, forward, make_coil_maps, make_mask,
    make_pyramid, zero_filled, Acceleration, CoilSensitivities, KSpaceMeasurement, MaskPattern,
    SamplingMask,
};
use nasp_core::metrics::{psnr, ssim};
use nasp_core::dataio::{gen_phantom, Contrast, PhantomSpec};
use nasp_core::ComplexImage;
use num_complex::{Complex32, Complex64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ComplexImage {
    ComplexImage::from_fn(h, w, |_, _| Complex32::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .unwrap()
}

fn random_kspace(rng: &mut ChaCha8Rng, mask: &SamplingMask, coils: usize) -> KSpaceMeasurement {
    let n = mask.height * mask.width;
    let values = (0..coils)
        .map(|_| {
            (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    KSpaceMeasurement::new(mask.clone(), values).unwrap()
}

/// Direct O(N^2) centered unitary DFT.
fn naive_dft2c(x: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let tau = std::f64::consts::TAU;
    let (ch, cw) = (h as isize / 2, w as isize / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let (ku, kv) = (u as isize - ch, v as isize - cw);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let (yi, xj) = (i as isize - ch, j as isize - cw);
                    let ph = -tau * ((ku * yi) as f64 / h as f64 + (kv * xj) as f64 / w as f64);
                    acc += x[i * w + j] * Complex64::from_polar(1.0, ph);
                }
            }
            out[u * w + v] = acc / ((h * w) as f64).sqrt();
        }
    }
    out
}

#[test]
fn fft_matches_naive_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (h, w) in [(8, 8), (8, 12), (10, 16)] {
        let x: Vec<Complex64> =
            (0..h * w).map(|_| Complex64::new(rng.gen(), rng.gen())).collect();
        let mut fast = x.clone();
        fft2c(&mut fast, h, w, false);
        let slow = naive_dft2c(&x, h, w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10, "{h}x{w}: {a} vs {b}");
        }
    }
}

#[test]
fn adjointness_100_trials_all_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for pattern in MaskPattern::ALL {
        for acc in [Acceleration::R2, Acceleration::R32] {
            for trial in 0..100u32 {
                let coils = 1 + (trial as usize % 4);
                let sens = make_coil_maps(coils, (32, 32), trial as u64).unwrap();
                let mask = make_mask(pattern, acc, (32, 32), trial).unwrap();
                let x = random_image(&mut rng, 32, 32);
                let y = random_kspace(&mut rng, &mask, coils);
                let lhs = forward(&x, &sens, &mask).unwrap().inner(&y);
                let ehy = adjoint_f64(&y, &sens).unwrap();
                let rhs: Complex64 = x
                    .data()
                    .iter()
                    .zip(&ehy)
                    .map(|(a, b)| Complex64::new(a.re as f64, a.im as f64) * b.conj())
                    .sum();
                let bound = 1e-5 * x.norm_l2() * y.norm_sqr().sqrt();
                assert!((lhs - rhs).norm() <= bound, "{pattern} {acc:?} trial {trial}");
            }
        }
    }
}

#[test]
fn fs_round_trip_multicoil() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_image(&mut rng, 32, 48);
    let sens = make_coil_maps(4, (32, 48), 3).unwrap();
    let mask = SamplingMask::full(MaskPattern::GaussianVd, 32, 48, 0).unwrap();
    let back = adjoint(&forward(&x, &sens, &mask).unwrap(), &sens).unwrap();
    for (a, b) in back.data().iter().zip(x.data()) {
        assert!((a - b).norm() < 1e-5);
    }
}

#[test]
fn data_consistency_matches_elementwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sens = make_coil_maps(3, (16, 16), 1).unwrap();
    let mask = make_mask(MaskPattern::Radial, Acceleration::R4, (16, 16), 2).unwrap();
    let x = random_image(&mut rng, 16, 16);
    let y = random_kspace(&mut rng, &mask, 3);
    let ex = forward(&x, &sens, &mask).unwrap();
    let mut brute = 0.0;
    for c in 0..3 {
        for k in 0..256 {
            if mask.selected()[k] == 1 {
                brute += (ex.values()[c][k] - y.values()[c][k]).norm_sqr();
            }
        }
    }
    let dc = data_consistency_error(&x, &y, &sens).unwrap();
    assert!((dc - brute).abs() < 1e-9 * brute.max(1.0));
    assert!(data_consistency_error(&x, &ex, &sens).unwrap() < 1e-10);
    let zero = ComplexImage::zeros(16, 16).unwrap();
    assert!((data_consistency_error(&zero, &y, &sens).unwrap() - y.norm_sqr()).abs() < 1e-9);
}

#[test]
fn zero_filled_r32_is_worse_than_fs_on_phantoms() {
    let sens = CoilSensitivities::identity(64, 64).unwrap();
    for seed in 0..10 {
        let x = gen_phantom(&PhantomSpec::new(64, 64, Contrast::ALL[seed % 3], seed as u64)).unwrap();
        let full = SamplingMask::full(MaskPattern::CartesianY, 64, 64, 0).unwrap();
        let r32 = make_mask(MaskPattern::CartesianY, Acceleration::R32, (64, 64), seed as u32).unwrap();
        let zf_full = zero_filled(&forward(&x, &sens, &full).unwrap(), &sens).unwrap();
        let zf_32 = zero_filled(&forward(&x, &sens, &r32).unwrap(), &sens).unwrap();
        let (m, mf, m32) = (x.magnitude(), zf_full.magnitude(), zf_32.magnitude());
        assert!((ssim(&mf, &m).unwrap() - 1.0).abs() < 1e-4);
        assert!(psnr(&m32, &m).unwrap() < psnr(&mf, &m).unwrap());
    }
}

#[test]
fn coil_maps_deterministic_and_normalized() {
    let a = make_coil_maps(4, (24, 16), 9).unwrap();
    let b = make_coil_maps(4, (24, 16), 9).unwrap();
    assert_eq!(a.maps(), b.maps());
    for k in 0..24 * 16 {
        let s: f64 = a.maps().iter().map(|m| m[k].norm_sqr()).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    assert!(make_coil_maps(0, (16, 16), 0).is_err());
}

fn pattern_strategy() -> impl Strategy<Value = MaskPattern> {
    prop::sample::select(MaskPattern::ALL.to_vec())
}

fn accel_strategy() -> impl Strategy<Value = Acceleration> {
    prop::sample::select(Acceleration::SCHEDULE.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_hit_exact_budget(
        pattern in pattern_strategy(),
        acc in accel_strategy(),
        side in prop::sample::select(vec![32usize, 64]),
        seed in any::<u32>(),
    ) {
        let m = make_mask(pattern, acc, (side, side), seed).unwrap();
        let r = acc.factor() as usize;
        let expected = ((side * side) as f64 / r as f64).round() as usize;
        prop_assert_eq!(m.count(), expected);
        prop_assert_eq!(m, make_mask(pattern, acc, (side, side), seed).unwrap());
    }

    #[test]
    fn pyramids_are_nested(pattern in pattern_strategy(), seed in any::<u32>()) {
        let p = make_pyramid(pattern, (64, 64), seed, false).unwrap();
        prop_assert!(p.is_nested());
        for (k, m) in p.masks.iter().enumerate() {
            prop_assert_eq!(m.count(), 4096 >> (5 - k));
        }
    }

    #[test]
    fn cartesian_masks_are_line_constant(seed in any::<u32>(), acc in accel_strategy()) {
        let x = make_mask(MaskPattern::CartesianX, acc, (32, 64), seed).unwrap();
        let y = make_mask(MaskPattern::CartesianY, acc, (32, 64), seed).unwrap();
        for i in 0..32 {
            for j in 0..64 {
                prop_assert_eq!(x.is_selected(i, j), x.is_selected(i, 0));
                prop_assert_eq!(y.is_selected(i, j), y.is_selected(0, j));
            }
        }
    }

    #[test]
    fn full_mask_forward_is_isometric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_image(&mut rng, 16, 16);
        let sens = CoilSensitivities::identity(16, 16).unwrap();
        let mask = SamplingMask::full(MaskPattern::Radial, 16, 16, 0).unwrap();
        let y = forward(&x, &sens, &mask).unwrap();
        prop_assert!((y.norm_sqr().sqrt() - x.norm_l2()).abs() < 1e-6);
    }
}

#[test]
fn gaussian_vd_concentrates_near_center() {
    let mean_radius = |m: &SamplingMask| {
        let (h, w) = m.shape();
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                if m.is_selected(i, j) {
                    s += ((i as f64 - 32.0).powi(2) + (j as f64 - 32.0).powi(2)).sqrt();
                }
            }
        }
        s / m.count() as f64
    };
    let vd = make_mask(MaskPattern::GaussianVd, Acceleration::R8, (64, 64), 7).unwrap();
    assert_eq!(vd.count(), 512);
    // uniform-random masks with the same budget, 100 seeds
    let mut uniform = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, 4096, 512);
        let mut sel = vec![0u8; 4096];
        for k in picks {
            sel[k] = 1;
        }
        let m = SamplingMask::from_selected(MaskPattern::GaussianVd, Acceleration::R8, 64, 64, 0, sel)
            .unwrap();
        uniform += mean_radius(&m) / 100.0;
    }
    assert!(mean_radius(&vd) < uniform, "{} vs {uniform}", mean_radius(&vd));
}

#[test]
fn independent_pyramid_levels_use_standalone_masks() {
    let p = make_pyramid(MaskPattern::GaussianVd, (32, 32), 40, true).unwrap();
    for (k, &acc) in Acceleration::SCHEDULE.iter().enumerate().take(5) {
        assert_eq!(p.masks[k], make_mask(MaskPattern::GaussianVd, acc, (32, 32), 40 + k as u32).unwrap());
    }
}
