use std::f64::consts::PI;

use ctf_dereverb::ctf::{
    self, ctf_all_bands, decimate_ctf, interpolate_ctf, synthesize_band, zeta_kernel,
    CrossBandKernels,
};
use ctf_dereverb::stft::{analysis_window, istft, stft};
use ctf_dereverb::synth::fft_convolve;
use ctf_dereverb::{CtfSet, Normalization, Sampling, StftConfig, WindowKind};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn decaying_rir(len: usize, seed: u64) -> Vec<f64> {
    let mut h = noise(len, seed);
    for (n, v) in h.iter_mut().enumerate() {
        *v *= (-(n as f64) / (len as f64 / 6.0)).exp();
    }
    h[0] = 1.0;
    h
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Literal evaluation of the STFT sum with the head padding convention.
fn direct_stft(x: &[f64], cfg: &StftConfig, p: usize, k: usize) -> Complex64 {
    let n = cfg.frame_length;
    let w = analysis_window(cfg.window, n);
    let start = (p * cfg.frame_step) as isize - cfg.head_padding() as isize;
    (0..n)
        .filter_map(|m| {
            let idx = start + m as isize;
            (idx >= 0 && (idx as usize) < x.len()).then(|| {
                x[idx as usize] * w[m] * Complex64::from_polar(1.0, -2.0 * PI * (k * m) as f64 / n as f64)
            })
        })
        .sum()
}

#[test]
fn stft_matches_direct_sum() {
    let cfg = StftConfig::new(32, 8, WindowKind::Hamming, 8000.0).unwrap();
    let x = noise(200, 3);
    let spec = stft(&x, &cfg).unwrap();
    assert_eq!(spec.frames(), (200 + cfg.head_padding()).div_ceil(8));
    for p in [0, 1, 5, spec.frames() - 1] {
        for k in [0, 3, 16, 31] {
            assert!((spec.get(p, k) - direct_stft(&x, &cfg, p, k)).norm() < 1e-10);
        }
    }
}

#[test]
fn tone_on_bin_dominates_by_sixty_db() {
    let cfg = StftConfig::new(256, 256, WindowKind::Rectangular, 16_000.0).unwrap();
    let k0 = 8;
    let x: Vec<f64> = (0..256 * 10)
        .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 256.0).cos())
        .collect();
    let spec = stft(&x, &cfg).unwrap();
    for p in 1..spec.frames() - 1 {
        let peak = spec.get(p, k0).norm();
        let other = (0..=128)
            .filter(|&k| k != k0)
            .map(|k| spec.get(p, k).norm())
            .fold(0.0, f64::max);
        assert!(20.0 * (peak / other.max(1e-300)).log10() >= 60.0);
    }
}

#[test]
fn rectangular_critical_parseval() {
    let cfg = StftConfig::new(64, 64, WindowKind::Rectangular, 8000.0).unwrap();
    let x = noise(64 * 6, 9);
    let spec = stft(&x, &cfg).unwrap();
    for p in 0..6 {
        let freq: f64 = spec.frame(p).iter().map(|v| v.norm_sqr()).sum();
        let time: f64 = x[p * 64..(p + 1) * 64].iter().map(|v| v * v).sum();
        assert!((freq - 64.0 * time).abs() <= 1e-9 * freq);
    }
}

fn interior_rel_err(x: &[f64], y: &[f64], margin: usize) -> f64 {
    let r = margin..x.len() - margin;
    let num: f64 = x[r.clone()].iter().zip(&y[r.clone()]).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = x[r].iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_any_cola_config(
        log_n in 3u32..9,
        step_div in prop::sample::select(vec![1usize, 2, 4, 8]),
        window in prop::sample::select(vec![WindowKind::Rectangular, WindowKind::Hamming, WindowKind::FlatTop]),
        seed in 0u64..1000,
    ) {
        let n = 1usize << log_n;
        let l = (n / step_div).max(1);
        let cfg = StftConfig::new(n, l, window, 16_000.0).unwrap();
        prop_assume!(cfg.windows().is_ok());
        let x = noise(6 * n + 13, seed);
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        prop_assert!(interior_rel_err(&x, &y, n) <= 1e-10);
    }

    #[test]
    fn stft_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..1000) {
        let cfg = StftConfig::new(64, 16, WindowKind::Hamming, 8000.0).unwrap();
        let x = noise(500, seed);
        let y = noise(500, seed + 7777);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let (sx, sy, sm) = (stft(&x, &cfg).unwrap(), stft(&y, &cfg).unwrap(), stft(&mix, &cfg).unwrap());
        for ((a, b), m) in sx.data().iter().zip(sy.data()).zip(sm.data()) {
            prop_assert!((a * alpha + b * beta - m).norm() < 1e-11);
        }
    }

    #[test]
    fn real_input_conjugate_symmetric(seed in 0u64..1000) {
        let cfg = StftConfig::new(32, 8, WindowKind::FlatTop, 8000.0).unwrap();
        let spec = stft(&noise(300, seed), &cfg).unwrap();
        for p in 0..spec.frames() {
            for k in 1..32 {
                prop_assert!((spec.get(p, 32 - k) - spec.get(p, k).conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn ctf_linear_in_rir(alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed in 0u64..1000) {
        let cfg = StftConfig::new(64, 16, WindowKind::Hamming, 8000.0).unwrap();
        let a = decaying_rir(150, seed);
        let b = decaying_rir(150, seed + 1);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let (ca, cb, cm) = (
            ctf_all_bands(&a, &cfg).unwrap(),
            ctf_all_bands(&b, &cfg).unwrap(),
            ctf_all_bands(&mix, &cfg).unwrap(),
        );
        for k in 0..cfg.num_bands() {
            for t in 0..ca[k].len() {
                prop_assert!((ca[k][t] * alpha + cb[k][t] * beta - cm[k][t]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn decimate_inverts_interpolate(taps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..9)) {
        let taps: Vec<Complex64> = taps.into_iter().map(|(r, i)| Complex64::new(r, i)).collect();
        let set = CtfSet {
            frame_length: 64,
            sampling: Sampling::Critical,
            noncausal: 0,
            normalization: Normalization::Raw,
            taps: vec![vec![taps.clone()]],
            degenerate: Vec::new(),
        };
        let up = interpolate_ctf(&set, 16).unwrap();
        prop_assert_eq!(up.tap_count(), 4 * (taps.len() - 1) + 1);
        for (q, t) in taps.iter().enumerate() {
            prop_assert_eq!(up.taps[0][0][4 * q], *t);
        }
        prop_assert_eq!(decimate_ctf(&up).unwrap(), set);
    }
}

#[test]
fn ctf_matches_brute_force_kernel_convolution() {
    let cfg = StftConfig::standard(16_000.0);
    let rir = decaying_rir(4096, 21);
    let fast = ctf_all_bands(&rir, &cfg).unwrap();
    let c = cfg.noncausal() as isize;
    let l = cfg.frame_step as isize;
    let n = cfg.frame_length as isize;
    for k in [0usize, 1, 100, 333, 512] {
        let zeta = zeta_kernel(&cfg, k, k).unwrap();
        let brute: Vec<Complex64> = (-c..fast[k].len() as isize - c)
            .map(|p| {
                (0..rir.len() as isize)
                    .filter_map(|m| {
                        let lag = p * l - m;
                        (lag.abs() < n).then(|| zeta[(lag + n - 1) as usize] * rir[m as usize])
                    })
                    .sum()
            })
            .collect();
        assert!(rel_err(&fast[k], &brute) < 1e-12, "band {k}");
    }
}

#[test]
fn full_cross_band_sum_reproduces_stft_of_convolution() {
    let cfg = StftConfig::standard(16_000.0);
    let rir = decaying_rir(4096, 5);
    let source = noise(16_000, 6);
    let mut reverberant = fft_convolve(&source, &rir);
    reverberant.truncate(source.len());
    let s_spec = stft(&source, &cfg).unwrap();
    let x_spec = stft(&reverberant, &cfg).unwrap();
    let kernels = CrossBandKernels::new(&cfg).unwrap();
    let c = cfg.noncausal();
    let interior = 2 * c..x_spec.frames() - 2 * c;
    for k in [0usize, 37, 256, 511] {
        let full = synthesize_band(&s_spec, &rir, &kernels, k, true);
        let ctf_only = synthesize_band(&s_spec, &rir, &kernels, k, false);
        let truth = x_spec.band(k);
        let full_err = rel_err(&full[interior.clone()], &truth[interior.clone()]);
        let ctf_err = rel_err(&ctf_only[interior.clone()], &truth[interior.clone()]);
        assert!(full_err <= 1e-8, "band {k}: {full_err:e}");
        assert!(ctf_err > full_err, "band {k}");
    }
}

#[test]
fn zeta_support_is_bounded() {
    let cfg = StftConfig::new(16, 4, WindowKind::Hamming, 8000.0).unwrap();
    let kernels = CrossBandKernels::new(&cfg).unwrap();
    for n in [-40isize, -16, 16, 30] {
        assert_eq!(kernels.zeta(2, 5, n), Complex64::new(0.0, 0.0));
    }
    assert!(kernels.zeta(3, 3, 0).im.abs() < 1e-15);
    assert!(kernels.zeta(3, 3, 0).re > 0.0);
}

#[test]
fn hamming_cross_band_energy_is_nonzero() {
    let cfg = StftConfig::new(64, 16, WindowKind::Hamming, 8000.0).unwrap();
    let rir = decaying_rir(300, 2);
    let off = ctf::cross_band_filter(&rir, &cfg, 10, 11).unwrap();
    assert!(off.iter().map(|v| v.norm_sqr()).sum::<f64>() > 0.0);
}
