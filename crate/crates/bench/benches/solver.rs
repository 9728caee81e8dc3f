use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ctf_dereverb::inverse::dereverb_band;
use ctf_dereverb::InverseOptions;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn band(frames: usize, taps: usize) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cn = || Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    let source: Vec<Complex64> = (0..frames).map(|_| cn() * cn().norm_sqr()).collect();
    let filters: Vec<Vec<Complex64>> = (0..2)
        .map(|_| (0..taps).map(|q| cn() * 0.7f64.powi(q as i32)).collect())
        .collect();
    let signals = filters
        .iter()
        .map(|a| {
            (0..frames)
                .map(|p| (0..taps.min(p + 1)).map(|q| a[q] * source[p - q]).sum())
                .collect()
        })
        .collect();
    (signals, filters)
}

fn per_band(c: &mut Criterion) {
    let mut group = c.benchmark_group("band solve");
    group.sample_size(10);
    for frames in [128, 256] {
        let (signals, filters) = band(frames, 8);
        group.bench_function(format!("{frames} frames"), |b| {
            b.iter(|| {
                dereverb_band(0, black_box(&signals), &filters, &[1e-3, 1e-3], &InverseOptions::default())
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, per_band);
criterion_main!(benches);
