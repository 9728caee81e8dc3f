use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ctf_dereverb::stft::{istft, stft};
use ctf_dereverb::synth::synth_source;
use ctf_dereverb::StftConfig;

fn round_trip(c: &mut Criterion) {
    let cfg = StftConfig::standard(16_000.0);
    let x = synth_source(4.0, 16_000.0, 1).unwrap();
    c.bench_function("stft 4 s", |b| b.iter(|| stft(black_box(&x), &cfg).unwrap()));
    let spec = stft(&x, &cfg).unwrap();
    c.bench_function("istft 4 s", |b| b.iter(|| istft(black_box(&spec)).unwrap()));
}

criterion_group!(benches, round_trip);
criterion_main!(benches);
