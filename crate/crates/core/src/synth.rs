//! Seeded synthetic data: room-like impulse responses, exact sub-band
//! convolutive systems, speech-like sources, coloured noise and early
//! references. Every generator is a pure function of its spec and seed.

use std::f64::consts::{LN_10, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};
use crate::inverse::{NoiseProfile, NoiseSource};
use crate::stft::{stft, StftConfig};

/// Reverberation time at which the tail carries the same energy as the
/// direct tap.
pub const UNIT_DRR_T60: f64 = 0.5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRirSpec {
    pub t60: f64,
    pub sample_rate: f64,
    pub length: usize,
    pub direct_delay: usize,
    pub seed: u64,
}

impl SynthRirSpec {
    /// Length `⌈fs·T60⌉`, no delay.
    pub fn new(t60: f64, sample_rate: f64, seed: u64) -> Self {
        SynthRirSpec {
            t60,
            sample_rate,
            length: (t60 * sample_rate).ceil() as usize,
            direct_delay: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t60 > 0.0) || !self.t60.is_finite() {
            return config(format!("T60 {} must be positive", self.t60));
        }
        if !(self.sample_rate > 0.0) {
            return config("sample rate must be positive");
        }
        if (self.length as f64) < self.sample_rate * self.t60 * 0.5 {
            return config(format!(
                "rir length {} shorter than half the reverberation time",
                self.length
            ));
        }
        if self.direct_delay >= self.length {
            return config("direct delay beyond the rir length");
        }
        Ok(())
    }
}

/// Exponentially decaying Gaussian tail behind a unit direct tap.
///
/// The tail variance is `6 ln10 / (fs · 0.5 s)` so the reverberant energy
/// equals `T60 / 0.5 s` times the direct energy.
pub fn synth_rir(spec: &SynthRirSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, 0);
    let fs = spec.sample_rate;
    let sigma = (6.0 * LN_10 / (fs * UNIT_DRR_T60)).sqrt();
    let decay = -3.0 * LN_10 / (fs * spec.t60);
    let mut h = vec![0.0; spec.length];
    for (i, v) in h.iter_mut().enumerate().skip(spec.direct_delay) {
        let g: f64 = rng.sample(StandardNormal);
        let n = (i - spec.direct_delay) as f64;
        *v = sigma * g * (decay * n).exp();
    }
    h[spec.direct_delay] = 1.0;
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubbandSystemSpec {
    pub frames: usize,
    pub taps: usize,
    pub channels: usize,
    /// Tap spacing on the frame grid.
    pub stride: usize,
    pub seed: u64,
    /// Per-channel SNR of added complex white noise; `None` is noise-free.
    pub snr_db: Option<f64>,
}

impl SubbandSystemSpec {
    pub fn new(frames: usize, taps: usize, channels: usize, seed: u64) -> Self {
        SubbandSystemSpec {
            frames,
            taps,
            channels,
            stride: 4,
            seed,
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return config("sub-band system needs at least 2 channels");
        }
        if self.taps == 0 || self.stride == 0 {
            return config("taps and stride must be positive");
        }
        if self.frames < self.stride * (self.taps - 1) + 1 {
            return config(format!(
                "{} frames cannot hold {} taps at stride {}",
                self.frames, self.taps, self.stride
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SubbandSystem {
    pub latent: Vec<Complex64>,
    /// `[channel][tap]`
    pub filters: Vec<Vec<Complex64>>,
    /// `[channel][frame]`, noisy when an SNR was requested.
    pub signals: Vec<Vec<Complex64>>,
    pub clean: Vec<Vec<Complex64>>,
}

impl SubbandSystem {
    /// Filters divided by the first tap of channel 0.
    pub fn normalized_filters(&self) -> Vec<Vec<Complex64>> {
        let pivot = self.filters[0][0];
        self.filters
            .iter()
            .map(|f| f.iter().map(|v| v / pivot).collect())
            .collect()
    }
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Channel `m` observes `x_p = Σ_q c_m[q] u_{p − stride·q}`.
pub fn synth_subband_system(spec: &SubbandSystemSpec) -> Result<SubbandSystem> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, 1);
    let latent: Vec<Complex64> = (0..spec.frames).map(|_| complex_normal(&mut rng)).collect();
    let mut filters: Vec<Vec<Complex64>> = (0..spec.channels)
        .map(|_| (0..spec.taps).map(|_| complex_normal(&mut rng)).collect())
        .collect();
    if filters[0][0].norm() < 0.1 {
        filters[0][0] = Complex64::new(1.0, 0.0);
    }
    let clean: Vec<Vec<Complex64>> = filters
        .iter()
        .map(|h| {
            (0..spec.frames)
                .map(|p| {
                    h.iter()
                        .enumerate()
                        .take_while(|(q, _)| spec.stride * q <= p)
                        .map(|(q, hq)| hq * latent[p - spec.stride * q])
                        .sum()
                })
                .collect()
        })
        .collect();
    let signals = match spec.snr_db {
        None => clean.clone(),
        Some(snr) if snr.is_infinite() && snr > 0.0 => clean.clone(),
        Some(snr) => {
            let mut noise_rng = rng_for(spec.seed, 2);
            clean
                .iter()
                .map(|x| {
                    let power = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
                    let scale = (power / 10f64.powf(snr / 10.0)).sqrt();
                    x.iter()
                        .map(|v| v + complex_normal(&mut noise_rng) * scale)
                        .collect()
                })
                .collect()
        }
    };
    Ok(SubbandSystem {
        latent,
        filters,
        signals,
        clean,
    })
}

/// Linear convolution via FFT, full length `a.len() + b.len() − 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let lift = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut fa = lift(a);
    let mut fb = lift(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|v| v.re / n as f64).collect()
}

/// Mean square of a signal.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Corner frequency above which the noise falls by 6 dB per octave.
pub const NOISE_TILT_HZ: f64 = 500.0;
/// Length of the pure-noise segment used for PSD estimation.
pub const NOISE_SEGMENT_S: f64 = 1.0;

fn tilted_noise(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = (-2.0 * PI * NOISE_TILT_HZ / fs).exp();
    let warm = (10.0 * fs / NOISE_TILT_HZ) as usize;
    let mut y = 0.0;
    let mut out = Vec::with_capacity(len);
    for i in 0..len + warm {
        let w: f64 = StandardNormal.sample(rng);
        y = a * y + (1.0 - a) * w;
        if i >= warm {
            out.push(y);
        }
    }
    out
}

/// Adds independent speech-shaped noise to every channel at the given
/// per-channel SNR. The PSD is estimated from a separate 1 s segment of the
/// same noise processes.
pub fn add_noise(
    signals: &[Vec<f64>],
    snr_db: f64,
    seed: u64,
    stft_config: &StftConfig,
) -> Result<(Vec<Vec<f64>>, NoiseProfile)> {
    let bands = stft_config.num_bands();
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok((
            signals.to_vec(),
            NoiseProfile::zeros(bands, signals.len()),
        ));
    }
    if snr_db.is_nan() {
        return input("SNR is NaN");
    }
    let fs = stft_config.sample_rate;
    let seg = ((NOISE_SEGMENT_S * fs) as usize).max(stft_config.frame_length * 2);
    let mut noisy = Vec::with_capacity(signals.len());
    let mut psd = vec![vec![0.0; signals.len()]; bands];
    for (m, x) in signals.iter().enumerate() {
        let mut rng = rng_for(seed, 100 + m as u64);
        let raw = tilted_noise(seg + x.len(), fs, &mut rng);
        let (pure, mix) = raw.split_at(seg);
        let sp = power(x);
        let np = power(mix);
        let scale = if np > 0.0 && sp > 0.0 {
            (sp / (np * 10f64.powf(snr_db / 10.0))).sqrt()
        } else {
            0.0
        };
        noisy.push(x.iter().zip(mix).map(|(s, n)| s + scale * n).collect());
        let pure: Vec<f64> = pure.iter().map(|v| v * scale).collect();
        for (k, v) in estimate_psd(&pure, stft_config)?.into_iter().enumerate() {
            psd[k][m] = v;
        }
    }
    Ok((
        noisy,
        NoiseProfile {
            psd,
            source: NoiseSource::PureNoiseSegment,
        },
    ))
}

/// Per-band periodogram average over frames lying fully inside the signal.
pub fn estimate_psd(noise: &[f64], stft_config: &StftConfig) -> Result<Vec<f64>> {
    let spec = stft(noise, stft_config)?;
    let pad = stft_config.head_padding();
    let (n, l) = (stft_config.frame_length, stft_config.frame_step);
    let inner: Vec<usize> = (0..spec.frames())
        .filter(|&p| p * l >= pad && p * l - pad + n <= noise.len())
        .collect();
    if inner.is_empty() {
        return input("noise segment shorter than one frame");
    }
    Ok((0..stft_config.num_bands())
        .map(|k| inner.iter().map(|&p| spec.get(p, k).norm_sqr()).sum::<f64>() / inner.len() as f64)
        .collect())
}

/// Index of the direct path: the largest-magnitude tap.
pub fn direct_path_index(rir: &[f64]) -> usize {
    rir.iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map_or(0, |(i, _)| i)
}

/// Source convolved with the `n` taps of the rir starting at the direct path
/// (delay kept), truncated to the source length.
pub fn early_reference(source: &[f64], rir: &[f64], n: usize) -> Result<Vec<f64>> {
    if rir.is_empty() {
        return input("empty rir");
    }
    let d = direct_path_index(rir);
    let end = rir.len().min(d + n);
    let mut early = vec![0.0; end];
    early[d..].copy_from_slice(&rir[d..end]);
    let mut out = fft_convolve(source, &early);
    out.truncate(source.len());
    Ok(out)
}

/// Microphone signals `source ⋆ rir`, truncated to the source length.
pub fn reverberate(source: &[f64], rir: &[f64]) -> Vec<f64> {
    let mut y = fft_convolve(source, rir);
    y.truncate(source.len());
    y
}

/// Syllable rate of the speech-like source.
pub const SYLLABLE_RATE_HZ: f64 = 4.0;

/// Speech-like signal: syllables at 4 Hz, each voiced (harmonic, gliding
/// pitch) or unvoiced (high-passed noise) under a raised-sine envelope, with
/// occasional pauses. RMS 0.1.
pub fn synth_source(duration: f64, sample_rate: f64, seed: u64) -> Result<Vec<f64>> {
    if !(duration > 0.0) || !(sample_rate > 0.0) {
        return input("duration and sample rate must be positive");
    }
    let len = (duration * sample_rate).round() as usize;
    let syl = (sample_rate / SYLLABLE_RATE_HZ).round() as usize;
    let mut rng = rng_for(seed, 3);
    let mut out = vec![0.0; len];
    let top = (0.25 * sample_rate).min(4000.0);
    let mut start = 0;
    while start < len {
        let dur = ((syl as f64) * rng.gen_range(0.7..1.3)) as usize;
        let end = (start + dur).min(len);
        let kind: f64 = rng.gen();
        let gain = rng.gen_range(0.3..1.0);
        let seg = &mut out[start..end];
        let span = dur as f64;
        if kind < 0.65 {
            let f0 = rng.gen_range(90.0..220.0);
            let glide = rng.gen_range(-0.2..0.2);
            let harmonics = (top / f0) as usize;
            let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            // formant-like emphasis around a random resonance
            let formant = rng.gen_range(300.0..1200.0);
            let mut phase = 0.0;
            for (i, v) in seg.iter_mut().enumerate() {
                let t = i as f64 / span;
                let f = f0 * (1.0 + glide * t);
                phase += 2.0 * PI * f / sample_rate;
                let env = (PI * t).sin().powi(2);
                let mut acc = 0.0;
                for (h, ph) in phases.iter().enumerate() {
                    let fh = f * (h + 1) as f64;
                    let amp = 1.0 / (h + 1) as f64 * (1.0 + 2.0 * (-((fh - formant) / 200.0).powi(2)).exp());
                    acc += amp * ((h + 1) as f64 * phase + ph).sin();
                }
                *v = gain * env * acc;
            }
        } else if kind < 0.9 {
            let mut prev = 0.0;
            for (i, v) in seg.iter_mut().enumerate() {
                let t = i as f64 / span;
                let w: f64 = StandardNormal.sample(&mut rng);
                let env = (PI * t).sin().powi(2);
                *v = 0.5 * gain * env * (w - prev);
                prev = w;
            }
        }
        start = end;
    }
    let rms = power(&out).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v *= 0.1 / rms;
        }
    }
    Ok(out)
}

/// Multichannel reverberant scene around one speech-like source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub t60: f64,
    pub channels: usize,
    pub duration: f64,
    pub sample_rate: f64,
    /// `None` or `+∞` for noise-free.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(t60: f64, channels: usize, seed: u64) -> Self {
        SceneSpec {
            t60,
            channels,
            duration: 4.0,
            sample_rate: 16_000.0,
            snr_db: None,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub source: Vec<f64>,
    pub rirs: Vec<Vec<f64>>,
    /// Possibly noisy microphone signals.
    pub mics: Vec<Vec<f64>>,
    pub noise: NoiseProfile,
    /// Source through the first `N` taps (from the direct path) of channel 0.
    pub early_reference: Vec<f64>,
}

/// Maximum random direct-path delay in samples.
pub const MAX_DIRECT_DELAY: usize = 16;

pub fn synth_scene(spec: &SceneSpec, stft_config: &StftConfig) -> Result<Scene> {
    if spec.channels == 0 {
        return config("scene needs at least one channel");
    }
    let source = synth_source(spec.duration, spec.sample_rate, spec.seed)?;
    let mut delay_rng = rng_for(spec.seed, 4);
    let rirs: Vec<Vec<f64>> = (0..spec.channels)
        .map(|m| {
            let mut rs = SynthRirSpec::new(
                spec.t60,
                spec.sample_rate,
                spec.seed.wrapping_mul(1_000_003).wrapping_add(m as u64),
            );
            rs.direct_delay = delay_rng.gen_range(0..MAX_DIRECT_DELAY);
            rs.length += rs.direct_delay;
            synth_rir(&rs)
        })
        .collect::<Result<_>>()?;
    let clean: Vec<Vec<f64>> = rirs.iter().map(|h| reverberate(&source, h)).collect();
    let (mics, noise) = add_noise(
        &clean,
        spec.snr_db.unwrap_or(f64::INFINITY),
        spec.seed.wrapping_add(0x9e37_79b9),
        stft_config,
    )?;
    let early_reference = early_reference(&source, &rirs[0], stft_config.frame_length)?;
    Ok(Scene {
        source,
        rirs,
        mics,
        noise,
        early_reference,
    })
}
