//! Short-time Fourier transform with explicit analysis/synthesis windows.
//!
//! Frame `p` covers original samples `[p·L − pad, p·L − pad + N)` where
//! `pad = C·L` and `C = ⌈N/L⌉ − 1`; samples outside the signal are zero. The
//! frame count is `P = ⌈(len + pad)/L⌉`, so every sample of the signal is
//! covered by the full set of overlapping frames and reconstruction is exact
//! over the whole signal.
//!
//! The forward transform is the plain (unnormalized) DFT of each windowed
//! frame, phase-referenced to the frame start. The inverse transform is the
//! unnormalized inverse DFT followed by weighted overlap-add with the
//! synthesis window, so the `1/N` factor lives in the synthesis window.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hamming,
    FlatTop,
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rect" | "rectangular" | "boxcar" => Ok(WindowKind::Rectangular),
            "hamming" => Ok(WindowKind::Hamming),
            "flattop" | "flat_top" | "flat-top" => Ok(WindowKind::FlatTop),
            other => config(format!("unsupported window kind '{other}'")),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WindowKind::Rectangular => "rectangular",
            WindowKind::Hamming => "hamming",
            WindowKind::FlatTop => "flat_top",
        };
        f.write_str(s)
    }
}

// 5-term flat-top coefficients.
const FLAT_TOP: [f64; 5] = [
    0.215_578_95,
    0.416_631_58,
    0.277_263_158,
    0.083_578_947,
    0.006_947_368,
];

/// Samples an analysis window of length `n` in its DFT-even (periodic) form,
/// `w(m) = w(n − m)` for `m = 1..n−1`.
pub fn analysis_window(kind: WindowKind, n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..n)
        .map(|m| {
            let x = 2.0 * PI * m as f64 / nf;
            match kind {
                WindowKind::Rectangular => 1.0,
                WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
                WindowKind::FlatTop => {
                    FLAT_TOP[0] - FLAT_TOP[1] * x.cos() + FLAT_TOP[2] * (2.0 * x).cos()
                        - FLAT_TOP[3] * (3.0 * x).cos()
                        + FLAT_TOP[4] * (4.0 * x).cos()
                }
            }
        })
        .collect()
}

/// Analysis window together with its matching synthesis window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub analysis: Vec<f64>,
    pub synthesis: Vec<f64>,
}

/// Builds the analysis window and a synthesis window normalized per sample so
/// that `N · Σ_p w̃(n − pL) w(n − pL) = 1` for every `n`.
pub fn make_window(kind: WindowKind, n: usize, step: usize) -> Result<WindowPair> {
    if n < 2 {
        return config("window length must be at least 2");
    }
    if step == 0 || step > n {
        return config(format!("frame step {step} must lie in 1..={n}"));
    }
    let analysis = analysis_window(kind, n);
    let overlap = overlap_sum(&analysis, &analysis, step);
    if overlap.iter().any(|&v| v.abs() < 1e-12) {
        return config(format!(
            "{kind} window with N={n}, L={step} has a vanishing overlap sum"
        ));
    }
    let nf = n as f64;
    let synthesis = analysis
        .iter()
        .enumerate()
        .map(|(m, &w)| w / (nf * overlap[m % step]))
        .collect();
    Ok(WindowPair { analysis, synthesis })
}

// Σ_p a(r + pL)·b(r + pL) for r in 0..L.
fn overlap_sum(a: &[f64], b: &[f64], step: usize) -> Vec<f64> {
    let mut acc = vec![0.0; step];
    for (m, (x, y)) in a.iter().zip(b).enumerate() {
        acc[m % step] += x * y;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_length: usize,
    pub frame_step: usize,
    pub window: WindowKind,
    pub sample_rate: f64,
}

impl StftConfig {
    pub fn new(
        frame_length: usize,
        frame_step: usize,
        window: WindowKind,
        sample_rate: f64,
    ) -> Result<Self> {
        let cfg = StftConfig {
            frame_length,
            frame_step,
            window,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hamming, 64 ms frames and quarter-frame step at the given rate.
    pub fn standard(sample_rate: f64) -> Self {
        let n = ((0.064 * sample_rate).round() as usize).max(4) & !1;
        StftConfig {
            frame_length: n,
            frame_step: n / 4,
            window: WindowKind::Hamming,
            sample_rate,
        }
    }

    /// Parses `"N,L,window"`.
    pub fn parse(spec: &str, sample_rate: f64) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return config(format!("expected \"N,L,window\", got '{spec}'"));
        }
        let n = parts[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad frame length '{}'", parts[0])))?;
        let l = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("bad frame step '{}'", parts[1])))?;
        StftConfig::new(n, l, parts[2].parse()?, sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l) = (self.frame_length, self.frame_step);
        if n < 2 || n % 2 != 0 {
            return config(format!("frame length {n} must be even and at least 2"));
        }
        if l == 0 || l > n {
            return config(format!("frame step {l} must lie in 1..={n}"));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return config(format!("sample rate {} must be positive", self.sample_rate));
        }
        Ok(())
    }

    pub fn windows(&self) -> Result<WindowPair> {
        make_window(self.window, self.frame_length, self.frame_step)
    }

    /// Number of non-causal frame-domain filter taps, `⌈N/L⌉ − 1`.
    pub fn noncausal(&self) -> usize {
        crate::ctf::num_noncausal(self.frame_length, self.frame_step)
    }

    pub fn head_padding(&self) -> usize {
        self.noncausal() * self.frame_step
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        (signal_len + self.head_padding()).div_ceil(self.frame_step)
    }

    /// Bands `0..=N/2` carry all information for real signals.
    pub fn num_bands(&self) -> usize {
        self.frame_length / 2 + 1
    }

}

impl fmt::Display for StftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}",
            self.frame_length, self.frame_step, self.window
        )
    }
}

/// Complex time-frequency grid of one channel, `frames × N` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    frames: usize,
    config: StftConfig,
    channel: usize,
    signal_len: usize,
}

impl Spectrogram {
    pub fn new(
        data: Vec<Complex64>,
        config: StftConfig,
        channel: usize,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.frame_length;
        if data.is_empty() || data.len() % n != 0 {
            return input(format!(
                "spectrogram data length {} is not a positive multiple of {n}",
                data.len()
            ));
        }
        Ok(Spectrogram {
            frames: data.len() / n,
            data,
            config,
            channel,
            signal_len,
        })
    }

    /// Builds a full spectrogram from bands `0..=N/2`, filling the upper half
    /// by conjugate symmetry.
    pub fn from_half_bands(
        bands: &[Vec<Complex64>],
        config: StftConfig,
        channel: usize,
        signal_len: usize,
    ) -> Result<Self> {
        let n = config.frame_length;
        if bands.len() != config.num_bands() {
            return input(format!(
                "expected {} bands, got {}",
                config.num_bands(),
                bands.len()
            ));
        }
        let frames = bands[0].len();
        if frames == 0 || bands.iter().any(|b| b.len() != frames) {
            return input("bands must share a nonzero frame count");
        }
        let mut data = vec![Complex64::new(0.0, 0.0); frames * n];
        for (k, band) in bands.iter().enumerate() {
            for (p, &v) in band.iter().enumerate() {
                data[p * n + k] = v;
                if k != 0 && k != n / 2 {
                    data[p * n + n - k] = v.conj();
                }
            }
        }
        Spectrogram::new(data, config, channel, signal_len)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn frame(&self, p: usize) -> &[Complex64] {
        let n = self.config.frame_length;
        &self.data[p * n..(p + 1) * n]
    }

    pub fn get(&self, p: usize, k: usize) -> Complex64 {
        self.data[p * self.config.frame_length + k]
    }

    /// Time sequence of band `k` across all frames.
    pub fn band(&self, k: usize) -> Vec<Complex64> {
        let n = self.config.frame_length;
        (0..self.frames).map(|p| self.data[p * n + k]).collect()
    }

    pub fn half_bands(&self) -> Vec<Vec<Complex64>> {
        (0..self.config.num_bands()).map(|k| self.band(k)).collect()
    }

    pub fn scaled(&self, factor: Complex64) -> Spectrogram {
        Spectrogram {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Forward STFT of a real signal.
pub fn stft(signal: &[f64], config: &StftConfig) -> Result<Spectrogram> {
    stft_channel(signal, config, 0)
}

pub fn stft_channel(signal: &[f64], config: &StftConfig, channel: usize) -> Result<Spectrogram> {
    config.validate()?;
    if signal.is_empty() {
        return input("cannot transform an empty signal");
    }
    let n = config.frame_length;
    let l = config.frame_step;
    let pad = config.head_padding() as isize;
    let frames = config.num_frames(signal.len());
    let window = analysis_window(config.window, n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut data = vec![Complex64::new(0.0, 0.0); frames * n];
    for (p, frame) in data.chunks_exact_mut(n).enumerate() {
        let start = (p * l) as isize - pad;
        for (m, slot) in frame.iter_mut().enumerate() {
            let idx = start + m as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                *slot = Complex64::new(signal[idx as usize] * window[m], 0.0);
            }
        }
    }
    fft.process(&mut data);
    Spectrogram::new(data, *config, channel, signal.len())
}

/// Inverse STFT by weighted overlap-add; returns `signal_len` samples.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let config = spec.config();
    let n = config.frame_length;
    let l = config.frame_step;
    let pad = config.head_padding();
    let windows = config.windows()?;
    if spec.data().len() != spec.frames() * n {
        return input("spectrogram shape does not match its configuration");
    }
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut buf = spec.data().to_vec();
    ifft.process(&mut buf);

    let total = (spec.frames() - 1) * l + n;
    let mut acc = vec![0.0; total.max(pad + spec.signal_len())];
    for (p, frame) in buf.chunks_exact(n).enumerate() {
        let start = p * l;
        for (m, v) in frame.iter().enumerate() {
            acc[start + m] += v.re * windows.synthesis[m];
        }
    }
    Ok(acc[pad..pad + spec.signal_len()].to_vec())
}

/// Deviation from constant overlap-add when the synthesis window is the
/// analysis window under a single global scale. Per-sample normalization
/// in [`make_window`] removes this deviation; the residual tells how much
/// correction that normalization applies.
pub fn cola_residual(config: &StftConfig) -> Result<f64> {
    config.validate()?;
    let w = analysis_window(config.window, config.frame_length);
    let overlap = overlap_sum(&w, &w, config.frame_step);
    let mean = overlap.iter().sum::<f64>() / overlap.len() as f64;
    if mean <= 0.0 {
        return crate::error::config("window has zero energy");
    }
    Ok(overlap
        .iter()
        .map(|v| (v / mean - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Overlap-add deviation of the actual analysis/synthesis pair in use.
pub fn pair_residual(config: &StftConfig) -> Result<f64> {
    let pair = config.windows()?;
    let nf = config.frame_length as f64;
    Ok(overlap_sum(&pair.analysis, &pair.synthesis, config.frame_step)
        .iter()
        .map(|v| (nf * v - 1.0).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, l: usize, w: WindowKind) -> StftConfig {
        StftConfig::new(n, l, w, 16_000.0).unwrap()
    }

    #[test]
    fn rectangular_critical_pair() {
        let pair = make_window(WindowKind::Rectangular, 4, 4).unwrap();
        assert_eq!(pair.analysis, vec![1.0; 4]);
        assert_eq!(pair.synthesis, vec![0.25; 4]);
    }

    #[test]
    fn hamming_three_taps_is_valid_and_periodic_symmetric() {
        let pair = make_window(WindowKind::Hamming, 3, 1).unwrap();
        assert_eq!(pair.analysis.len(), 3);
        assert!((pair.analysis[0] - 0.08).abs() < 1e-12);
        assert!((pair.analysis[1] - pair.analysis[2]).abs() < 1e-12);
    }

    #[test]
    fn window_rejects_bad_lengths() {
        assert!(make_window(WindowKind::Hamming, 1, 1).is_err());
        assert!(make_window(WindowKind::Hamming, 8, 9).is_err());
        assert!("kaiser".parse::<WindowKind>().is_err());
    }

    #[test]
    fn cola_residuals() {
        assert!(cola_residual(&cfg(1024, 256, WindowKind::Hamming)).unwrap() <= 1e-10);
        assert!(cola_residual(&cfg(4, 4, WindowKind::Rectangular)).unwrap() <= 1e-15);
        assert!(cola_residual(&cfg(1024, 1024, WindowKind::Hamming)).unwrap() > 0.01);
        for w in [WindowKind::Hamming, WindowKind::FlatTop, WindowKind::Rectangular] {
            assert!(pair_residual(&cfg(1024, 256, w)).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn impulse_gives_flat_frame() {
        let c = cfg(4, 4, WindowKind::Rectangular);
        let s = stft(&[1.0, 0.0, 0.0, 0.0, 0.0], &c).unwrap();
        for k in 0..4 {
            assert!((s.get(0, k) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_signal_and_empty_signal() {
        let c = cfg(16, 4, WindowKind::Hamming);
        let s = stft(&[0.0; 64], &c).unwrap();
        assert!(s.data().iter().all(|v| v.norm() == 0.0));
        assert!(istft(&s).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(stft(&[], &c), Err(Error::Input(_))));
    }

    #[test]
    fn frame_count_formula() {
        let c = cfg(1024, 256, WindowKind::Hamming);
        assert_eq!(c.head_padding(), 768);
        assert_eq!(c.num_frames(64_000), (64_000 + 768usize).div_ceil(256));
    }

    #[test]
    fn tone_is_concentrated() {
        let c = cfg(256, 256, WindowKind::Rectangular);
        let k0 = 8;
        let x: Vec<f64> = (0..256 * 8)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 256.0).cos())
            .collect();
        let s = stft(&x, &c).unwrap();
        for p in 1..s.frames() - 1 {
            let peak = s.get(p, k0).norm();
            for k in (0..=128).filter(|&k| k != k0) {
                let ratio_db = 20.0 * (peak / s.get(p, k).norm().max(1e-300)).log10();
                assert!(ratio_db >= 60.0, "frame {p} band {k}: {ratio_db} dB");
            }
        }
    }

    #[test]
    fn scaling_frames_scales_output() {
        let c = cfg(64, 16, WindowKind::Hamming);
        let x: Vec<f64> = (0..500).map(|n| ((n * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let s = stft(&x, &c).unwrap();
        let y = istft(&s.scaled(Complex64::new(2.0, 0.0))).unwrap();
        for n in 0..x.len() {
            assert!((y[n] - 2.0 * x[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_cli_triplet() {
        let c = StftConfig::parse("1024,256,hamming", 16_000.0).unwrap();
        assert_eq!(c, StftConfig::standard(16_000.0));
        assert!(StftConfig::parse("1023,256,hamming", 16_000.0).is_err());
        assert!(StftConfig::parse("1024,256", 16_000.0).is_err());
    }
}
