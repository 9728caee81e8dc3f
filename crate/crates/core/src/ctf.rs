//! STFT-domain filters: cross-band kernels, band-to-band (CTF) taps computed
//! from a time-domain impulse response, conversion between oversampled and
//! critically sampled CTFs, and window/aliasing diagnostics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::stft::{Spectrogram, StftConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `⌈N/L⌉ − 1`.
pub fn num_noncausal(frame_length: usize, frame_step: usize) -> usize {
    assert!(
        frame_step >= 1 && frame_step <= frame_length,
        "frame step {frame_step} outside 1..={frame_length}"
    );
    frame_length.div_ceil(frame_step) - 1
}

/// Number of causal oversampled taps covering the full support of a
/// length-`rir_len` response: `⌈(len + N − 1)/L⌉`.
pub fn num_causal(rir_len: usize, config: &StftConfig) -> usize {
    (rir_len + config.frame_length - 1).div_ceil(config.frame_step)
}

/// Cross-band kernel `ζ_{k,k'}(n)` sampled at `n = −(N−1)..=N−1`; index `i`
/// holds `n = i − (N − 1)`.
pub fn zeta_kernel(config: &StftConfig, k: usize, k2: usize) -> Result<Vec<Complex64>> {
    let n_len = config.frame_length;
    if k >= n_len || k2 >= n_len {
        return input(format!("band indices ({k}, {k2}) must be below {n_len}"));
    }
    let pair = config.windows()?;
    let nf = n_len as f64;
    let dk = k as f64 - k2 as f64;
    let offset = n_len as isize - 1;
    Ok((-offset..=offset)
        .map(|n| {
            let mut acc = ZERO;
            for m in 0..n_len as isize {
                let j = n + m;
                if j < 0 || j >= n_len as isize {
                    continue;
                }
                let phase = -2.0 * PI * m as f64 * dk / nf;
                acc += Complex64::from_polar(
                    pair.analysis[m as usize] * pair.synthesis[j as usize],
                    phase,
                );
            }
            acc * Complex64::from_polar(1.0, 2.0 * PI * k2 as f64 * n as f64 / nf)
        })
        .collect())
}

/// Real band-to-band kernel `Σ_m w̃(m) w(n + m)` at `n = −(N−1)..=N−1`.
fn base_kernel(config: &StftConfig) -> Result<Vec<f64>> {
    let pair = config.windows()?;
    let n_len = config.frame_length as isize;
    Ok((-(n_len - 1)..n_len)
        .map(|n| {
            (0..n_len)
                .filter(|m| (0..n_len).contains(&(n + m)))
                .map(|m| pair.analysis[m as usize] * pair.synthesis[(n + m) as usize])
                .sum()
        })
        .collect())
}

/// Oversampled CTF of band `k` for p' = −C..Q−1 (index 0 holds p' = −C).
pub fn ctf_from_rir(rir: &[f64], config: &StftConfig, k: usize) -> Result<Vec<Complex64>> {
    if rir.is_empty() {
        return input("impulse response is empty");
    }
    if k >= config.frame_length {
        return input(format!("band {k} out of range"));
    }
    let beta = base_kernel(config)?;
    let n_len = config.frame_length as isize;
    let nf = config.frame_length as f64;
    let c = config.noncausal() as isize;
    let q = num_causal(rir.len(), config) as isize;
    let step = config.frame_step as isize;
    Ok((-c..q)
        .map(|p| {
            let center = p * step;
            let lo = (center - n_len + 1).max(0);
            let hi = (center + n_len - 1).min(rir.len() as isize - 1);
            let mut acc = ZERO;
            for m in lo..=hi {
                let n = center - m;
                let phase = 2.0 * PI * k as f64 * n as f64 / nf;
                acc += Complex64::from_polar(rir[m as usize] * beta[(n + n_len - 1) as usize], phase);
            }
            acc
        })
        .collect())
}

/// Oversampled CTFs of bands `0..=N/2`, `[band][tap]`, via one FFT per tap.
pub fn ctf_all_bands(rir: &[f64], config: &StftConfig) -> Result<Vec<Vec<Complex64>>> {
    if rir.is_empty() {
        return input("impulse response is empty");
    }
    let beta = base_kernel(config)?;
    let n_len = config.frame_length;
    let c = config.noncausal() as isize;
    let q = num_causal(rir.len(), config) as isize;
    let step = config.frame_step as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_len);
    let bands = config.num_bands();
    let taps = (q + c) as usize;
    let mut out = vec![vec![ZERO; taps]; bands];
    let mut buf = vec![ZERO; n_len];
    for (t, p) in (-c..q).enumerate() {
        // a_{p,k} = e^{j2πk·pL/N} Σ_m a(m) β(pL − m) e^{−j2πkm/N}
        buf.fill(ZERO);
        let center = p * step;
        let lo = (center - n_len as isize + 1).max(0);
        let hi = (center + n_len as isize - 1).min(rir.len() as isize - 1);
        for m in lo..=hi {
            let v = rir[m as usize] * beta[(center - m + n_len as isize - 1) as usize];
            buf[m.rem_euclid(n_len as isize) as usize] += v;
        }
        fft.process(&mut buf);
        for (k, band) in out.iter_mut().enumerate() {
            let shift = (k as isize * center).rem_euclid(n_len as isize) as f64;
            band[t] = buf[k] * Complex64::from_polar(1.0, 2.0 * PI * shift / n_len as f64);
        }
    }
    Ok(out)
}

/// Precomputed `β_d(n) = Σ_m w̃(m) w(n + m) e^{−j2πmd/N}` for all `d`, the
/// band-offset factor of every cross-band kernel.
pub struct CrossBandKernels {
    config: StftConfig,
    // [d][n + N − 1]
    beta: Vec<Vec<Complex64>>,
}

impl CrossBandKernels {
    pub fn new(config: &StftConfig) -> Result<Self> {
        let pair = config.windows()?;
        let n_len = config.frame_length;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n_len);
        let width = 2 * n_len - 1;
        let mut beta = vec![vec![ZERO; width]; n_len];
        let mut buf = vec![ZERO; n_len];
        for (i, n) in (-(n_len as isize - 1)..n_len as isize).enumerate() {
            for (m, slot) in buf.iter_mut().enumerate() {
                let j = n + m as isize;
                *slot = if (0..n_len as isize).contains(&j) {
                    Complex64::new(pair.analysis[m] * pair.synthesis[j as usize], 0.0)
                } else {
                    ZERO
                };
            }
            fft.process(&mut buf);
            for (d, row) in beta.iter_mut().enumerate() {
                row[i] = buf[d];
            }
        }
        Ok(CrossBandKernels {
            config: *config,
            beta,
        })
    }

    /// `ζ_{k,k'}(n)` for `|n| < N`, zero elsewhere.
    pub fn zeta(&self, k: usize, k2: usize, n: isize) -> Complex64 {
        let n_len = self.config.frame_length as isize;
        if n.abs() >= n_len {
            return ZERO;
        }
        let d = (k as isize - k2 as isize).rem_euclid(n_len) as usize;
        let phase = 2.0 * PI * (k2 as isize * n).rem_euclid(n_len) as f64 / n_len as f64;
        self.beta[d][(n + n_len - 1) as usize] * Complex64::from_polar(1.0, phase)
    }

    /// Cross-band filter `a_{p',k,k'}` for p' = −C..Q−1.
    pub fn filter(&self, rir: &[f64], k: usize, k2: usize) -> Vec<Complex64> {
        let n_len = self.config.frame_length as isize;
        let c = self.config.noncausal() as isize;
        let q = num_causal(rir.len(), &self.config) as isize;
        let step = self.config.frame_step as isize;
        (-c..q)
            .map(|p| {
                let center = p * step;
                let lo = (center - n_len + 1).max(0);
                let hi = (center + n_len - 1).min(rir.len() as isize - 1);
                (lo..=hi)
                    .map(|m| rir[m as usize] * self.zeta(k, k2, center - m))
                    .sum()
            })
            .collect()
    }
}

/// Cross-band filter between bands `k` and `k2` for p' = −C..Q−1.
pub fn cross_band_filter(
    rir: &[f64],
    config: &StftConfig,
    k: usize,
    k2: usize,
) -> Result<Vec<Complex64>> {
    if rir.is_empty() {
        return input("impulse response is empty");
    }
    if k >= config.frame_length || k2 >= config.frame_length {
        return input(format!("band indices ({k}, {k2}) out of range"));
    }
    Ok(CrossBandKernels::new(config)?.filter(rir, k, k2))
}

/// Band `k` of `s ⋆ rir` synthesized from the source spectrogram. With
/// `all_bands` the full cross-band sum is used; otherwise only the
/// band-to-band (CTF) term. Frames whose noncausal taps would reach past the
/// end of `source` are truncated.
pub fn synthesize_band(
    source: &Spectrogram,
    rir: &[f64],
    kernels: &CrossBandKernels,
    k: usize,
    all_bands: bool,
) -> Vec<Complex64> {
    let config = source.config();
    let n_len = config.frame_length;
    let c = config.noncausal() as isize;
    let frames = source.frames() as isize;
    let mut out = vec![ZERO; source.frames()];
    let sources: Vec<usize> = if all_bands { (0..n_len).collect() } else { vec![k] };
    for k2 in sources {
        let taps = kernels.filter(rir, k, k2);
        let band = source.band(k2);
        for (p, slot) in out.iter_mut().enumerate() {
            for (t, tap) in taps.iter().enumerate() {
                let src = p as isize - (t as isize - c);
                if (0..frames).contains(&src) {
                    *slot += band[src as usize] * tap;
                }
            }
        }
    }
    out
}

/// Bands `0..=N/2` of `s ⋆ rir` from the full cross-band sum, `[band][frame]`.
///
/// Same result as [`synthesize_band`] with `all_bands` for every band, but
/// each frame lag's `N × N` cross-band matrix
/// `A(k, k') = Σ_m w̃(m) e^{−j2πmk/N} Σ_r a(pL + m − r) w(r) e^{j2πk'r/N}`
/// is built with two passes of FFTs and applied as one matrix product.
pub fn synthesize_all_bands(source: &Spectrogram, rir: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    if rir.is_empty() {
        return input("impulse response is empty");
    }
    let config = *source.config();
    let pair = config.windows()?;
    let n = config.frame_length;
    let half = config.num_bands();
    let c = config.noncausal() as isize;
    let q = num_causal(rir.len(), &config) as isize;
    let step = config.frame_step as isize;
    let frames = source.frames();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let s = DMatrix::from_row_slice(frames, n, source.data());
    let mut out = DMatrix::<Complex64>::zeros(frames, half);
    let mut g = vec![ZERO; n * n];
    let mut t = vec![ZERO; n * n];
    for p in -c..q {
        let center = p * step;
        for (m, row) in g.chunks_exact_mut(n).enumerate() {
            for (r, slot) in row.iter_mut().enumerate() {
                let idx = center + m as isize - r as isize;
                *slot = if (0..rir.len() as isize).contains(&idx) {
                    Complex64::new(rir[idx as usize] * pair.synthesis[r], 0.0)
                } else {
                    ZERO
                };
            }
        }
        inverse.process(&mut g);
        for m in 0..n {
            for k2 in 0..n {
                t[k2 * n + m] = g[m * n + k2] * pair.analysis[m];
            }
        }
        // row k2 of t becomes A(·, k2)
        forward.process(&mut t);
        let a_t = DMatrix::from_fn(n, half, |k2, k| t[k2 * n + k]);
        let lag = p.unsigned_abs().min(frames);
        let count = frames - lag;
        if count == 0 {
            continue;
        }
        let (src, dst) = if p >= 0 { (0, lag) } else { (lag, 0) };
        let contrib = s.rows(src, count) * &a_t;
        let mut target = out.rows_mut(dst, count);
        target += contrib;
    }
    Ok((0..half).map(|k| out.column(k).iter().copied().collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// Taps spaced by the signal frame step.
    Oversampled { step: usize },
    /// Taps spaced by the frame length.
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    SumFirstConstrained,
    FirstChannelNormalized,
}

/// Per-band, per-channel complex filter taps for bands `0..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfSet {
    pub frame_length: usize,
    pub sampling: Sampling,
    pub noncausal: usize,
    pub normalization: Normalization,
    /// `[band][channel][tap]`
    pub taps: Vec<Vec<Vec<Complex64>>>,
    /// Bands whose taps are placeholders because identification failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<usize>,
}

impl CtfSet {
    pub fn channels(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    pub fn bands(&self) -> usize {
        self.taps.len()
    }

    pub fn tap_count(&self) -> usize {
        self.taps
            .first()
            .and_then(|b| b.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.channels();
        let q = self.tap_count();
        if m == 0 || q == 0 {
            return input("CTF set has no channels or taps");
        }
        if self
            .taps
            .iter()
            .any(|band| band.len() != m || band.iter().any(|ch| ch.len() != q))
        {
            return input("CTF set has ragged tap vectors");
        }
        if self.sampling == Sampling::Critical && self.noncausal != 0 {
            return input("critically sampled CTFs cannot carry noncausal taps");
        }
        if self.normalization == Normalization::FirstChannelNormalized
            && self
                .taps
                .iter()
                .any(|band| (band[0][0] - Complex64::new(1.0, 0.0)).norm() > 1e-9)
        {
            return input("normalized CTF set must have unit first tap on channel 0");
        }
        Ok(())
    }

    /// True oversampled CTFs of a set of impulse responses.
    pub fn from_rirs(rirs: &[Vec<f64>], config: &StftConfig) -> Result<Self> {
        if rirs.is_empty() {
            return input("no impulse responses");
        }
        let len = rirs.iter().map(Vec::len).max().unwrap_or(0);
        let per_channel: Vec<Vec<Vec<Complex64>>> = rirs
            .iter()
            .map(|r| {
                let mut padded = r.clone();
                padded.resize(len, 0.0);
                ctf_all_bands(&padded, config)
            })
            .collect::<Result<_>>()?;
        let taps = (0..config.num_bands())
            .map(|k| per_channel.iter().map(|ch| ch[k].clone()).collect())
            .collect();
        Ok(CtfSet {
            frame_length: config.frame_length,
            sampling: Sampling::Oversampled {
                step: config.frame_step,
            },
            noncausal: config.noncausal(),
            normalization: Normalization::Raw,
            taps,
            degenerate: Vec::new(),
        })
    }

    /// Divides every band by the first causal tap of channel 0.
    pub fn normalized_to_first_channel(&self) -> Result<Self> {
        let c = self.noncausal;
        let mut out = self.clone();
        for band in &mut out.taps {
            let pivot = band[0][c];
            if pivot.norm() == 0.0 {
                return input("cannot normalize a band whose reference tap is zero");
            }
            for ch in band.iter_mut() {
                for v in ch.iter_mut() {
                    *v /= pivot;
                }
            }
        }
        out.normalization = Normalization::FirstChannelNormalized;
        Ok(out)
    }
}

/// Keeps causal taps 0, r, 2r, … with `r = N/L`; `Q̃ = ⌈Q/r⌉`.
pub fn decimate_ctf(set: &CtfSet) -> Result<CtfSet> {
    let Sampling::Oversampled { step } = set.sampling else {
        return input("decimation needs an oversampled CTF set");
    };
    let ratio = decimation_ratio(set.frame_length, step)?;
    let c = set.noncausal;
    let taps = set
        .taps
        .iter()
        .map(|band| {
            band.iter()
                .map(|ch| ch[c.min(ch.len())..].iter().step_by(ratio).copied().collect())
                .collect()
        })
        .collect();
    Ok(CtfSet {
        frame_length: set.frame_length,
        sampling: Sampling::Critical,
        noncausal: 0,
        normalization: set.normalization,
        taps,
        degenerate: set.degenerate.clone(),
    })
}

/// Linear interpolation of critical taps onto the signal frame grid; output
/// length `r(Q̃ − 1) + 1`, exact at multiples of `r`.
pub fn interpolate_ctf(set: &CtfSet, frame_step: usize) -> Result<CtfSet> {
    if set.sampling != Sampling::Critical {
        return input("interpolation needs a critically sampled CTF set");
    }
    let ratio = decimation_ratio(set.frame_length, frame_step)?;
    let taps = set
        .taps
        .iter()
        .map(|band| {
            band.iter()
                .map(|ch| interpolate_taps(ch, ratio))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(CtfSet {
        frame_length: set.frame_length,
        sampling: Sampling::Oversampled { step: frame_step },
        noncausal: 0,
        normalization: set.normalization,
        taps,
        degenerate: set.degenerate.clone(),
    })
}

/// First-order hold on real and imaginary parts independently.
pub fn interpolate_taps(taps: &[Complex64], ratio: usize) -> Result<Vec<Complex64>> {
    if taps.is_empty() {
        return input("cannot interpolate an empty tap vector");
    }
    if ratio == 0 {
        return input("interpolation ratio must be positive");
    }
    let mut out = Vec::with_capacity(ratio * (taps.len() - 1) + 1);
    for pair in taps.windows(2) {
        for i in 0..ratio {
            let t = i as f64 / ratio as f64;
            out.push(pair[0] * (1.0 - t) + pair[1] * t);
        }
    }
    out.push(*taps.last().unwrap());
    Ok(out)
}

fn decimation_ratio(frame_length: usize, step: usize) -> Result<usize> {
    if step == 0 || frame_length % step != 0 {
        return input(format!(
            "frame length {frame_length} is not a multiple of step {step}"
        ));
    }
    Ok(frame_length / step)
}

/// Sampled window responses and the folded band-to-band response of a
/// decimated filter, with flags for near-zero regions (common-zero risk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReport {
    pub band: usize,
    pub decimation: usize,
    /// Angular frequencies in `[0, 2π)`.
    pub omega: Vec<f64>,
    pub analysis: Vec<f64>,
    pub synthesis: Vec<f64>,
    pub product: Vec<f64>,
    /// |DTFT| of the band-`k` kernel sampled every `decimation` samples.
    pub folded: Vec<f64>,
    /// Contiguous `(start, end)` ranges where `folded < 1e−4 · peak`.
    pub zero_regions: Vec<(f64, f64)>,
}

pub const DEFAULT_ZERO_TOLERANCE: f64 = 1e-4;

impl WindowReport {
    /// First local minimum of `|W̃(ω)|` above ω = 0.
    pub fn first_zero_crossing(&self) -> Option<f64> {
        let a = &self.analysis;
        (1..a.len() / 2)
            .find(|&i| a[i] <= a[i - 1] && a[i] < a[i + 1])
            .map(|i| self.omega[i])
    }

    pub fn zero_regions_at(&self, tolerance: f64) -> Vec<(f64, f64)> {
        flag_regions(&self.omega, &self.folded, tolerance)
    }
}

fn flag_regions(omega: &[f64], values: &[f64], tolerance: f64) -> Vec<(f64, f64)> {
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let mut regions = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        let low = v < tolerance * peak;
        match (low, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                regions.push((omega[s], omega[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        regions.push((omega[s], omega[values.len() - 1]));
    }
    regions
}

pub fn window_response_report(
    config: &StftConfig,
    band: usize,
    decimation: usize,
) -> Result<WindowReport> {
    if decimation == 0 {
        return input("decimation must be positive");
    }
    if band >= config.frame_length {
        return input(format!("band {band} out of range"));
    }
    let n_len = config.frame_length;
    let grid = n_len.max(4096).next_power_of_two();
    let pair = config.windows()?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(grid);
    let dtft_mag = |seq: &[(isize, Complex64)]| -> Vec<f64> {
        let mut buf = vec![ZERO; grid];
        for &(n, v) in seq {
            buf[n.rem_euclid(grid as isize) as usize] += v;
        }
        fft.process(&mut buf);
        buf.iter().map(|v| v.norm()).collect()
    };
    let as_seq = |w: &[f64]| -> Vec<(isize, Complex64)> {
        w.iter()
            .enumerate()
            .map(|(i, &v)| (i as isize, Complex64::new(v, 0.0)))
            .collect()
    };
    let analysis = dtft_mag(&as_seq(&pair.analysis));
    let synthesis = dtft_mag(&as_seq(&pair.synthesis));
    let product = analysis.iter().zip(&synthesis).map(|(a, b)| a * b).collect();

    let kernels = zeta_kernel(config, band, band)?;
    let offset = n_len as isize - 1;
    let decimated: Vec<(isize, Complex64)> = kernels
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as isize - offset, v))
        .filter(|(n, _)| n.rem_euclid(decimation as isize) == 0)
        .map(|(n, v)| (n / decimation as isize, v))
        .collect();
    let folded = dtft_mag(&decimated);
    let omega: Vec<f64> = (0..grid).map(|i| 2.0 * PI * i as f64 / grid as f64).collect();
    let zero_regions = flag_regions(&omega, &folded, DEFAULT_ZERO_TOLERANCE);
    Ok(WindowReport {
        band,
        decimation,
        omega,
        analysis,
        synthesis,
        product,
        folded,
        zero_regions,
    })
}
