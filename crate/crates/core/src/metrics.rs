//! Evaluation measures: log-spectral distance after alignment, scale-free
//! filter misalignment, and a modulation-energy reverberation proxy.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ctf::CtfSet;
use crate::error::{input, Result};
use crate::stft::{stft, Spectrogram, StftConfig};

/// Dynamic range of the log spectra.
pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 50.0;
/// Search range of the alignment lag, seconds.
pub const MAX_LAG_S: f64 = 0.5;
/// Cap of the filter error for exact matches.
pub const FILTER_ERROR_FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub signal: Vec<f64>,
    /// Samples by which the estimate trails the reference.
    pub lag: isize,
    pub gain: f64,
}

fn cross_correlation(a: &[f64], b: &[f64]) -> Vec<f64> {
    // r[k] = Σ_n a[n] b[n + k], returned for k = −(a.len()−1) ..= b.len()−1
    let len = a.len() + b.len() - 1;
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa = vec![Complex64::new(0.0, 0.0); n];
    let mut fb = fa.clone();
    for (i, v) in a.iter().enumerate() {
        fa[i] = Complex64::new(*v, 0.0);
    }
    for (i, v) in b.iter().enumerate() {
        fb[i] = Complex64::new(*v, 0.0);
    }
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = x.conj() * y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..len)
        .map(|i| {
            let k = i as isize - (a.len() as isize - 1);
            fa[k.rem_euclid(n as isize) as usize].re * scale
        })
        .collect()
}

/// Shifts the estimate by the lag maximizing `|xcorr|` within ±0.5 s and
/// applies the least-squares gain; output has the reference length.
pub fn align_and_scale(reference: &[f64], estimate: &[f64], sample_rate: f64) -> Result<Aligned> {
    if reference.is_empty() || estimate.is_empty() {
        return input("alignment needs nonempty signals");
    }
    if estimate.iter().all(|&v| v == 0.0) {
        return input("estimate is all zero");
    }
    let max_lag = (MAX_LAG_S * sample_rate).round() as isize;
    let r = cross_correlation(reference, estimate);
    let offset = reference.len() as isize - 1;
    let mut best = (0isize, f64::NEG_INFINITY);
    for (i, v) in r.iter().enumerate() {
        let k = i as isize - offset;
        if k.abs() > max_lag {
            continue;
        }
        let score = v.abs();
        // ties resolved toward the smaller |lag|
        if score > best.1 * (1.0 + 1e-12) || (score >= best.1 && k.abs() < best.0.abs()) {
            best = (k, score);
        }
    }
    let lag = best.0;
    let shifted: Vec<f64> = (0..reference.len() as isize)
        .map(|n| {
            let i = n + lag;
            if i >= 0 && (i as usize) < estimate.len() {
                estimate[i as usize]
            } else {
                0.0
            }
        })
        .collect();
    let num: f64 = shifted.iter().zip(reference).map(|(a, b)| a * b).sum();
    let den: f64 = shifted.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return input("estimate does not overlap the reference after alignment");
    }
    let gain = num / den;
    Ok(Aligned {
        signal: shifted.iter().map(|v| v * gain).collect(),
        lag,
        gain,
    })
}

fn floored_log_spectrum(spec: &Spectrogram, dynamic_range_db: f64) -> Vec<Vec<f64>> {
    let bands = spec.config().num_bands();
    let mut db: Vec<Vec<f64>> = (0..spec.frames())
        .map(|p| {
            spec.frame(p)[..bands]
                .iter()
                .map(|v| 20.0 * v.norm().max(f64::MIN_POSITIVE).log10())
                .collect()
        })
        .collect();
    let top = db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = top - dynamic_range_db;
    for v in db.iter_mut().flatten() {
        *v = v.max(floor);
    }
    db
}

/// Mean over frames of the RMS over bands `0..=N/2` of the floored
/// log-magnitude difference.
pub fn lsd_spectrograms(
    reference: &Spectrogram,
    estimate: &Spectrogram,
    dynamic_range_db: f64,
) -> Result<f64> {
    if reference.frames() != estimate.frames() || reference.config() != estimate.config() {
        return input("spectrograms differ in shape");
    }
    let a = floored_log_spectrum(reference, dynamic_range_db);
    let b = floored_log_spectrum(estimate, dynamic_range_db);
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| {
            let ms = ra.iter().zip(rb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ra.len() as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// Log-spectral distance in dB between equal-length signals.
pub fn lsd(
    reference: &[f64],
    estimate: &[f64],
    config: &StftConfig,
    dynamic_range_db: f64,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return input(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        ));
    }
    lsd_spectrograms(&stft(reference, config)?, &stft(estimate, config)?, dynamic_range_db)
}

/// `20 log10(‖h − α ĥ‖ / ‖h‖)` with the optimal complex `α`, capped below.
pub fn filter_error_db(truth: &[Complex64], estimate: &[Complex64]) -> f64 {
    let t: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    let e: f64 = estimate.iter().map(|v| v.norm_sqr()).sum();
    if t == 0.0 {
        return if e == 0.0 { FILTER_ERROR_FLOOR_DB } else { 0.0 };
    }
    let residual = if e == 0.0 {
        t
    } else {
        let cross: Complex64 = estimate.iter().zip(truth).map(|(a, b)| a.conj() * b).sum();
        (t - cross.norm_sqr() / e).max(0.0)
    };
    if residual == 0.0 {
        return FILTER_ERROR_FLOOR_DB;
    }
    (10.0 * (residual / t).log10()).max(FILTER_ERROR_FLOOR_DB)
}

/// Filter error per band, averaged over channels; and its mean over bands.
pub fn ctf_filter_error(truth: &CtfSet, estimate: &CtfSet) -> Result<(f64, Vec<f64>)> {
    if truth.bands() != estimate.bands() || truth.channels() != estimate.channels() {
        return input("filter sets differ in bands or channels");
    }
    let per_band: Vec<f64> = truth
        .taps
        .iter()
        .zip(&estimate.taps)
        .map(|(tb, eb)| {
            let sum: f64 = tb
                .iter()
                .zip(eb)
                .map(|(t, e)| {
                    let n = t.len().min(e.len());
                    filter_error_db(&t[..n], &e[..n])
                })
                .sum();
            sum / tb.len() as f64
        })
        .collect();
    let mean = per_band.iter().sum::<f64>() / per_band.len().max(1) as f64;
    Ok((mean, per_band))
}

/// Envelope rate of the modulation analysis.
pub const ENVELOPE_RATE_HZ: f64 = 400.0;
pub const LOW_MODULATION_HZ: (f64, f64) = (4.0, 16.0);
pub const HIGH_MODULATION_HZ: (f64, f64) = (32.0, 128.0);

/// Ratio in dB of 4–16 Hz to 32–128 Hz modulation energy of the broadband
/// RMS envelope. A non-standard stand-in for reverberation-sensitive
/// modulation measures; larger means drier.
pub fn srmr_proxy(signal: &[f64], sample_rate: f64) -> Result<f64> {
    if sample_rate < 8000.0 {
        return input("modulation proxy needs at least 8 kHz sampling");
    }
    let hop = (sample_rate / ENVELOPE_RATE_HZ).round() as usize;
    let win = 2 * hop;
    if signal.len() < win * 8 {
        return input("signal too short for modulation analysis");
    }
    let env: Vec<f64> = (0..=(signal.len() - win) / hop)
        .map(|i| {
            let seg = &signal[i * hop..i * hop + win];
            (seg.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt()
        })
        .collect();
    let rate = sample_rate / hop as f64;
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let n = env.len().next_power_of_two() * 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let len = env.len() as f64;
    for (i, v) in env.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len).cos();
        buf[i] = Complex64::new((v - mean) * w, 0.0);
    }
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let band_energy = |(lo, hi): (f64, f64)| -> f64 {
        (0..=n / 2)
            .filter(|&i| {
                let f = i as f64 * rate / n as f64;
                f >= lo && f < hi
            })
            .map(|i| buf[i].norm_sqr())
            .sum()
    };
    let low = band_energy(LOW_MODULATION_HZ);
    let high = band_energy(HIGH_MODULATION_HZ);
    if high == 0.0 {
        return Ok(if low == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(10.0 * (low / high).log10())
}

pub const SRMR_PROXY_LABEL: &str =
    "non-standard: 4-16 Hz over 32-128 Hz envelope modulation energy, dB";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lsd_db: f64,
    pub alignment_lag: isize,
    pub gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_error_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srmr_proxy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub srmr_proxy_label: Option<String>,
}

/// Aligns, then computes LSD and the modulation proxy of the estimate.
pub fn evaluate(reference: &[f64], estimate: &[f64], config: &StftConfig) -> Result<EvalReport> {
    let fs = config.sample_rate;
    let aligned = align_and_scale(reference, estimate, fs)?;
    let lsd_db = lsd(reference, &aligned.signal, config, DEFAULT_DYNAMIC_RANGE_DB)?;
    let proxy = srmr_proxy(estimate, fs).ok();
    Ok(EvalReport {
        lsd_db,
        alignment_lag: aligned.lag,
        gain: aligned.gain,
        filter_error_db: None,
        srmr_proxy: proxy,
        srmr_proxy_label: proxy.map(|_| SRMR_PROXY_LABEL.to_string()),
    })
}
