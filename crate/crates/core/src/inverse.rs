//! Sparse inverse filtering of source amplitudes per band.
//!
//! With the identified filters interpolated back to the signal frame grid,
//! each channel obeys `|z| ≈ |A| |s|` entrywise. An NNLS fit gives the
//! attainable misfit; the final amplitudes minimize `1ᵀs` inside the ball
//! `‖C̃s − z̃‖² ≤ δ`, where `δ` accounts for noise power and a spectral
//! subtraction estimate of the source energy. Phase comes from channel 0.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctf::{interpolate_ctf, CtfSet, Normalization, Sampling};
use crate::error::{input, Result};
use crate::solver::{
    solve_l1_ball, solve_nnls, ConvexProblem, FitMatrix, SolverParams, SolverStatus,
};
use crate::stft::{istft, Spectrogram};

/// Lower clip of the NNLS starting point.
pub const START_FLOOR: f64 = 1e-8;
/// Initial dual value for every constraint.
pub const INITIAL_DUAL: f64 = 10.0;
/// Starting multiplier of the ball constraint.
pub const BALL_DUAL: f64 = 1.0;
/// Slack factor on the NNLS misfit.
pub const FLOOR_SLACK: f64 = 1.05;
/// Share of the estimated source energy allowed as modelling error.
pub const MODEL_SHARE: f64 = 0.05;
/// Relative margin (of `‖z‖²`) kept above the NNLS misfit for a strictly
/// feasible start.
pub const INTERIOR_MARGIN: f64 = 1e-9;

/// Dense `P × P` lower-triangular Toeplitz matrix with first column `a`.
pub fn build_filter_matrix(a: &[f64], frames: usize) -> Result<Vec<Vec<f64>>> {
    if a.is_empty() || a.len() > frames {
        return input(format!("{} taps do not fit {frames} frames", a.len()));
    }
    Ok((0..frames)
        .map(|p| {
            (0..frames)
                .map(|q| if p >= q && p - q < a.len() { a[p - q] } else { 0.0 })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    PureNoiseSegment,
    External,
}

/// Noise power per band and channel, in squared STFT-coefficient units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// `[band][channel]`
    pub psd: Vec<Vec<f64>>,
    pub source: NoiseSource,
}

impl NoiseProfile {
    pub fn zeros(bands: usize, channels: usize) -> Self {
        NoiseProfile {
            psd: vec![vec![0.0; channels]; bands],
            source: NoiseSource::External,
        }
    }

    pub fn bands(&self) -> usize {
        self.psd.len()
    }

    pub fn channels(&self) -> usize {
        self.psd.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.channels();
        if self.psd.iter().any(|b| b.len() != m) {
            return input("noise profile has ragged bands");
        }
        if self.psd.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return input("noise powers must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBreakdown {
    pub delta_e: f64,
    pub lambda_c: f64,
    pub delta_c: f64,
    pub delta_floor: f64,
    pub delta: f64,
}

/// `δ = max(δ_e + δ_c, 1.05·minfit)` with `δ_e = PΣσ² − 2√(PΣσ⁴)` (clamped
/// at zero), `λ̂_c = max(‖z‖² − PΣσ², 0)` and `δ_c = 0.05 λ̂_c`.
pub fn compute_tolerance(
    z_energy: f64,
    frames: usize,
    sigma2: &[f64],
    minfit: f64,
) -> ToleranceBreakdown {
    let p = frames as f64;
    let s2: f64 = sigma2.iter().sum();
    let s4: f64 = sigma2.iter().map(|v| v * v).sum();
    let delta_e = (p * s2 - 2.0 * (p * s4).sqrt()).max(0.0);
    let lambda_c = (z_energy - p * s2).max(0.0);
    let delta_c = MODEL_SHARE * lambda_c;
    let delta_floor = FLOOR_SLACK * minfit;
    ToleranceBreakdown {
        delta_e,
        lambda_c,
        delta_c,
        delta_floor,
        delta: (delta_e + delta_c).max(delta_floor),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TolerancePolicy {
    /// Noise, model and floor terms.
    Auto,
    /// Floor term only.
    FloorOnly,
}

/// `s̃ e^{j arg x}`, phase 0 where `x = 0`.
pub fn attach_phase(amplitude: &[f64], reference: &[Complex64]) -> Result<Vec<Complex64>> {
    if amplitude.len() != reference.len() {
        return input(format!(
            "amplitude has {} frames, reference {}",
            amplitude.len(),
            reference.len()
        ));
    }
    Ok(amplitude
        .iter()
        .zip(reference)
        .map(|(&a, x)| {
            if x.norm() == 0.0 {
                Complex64::new(a, 0.0)
            } else {
                Complex64::from_polar(a, x.arg())
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: usize,
    pub tolerance: Option<ToleranceBreakdown>,
    pub nnls_iterations: usize,
    pub l1_iterations: usize,
    pub nnls_status: Option<SolverStatus>,
    pub l1_status: Option<SolverStatus>,
    /// NNLS misfit in original units.
    pub minfit: f64,
    /// Channel 0 passed through because identification failed.
    pub fallback: bool,
    /// All-zero input band.
    pub silent: bool,
}

impl BandReport {
    fn empty(band: usize) -> Self {
        BandReport {
            band,
            tolerance: None,
            nnls_iterations: 0,
            l1_iterations: 0,
            nnls_status: None,
            l1_status: None,
            minfit: 0.0,
            fallback: false,
            silent: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandOutput {
    pub amplitude: Vec<f64>,
    /// NNLS amplitudes (same units).
    pub nnls: Vec<f64>,
    pub report: BandReport,
}

/// Options shared by all bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseOptions {
    pub solver: SolverParams,
    pub tolerance: TolerancePolicy,
}

impl Default for InverseOptions {
    fn default() -> Self {
        InverseOptions {
            solver: SolverParams::default(),
            tolerance: TolerancePolicy::Auto,
        }
    }
}

/// Amplitude recovery for one band.
///
/// `signals[m]` is channel `m`'s band sequence, `taps[m]` the filter on the
/// signal frame grid and `sigma2[m]` the channel's noise power.
pub fn dereverb_band(
    band: usize,
    signals: &[Vec<Complex64>],
    taps: &[Vec<Complex64>],
    sigma2: &[f64],
    options: &InverseOptions,
) -> Result<BandOutput> {
    let m = signals.len();
    if m == 0 || taps.len() != m || sigma2.len() != m {
        return input("channel counts of signals, filters and noise differ");
    }
    let frames = signals[0].len();
    if signals.iter().any(|s| s.len() != frames) {
        return input("channels have different frame counts");
    }
    let mut report = BandReport::empty(band);
    let z: Vec<f64> = signals.iter().flatten().map(|v| v.norm()).collect();
    let z_energy: f64 = z.iter().map(|v| v * v).sum();
    if z_energy == 0.0 {
        report.silent = true;
        return Ok(BandOutput {
            amplitude: vec![0.0; frames],
            nnls: vec![0.0; frames],
            report,
        });
    }

    // unit-RMS working units keep the absolute solver tolerances meaningful
    let scale = (z.len() as f64 / z_energy).sqrt();
    let zs: Vec<f64> = z.iter().map(|v| v * scale).collect();
    let amps: Vec<Vec<f64>> = taps
        .iter()
        .map(|t| t.iter().map(|v| v.norm()).collect())
        .collect();
    let fit = FitMatrix::toeplitz(amps, frames)?;
    let nnls_problem = ConvexProblem::nnls(fit, zs.clone())?;

    let s0: Vec<f64> = zs[..frames].iter().map(|v| v.max(START_FLOOR)).collect();
    let params = &options.solver;
    let nnls = solve_nnls(&nnls_problem, params, &s0, &vec![INITIAL_DUAL; frames])?;
    report.nnls_iterations = nnls.iterations;
    report.nnls_status = Some(nnls.status);

    let scale2 = scale * scale;
    let minfit_w = nnls_problem.misfit(&nnls.s);
    report.minfit = minfit_w / scale2;
    let tol = match options.tolerance {
        TolerancePolicy::Auto => compute_tolerance(z_energy, frames, sigma2, report.minfit),
        TolerancePolicy::FloorOnly => compute_tolerance(z_energy, frames, &vec![0.0; m], report.minfit),
    };
    let tol = match options.tolerance {
        TolerancePolicy::Auto => tol,
        TolerancePolicy::FloorOnly => ToleranceBreakdown {
            delta_e: 0.0,
            delta_c: 0.0,
            delta: tol.delta_floor,
            ..tol
        },
    };
    report.tolerance = Some(tol);

    // strict interiority of the NNLS point inside the ball
    let delta_w = (tol.delta * scale2).max(minfit_w + INTERIOR_MARGIN * z.len() as f64);
    let l1_problem = nnls_problem.with_ball(delta_w)?;
    let start: Vec<f64> = nnls.s.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
    // 1 − λ + λ_b·2Cᵀr = 0 holds at the NNLS optimum when λ = 1 + λ_b·λ_nnls
    let mut lambda0: Vec<f64> = nnls.lambda.iter().map(|l| 1.0 + BALL_DUAL * l.max(0.0)).collect();
    lambda0.push(BALL_DUAL);
    let l1 = solve_l1_ball(&l1_problem, params, &start, &lambda0)?;
    report.l1_iterations = l1.iterations;
    report.l1_status = Some(l1.status);

    let amplitude = if l1.status == SolverStatus::InfeasibleStart {
        nnls.s.clone()
    } else {
        l1.s
    };
    Ok(BandOutput {
        amplitude: amplitude.iter().map(|v| v.max(0.0) / scale).collect(),
        nnls: nnls.s.iter().map(|v| v.max(0.0) / scale).collect(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DereverbReport {
    pub bands: Vec<BandReport>,
}

impl DereverbReport {
    pub fn fallback_bands(&self) -> Vec<usize> {
        self.bands.iter().filter(|b| b.fallback).map(|b| b.band).collect()
    }

    pub fn unconverged_bands(&self) -> Vec<usize> {
        let bad = |s: Option<SolverStatus>| matches!(s, Some(st) if st != SolverStatus::Converged);
        self.bands
            .iter()
            .filter(|b| bad(b.nnls_status) || bad(b.l1_status))
            .map(|b| b.band)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dereverberated {
    pub spectrogram: Spectrogram,
    pub signal: Vec<f64>,
    pub report: DereverbReport,
}

/// Per-band amplitude recovery, channel-0 phase and resynthesis.
pub fn dereverberate(
    specs: &[Spectrogram],
    ctf: &CtfSet,
    noise: &NoiseProfile,
    options: &InverseOptions,
) -> Result<Dereverberated> {
    let Some(first) = specs.first() else {
        return input("no input channels");
    };
    let cfg = *first.config();
    let frames = first.frames();
    if specs.iter().any(|s| s.config() != &cfg || s.frames() != frames) {
        return input("spectrograms must share configuration and frame count");
    }
    ctf.validate()?;
    if ctf.sampling != Sampling::Critical
        || ctf.normalization != Normalization::FirstChannelNormalized
    {
        return input("inverse filtering needs critical, first-channel normalized filters");
    }
    if ctf.frame_length != cfg.frame_length || ctf.bands() != cfg.num_bands() {
        return input(format!(
            "filters are for N = {} with {} bands, signal uses N = {}",
            ctf.frame_length,
            ctf.bands(),
            cfg.frame_length
        ));
    }
    if ctf.channels() != specs.len() {
        return input(format!(
            "{} filter channels for {} signal channels",
            ctf.channels(),
            specs.len()
        ));
    }
    noise.validate()?;
    if noise.bands() != cfg.num_bands() || noise.channels() != specs.len() {
        return input("noise profile does not match the signal layout");
    }
    let fine = interpolate_ctf(ctf, cfg.frame_step)?;
    let halves: Vec<Vec<Vec<Complex64>>> = specs.iter().map(Spectrogram::half_bands).collect();

    let outputs: Vec<(Vec<Complex64>, BandReport)> = (0..cfg.num_bands())
        .into_par_iter()
        .map(|k| {
            let signals: Vec<Vec<Complex64>> = halves.iter().map(|h| h[k].clone()).collect();
            if ctf.degenerate.contains(&k) {
                let mut report = BandReport::empty(k);
                report.fallback = true;
                return Ok((signals[0].clone(), report));
            }
            let out = dereverb_band(k, &signals, &fine.taps[k], &noise.psd[k], options)?;
            Ok((attach_phase(&out.amplitude, &signals[0])?, out.report))
        })
        .collect::<Result<_>>()?;

    let (bands, reports): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
    let spectrogram = Spectrogram::from_half_bands(&bands, cfg, 0, first.signal_len())?;
    let signal = istft(&spectrogram)?;
    Ok(Dereverberated {
        spectrogram,
        signal,
        report: DereverbReport { bands: reports },
    })
}
