//! End-to-end runs: identification, inverse filtering and evaluation on
//! given or synthetic multichannel recordings, plus parameter sweeps.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctf::{decimate_ctf, CtfSet};
use crate::error::{config, Result};
use crate::identify::{identify_all_bands, select_filter_length, IdentificationReport};
use crate::inverse::{dereverberate, DereverbReport, InverseOptions, NoiseProfile, TolerancePolicy};
use crate::metrics::{align_and_scale, ctf_filter_error, lsd, srmr_proxy, DEFAULT_DYNAMIC_RANGE_DB};
use crate::solver::SolverParams;
use crate::stft::{stft_channel, Spectrogram, StftConfig, WindowKind};
use crate::synth::{synth_scene, Scene, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftSettings {
    pub frame_length: usize,
    pub frame_step: usize,
    pub window: WindowKind,
}

impl Default for StftSettings {
    fn default() -> Self {
        StftSettings {
            frame_length: 1024,
            frame_step: 256,
            window: WindowKind::Hamming,
        }
    }
}

/// Run configuration; every field has a default so partial JSON files work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stft: StftSettings,
    pub sample_rate: f64,
    /// Reverberation time used for synthesis and filter-length selection.
    pub t60: f64,
    /// Explicit critical filter length; overrides the T60 rule.
    pub taps: Option<usize>,
    pub channels: usize,
    /// `None` is noise-free.
    pub snr_db: Option<f64>,
    /// Synthetic source duration in seconds.
    pub duration: f64,
    pub solver: SolverParams,
    pub tolerance: TolerancePolicy,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stft: StftSettings::default(),
            sample_rate: 16_000.0,
            t60: 0.5,
            taps: None,
            channels: 2,
            snr_db: None,
            duration: 4.0,
            solver: SolverParams::default(),
            tolerance: TolerancePolicy::Auto,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn stft_config(&self) -> Result<StftConfig> {
        StftConfig::new(
            self.stft.frame_length,
            self.stft.frame_step,
            self.stft.window,
            self.sample_rate,
        )
    }

    pub fn filter_length(&self) -> Result<usize> {
        let cfg = self.stft_config()?;
        Ok(self.taps.unwrap_or_else(|| select_filter_length(self.t60, &cfg)))
    }

    pub fn inverse_options(&self) -> InverseOptions {
        InverseOptions {
            solver: self.solver,
            tolerance: self.tolerance,
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            t60: self.t60,
            channels: self.channels,
            duration: self.duration,
            sample_rate: self.sample_rate,
            snr_db: self.snr_db,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft_config()?;
        self.solver.validate()?;
        if self.channels < 2 {
            return config("at least 2 channels are needed");
        }
        if !(self.t60 > 0.0) {
            return config("t60 must be positive");
        }
        if self.taps == Some(0) {
            return config("taps must be positive");
        }
        if !(self.duration > 0.0) {
            return config("duration must be positive");
        }
        Ok(())
    }
}

/// Output of identification plus inverse filtering.
#[derive(Debug, Clone)]
pub struct Processed {
    pub estimate: Vec<f64>,
    pub ctf: CtfSet,
    pub identification: IdentificationReport,
    pub dereverb: DereverbReport,
}

pub fn analyze(mics: &[Vec<f64>], cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
    mics.iter()
        .enumerate()
        .map(|(m, x)| stft_channel(x, cfg, m))
        .collect()
}

/// Identifies filters and dereverberates the microphone signals.
pub fn process(
    mics: &[Vec<f64>],
    cfg: &StftConfig,
    taps: usize,
    noise: &NoiseProfile,
    options: &InverseOptions,
) -> Result<Processed> {
    let specs = analyze(mics, cfg)?;
    let (ctf, identification) = identify_all_bands(&specs, taps)?;
    let out = dereverberate(&specs, &ctf, noise, options)?;
    Ok(Processed {
        estimate: out.signal,
        ctf,
        identification,
        dereverb: out.report,
    })
}

/// True critical filters of a scene, normalized to channel 0.
pub fn true_critical_ctf(rirs: &[Vec<f64>], cfg: &StftConfig) -> Result<CtfSet> {
    decimate_ctf(&CtfSet::from_rirs(rirs, cfg)?)?.normalized_to_first_channel()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub t60: f64,
    pub channels: usize,
    pub snr_db: Option<f64>,
    pub taps: usize,
    pub filter_ms: f64,
    pub lsd_unprocessed: f64,
    pub lsd_processed: f64,
    pub srmr_proxy_unprocessed: f64,
    pub srmr_proxy_processed: f64,
    pub filter_error_db: Option<f64>,
    pub degenerate_bands: Vec<usize>,
    pub unconverged_bands: Vec<usize>,
    pub runtime_s: f64,
}

/// Evaluates processed output against the early reference.
pub fn score(
    reference: &[f64],
    unprocessed: &[f64],
    processed: &[f64],
    cfg: &StftConfig,
) -> Result<(f64, f64, f64, f64)> {
    let fs = cfg.sample_rate;
    let un = align_and_scale(reference, unprocessed, fs)?;
    let pr = align_and_scale(reference, processed, fs)?;
    Ok((
        lsd(reference, &un.signal, cfg, DEFAULT_DYNAMIC_RANGE_DB)?,
        lsd(reference, &pr.signal, cfg, DEFAULT_DYNAMIC_RANGE_DB)?,
        srmr_proxy(unprocessed, fs)?,
        srmr_proxy(processed, fs)?,
    ))
}

/// Runs a full synthetic scene.
pub fn run_pipeline(run: &RunConfig) -> Result<(PipelineReport, Scene, Processed)> {
    run.validate()?;
    let start = Instant::now();
    let cfg = run.stft_config()?;
    let taps = run.filter_length()?;
    let scene = synth_scene(&run.scene_spec(), &cfg)?;
    let processed = process(&scene.mics, &cfg, taps, &scene.noise, &run.inverse_options())?;
    let (lu, lp, su, sp) = score(&scene.early_reference, &scene.mics[0], &processed.estimate, &cfg)?;
    let truth = true_critical_ctf(&scene.rirs, &cfg)?;
    let filter_error = ctf_filter_error(&truth, &processed.ctf).ok().map(|e| e.0);
    let report = PipelineReport {
        seed: run.seed,
        t60: run.t60,
        channels: run.channels,
        snr_db: run.snr_db,
        taps,
        filter_ms: 1000.0 * (taps * cfg.frame_length) as f64 / cfg.sample_rate,
        lsd_unprocessed: lu,
        lsd_processed: lp,
        srmr_proxy_unprocessed: su,
        srmr_proxy_processed: sp,
        filter_error_db: filter_error,
        degenerate_bands: processed.identification.degenerate_bands(),
        unconverged_bands: processed.dereverb.unconverged_bands(),
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, scene, processed))
}

/// Sweep grid; empty lists fall back to the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// Filter spans in milliseconds.
    pub filter_ms: Vec<f64>,
    /// SNRs in dB; `null` is noise-free.
    pub snr_db: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
}

pub const SWEEP_HEADER: [&str; 12] = [
    "seed",
    "t60",
    "channels",
    "snr_db",
    "filter_ms",
    "taps",
    "lsd_unprocessed",
    "lsd_processed",
    "srmr_proxy_unprocessed",
    "srmr_proxy_processed",
    "filter_error_db",
    "runtime_s",
];

/// Critical taps for a filter span.
pub fn taps_for_span(filter_ms: f64, cfg: &StftConfig) -> usize {
    ((filter_ms / 1000.0 * cfg.sample_rate / cfg.frame_length as f64).round() as usize).max(1)
}

/// Sweep points in deterministic order: filter span, then SNR, then seed.
pub fn sweep_points(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<RunConfig>> {
    let cfg = base.stft_config()?;
    let spans: Vec<Option<f64>> = if grid.filter_ms.is_empty() {
        vec![None]
    } else {
        grid.filter_ms.iter().copied().map(Some).collect()
    };
    let snrs: Vec<Option<f64>> = if grid.snr_db.is_empty() {
        vec![base.snr_db]
    } else {
        grid.snr_db.clone()
    };
    let seeds = if grid.seeds.is_empty() {
        vec![base.seed]
    } else {
        grid.seeds.clone()
    };
    let mut out = Vec::new();
    for span in &spans {
        for snr in &snrs {
            for &seed in &seeds {
                let mut run = base.clone();
                if let Some(ms) = span {
                    run.taps = Some(taps_for_span(*ms, &cfg));
                }
                run.snr_db = *snr;
                run.seed = seed;
                out.push(run);
            }
        }
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| format!("{x}"))
}

/// Runs every grid point and writes one CSV row per point. A grid with an
/// empty axis still produces the header.
pub fn run_sweep<W: Write>(
    base: &RunConfig,
    grid: &SweepGrid,
    out: W,
) -> Result<Vec<PipelineReport>> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(SWEEP_HEADER).map_err(csv_err)?;
    let explicit_empty = grid.filter_ms.is_empty() && grid.snr_db.is_empty() && grid.seeds.is_empty();
    let points = if explicit_empty {
        Vec::new()
    } else {
        sweep_points(base, grid)?
    };
    let mut reports = Vec::with_capacity(points.len());
    for run in &points {
        let (r, _, _) = run_pipeline(run)?;
        csv.write_record([
            r.seed.to_string(),
            r.t60.to_string(),
            r.channels.to_string(),
            fmt_opt(r.snr_db),
            r.filter_ms.to_string(),
            r.taps.to_string(),
            r.lsd_unprocessed.to_string(),
            r.lsd_processed.to_string(),
            r.srmr_proxy_unprocessed.to_string(),
            r.srmr_proxy_processed.to_string(),
            r.filter_error_db.map_or_else(String::new, |v| v.to_string()),
            format!("{:.3}", r.runtime_s),
        ])
        .map_err(csv_err)?;
        reports.push(r);
    }
    csv.flush()?;
    Ok(reports)
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}
