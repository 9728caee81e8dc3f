use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctf_dereverb::pipeline::StftSettings;
use ctf_dereverb::{RunConfig, StftConfig, TolerancePolicy, WavEncoding};

#[derive(Debug, Parser)]
#[command(name = "ctf-dereverb", version, about = "Blind STFT-domain dereverberation of multichannel speech")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for per-band work (default: all cores).
    #[arg(long, global = true, env = "CTF_DEREVERB_THREADS")]
    pub threads: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic reverberant scene.
    Synth(SynthArgs),
    /// Blindly identify per-band filters from a multichannel recording.
    Identify(IdentifyArgs),
    /// Inverse-filter a multichannel recording with identified filters.
    Dereverb(DereverbArgs),
    /// Compare an estimate with a reference signal.
    Eval(EvalArgs),
    /// Identify, dereverberate and evaluate in one go.
    Pipeline(PipelineArgs),
    /// Run the pipeline over a grid of filter lengths, SNRs and seeds.
    Sweep(SweepArgs),
    /// Convert between impulse responses and filter files.
    #[command(subcommand)]
    Ctf(CtfCommand),
    /// Run the convex solver on a small dense problem (debugging).
    Solve(SolveArgs),
}

/// Flags shared by commands that run the method.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// STFT as "N,L,window", e.g. "1024,256,hamming".
    #[arg(long, value_name = "N,L,WINDOW")]
    pub stft: Option<String>,
    /// Reverberation time in seconds (sets the filter length).
    #[arg(long)]
    pub t60: Option<f64>,
    /// Critical filter length in taps; overrides --t60 for identification.
    #[arg(long)]
    pub taps: Option<usize>,
    /// Barrier growth factor.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Duality gap tolerance.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Dual residual tolerance.
    #[arg(long)]
    pub eps_feas: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub tolerance: Option<ToleranceArg>,
}

/// Flags that describe a synthetic scene.
#[derive(Debug, Clone, Default, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    /// SNR in dB, or "inf" for noise-free.
    #[arg(long, value_parser = parse_snr)]
    pub snr: Option<Snr>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Source duration in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snr(pub Option<f64>);

fn parse_snr(s: &str) -> Result<Snr, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "none" => Ok(Snr(None)),
        v => v
            .parse::<f64>()
            .map(|x| Snr(if x.is_infinite() && x > 0.0 { None } else { Some(x) }))
            .map_err(|_| format!("'{s}' is not a number or 'inf'")),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ToleranceArg {
    Auto,
    FloorOnly,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum EncodingArg {
    Pcm16,
    #[default]
    Float32,
}

impl From<EncodingArg> for WavEncoding {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Pcm16 => WavEncoding::Pcm16,
            EncodingArg::Float32 => WavEncoding::Float32,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub encoding: EncodingArg,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Multichannel WAV.
    #[arg(long = "in", value_name = "WAV")]
    pub input: PathBuf,
    /// Filter file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-band diagnostics as JSON.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DereverbArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long = "in", value_name = "WAV")]
    pub input: PathBuf,
    /// Filter file from `identify` or `ctf export`.
    #[arg(long, value_name = "FILE")]
    pub ctf: PathBuf,
    /// Noise PSD file; noise-free when omitted.
    #[arg(long, value_name = "FILE")]
    pub noise_psd: Option<PathBuf>,
    #[arg(long, value_name = "WAV")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub encoding: EncodingArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "N,L,WINDOW")]
    pub stft: Option<String>,
    #[arg(long = "ref", value_name = "WAV")]
    pub reference: PathBuf,
    #[arg(long = "est", value_name = "WAV")]
    pub estimate: PathBuf,
    /// Channel of the estimate file to score.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    /// Report file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Generate the input instead of reading it.
    #[arg(long, conflicts_with = "input")]
    pub synth: bool,
    #[arg(long = "in", value_name = "WAV", required_unless_present = "synth")]
    pub input: Option<PathBuf>,
    /// Reference for scoring a file input.
    #[arg(long = "ref", value_name = "WAV", requires = "input")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "input")]
    pub noise_psd: Option<PathBuf>,
    /// Directory for signals, filters and the report.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub encoding: EncodingArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// JSON grid with `filter_ms`, `snr_db` and `seeds` lists.
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Filter spans in ms, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub filter_ms: Vec<f64>,
    /// SNRs in dB, comma separated; "inf" for noise-free.
    #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
    pub snrs: Vec<Snr>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// CSV output; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CtfCommand {
    /// Compute filters from known impulse responses (one per channel).
    Export(CtfExportArgs),
    /// Read and validate a filter file, printing a summary.
    Import(CtfImportArgs),
}

#[derive(Debug, Args)]
pub struct CtfExportArgs {
    #[arg(long, value_name = "N,L,WINDOW")]
    pub stft: Option<String>,
    /// Impulse responses, one channel each.
    #[arg(long, value_name = "WAV")]
    pub rir: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Keep the raw oversampled taps instead of critical, normalized ones.
    #[arg(long)]
    pub oversampled: bool,
}

#[derive(Debug, Args)]
pub struct CtfImportArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Summary file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProblemKind {
    Nnls,
    L1ball,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub problem: ProblemKind,
    /// Whitespace or comma separated matrix, one row per line.
    #[arg(long, value_name = "FILE", required_unless_present = "file")]
    pub matrix: Option<PathBuf>,
    /// Right-hand side values.
    #[arg(long, value_name = "FILE", required_unless_present = "file")]
    pub rhs: Option<PathBuf>,
    /// Ball radius (squared misfit bound) for l1ball.
    #[arg(long)]
    pub delta: Option<f64>,
    /// JSON problem with `matrix`, `target` and optional `delta`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["matrix", "rhs"])]
    pub file: Option<PathBuf>,
    /// Result file; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Parses `--stft`; any failure is a usage error.
pub fn parse_stft(spec: &str, sample_rate: f64) -> ctf_dereverb::Result<StftConfig> {
    StftConfig::parse(spec, sample_rate)
        .and_then(|c| c.windows().map(|_| c))
        .map_err(|e| ctf_dereverb::Error::Config(format!("--stft {spec:?}: {e}")))
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut RunConfig) -> ctf_dereverb::Result<()> {
        if let Some(s) = &self.stft {
            let parsed = parse_stft(s, cfg.sample_rate)?;
            cfg.stft = StftSettings {
                frame_length: parsed.frame_length,
                frame_step: parsed.frame_step,
                window: parsed.window,
            };
        }
        if let Some(t) = self.t60 {
            cfg.t60 = t;
            // an explicit T60 flag beats a configured tap count unless --taps is also given
            if self.taps.is_none() {
                cfg.taps = None;
            }
        }
        if self.taps.is_some() {
            cfg.taps = self.taps;
        }
        let s = &mut cfg.solver;
        s.mu = self.mu.unwrap_or(s.mu);
        s.eps = self.eps.unwrap_or(s.eps);
        s.eps_feas = self.eps_feas.unwrap_or(s.eps_feas);
        s.max_iter = self.max_iter.unwrap_or(s.max_iter);
        if let Some(t) = self.tolerance {
            cfg.tolerance = match t {
                ToleranceArg::Auto => TolerancePolicy::Auto,
                ToleranceArg::FloorOnly => TolerancePolicy::FloorOnly,
            };
        }
        Ok(())
    }
}

impl SceneArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        cfg.channels = self.channels.unwrap_or(cfg.channels);
        if let Some(Snr(v)) = self.snr {
            cfg.snr_db = v;
        }
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.duration = self.duration.unwrap_or(cfg.duration);
        cfg.sample_rate = self.sample_rate.unwrap_or(cfg.sample_rate);
    }
}
