use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use ctf_dereverb::ctf::CtfSet;
use ctf_dereverb::identify::identify_all_bands;
use ctf_dereverb::inverse::{dereverberate, INITIAL_DUAL};
use ctf_dereverb::io::{
    export_ctf, import_ctf, read_json, read_noise, read_wav, write_json, write_noise, write_wav,
    ProblemFile,
};
use ctf_dereverb::metrics::evaluate;
use ctf_dereverb::pipeline::{analyze, run_pipeline, run_sweep, true_critical_ctf};
use ctf_dereverb::solver::{solve_l1_ball, solve_nnls, ConvexProblem, FitMatrix};
use ctf_dereverb::{
    Audio, EvalReport, NoiseProfile, RunConfig, Sampling, SolverStatus, StftConfig, SweepGrid,
    WavEncoding,
};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::Failure;

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let base = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => synth(base, a),
        Command::Identify(a) => identify(base, a),
        Command::Dereverb(a) => dereverb(base, a),
        Command::Eval(a) => eval(base, a),
        Command::Pipeline(a) => pipeline(base, a),
        Command::Sweep(a) => sweep(base, a),
        Command::Ctf(CtfCommand::Export(a)) => ctf_export(base, a),
        Command::Ctf(CtfCommand::Import(a)) => ctf_import(a),
        Command::Solve(a) => solve(base, a),
    }
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    require_file(path)?;
    read_json(path).map_err(|e| Failure::Usage(anyhow::anyhow!("config {}: {e}", path.display())))
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("no such file: {}", path.display())))
    }
}

fn input_wav(path: &Path) -> Outcome<Audio> {
    require_file(path)?;
    read_wav(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Runtime)
}

fn output_wav(path: &Path, audio: &Audio, encoding: WavEncoding) -> Outcome {
    write_wav(path, audio, encoding)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

/// Writes `value` as JSON to `path`, or pretty-prints it to stdout.
fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Outcome {
    match path {
        Some(p) => write_json(p, value)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::Runtime),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
            println!("{text}");
            Ok(())
        }
    }
}

fn out_dir(dir: &Path) -> Outcome<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

fn sample_rate_u32(fs: f64) -> Outcome<u32> {
    if fs.fract() != 0.0 || fs <= 0.0 || fs > u32::MAX as f64 {
        return Err(Failure::usage(format!("sample rate {fs} is not a positive integer")));
    }
    Ok(fs as u32)
}

/// Configuration for a recording: its sample rate and channel count win
/// over the file config, flags win over both.
/// A configuration the core rejects is a usage error whatever the variant.
fn checked(cfg: RunConfig) -> Outcome<RunConfig> {
    cfg.validate()
        .and_then(|_| cfg.stft_config()?.windows().map(drop))
        .map_err(|e| Failure::Usage(e.into()))?;
    let (n, l) = (cfg.stft.frame_length, cfg.stft.frame_step);
    if n % l != 0 {
        // critical filters take every (N/L)-th oversampled tap
        return Err(Failure::usage(format!("frame length {n} is not a multiple of step {l}")));
    }
    Ok(cfg)
}

fn config_for(mut cfg: RunConfig, run: &RunArgs, audio: &Audio) -> Outcome<RunConfig> {
    cfg.sample_rate = audio.sample_rate as f64;
    cfg.channels = audio.num_channels();
    run.apply(&mut cfg)?;
    checked(cfg)
}

fn config_for_scene(mut cfg: RunConfig, run: &RunArgs, scene: &SceneArgs) -> Outcome<RunConfig> {
    scene.apply(&mut cfg);
    run.apply(&mut cfg)?;
    checked(cfg)
}

fn stft_for(cfg: &RunConfig, spec: Option<&str>, sample_rate: f64) -> Outcome<StftConfig> {
    Ok(match spec {
        Some(s) => parse_stft(s, sample_rate)?,
        None => RunConfig { sample_rate, ..cfg.clone() }.stft_config()?,
    })
}

fn synth(base: RunConfig, a: &SynthArgs) -> Outcome {
    let cfg = config_for_scene(base, &a.run, &a.scene)?;
    let stft = cfg.stft_config()?;
    let fs = sample_rate_u32(cfg.sample_rate)?;
    let scene = ctf_dereverb::synth::synth_scene(&cfg.scene_spec(), &stft)?;
    let dir = out_dir(&a.out_dir)?;
    let enc = a.encoding.into();
    output_wav(&dir.join("mics.wav"), &Audio::new(fs, scene.mics.clone())?, enc)?;
    output_wav(&dir.join("source.wav"), &Audio::new(fs, vec![scene.source.clone()])?, enc)?;
    output_wav(
        &dir.join("reference.wav"),
        &Audio::new(fs, vec![scene.early_reference.clone()])?,
        enc,
    )?;
    // impulse responses always go out as float; the direct tap sits at full scale
    let longest = scene.rirs.iter().map(Vec::len).max().unwrap_or(0);
    let rirs = scene
        .rirs
        .iter()
        .map(|h| {
            let mut h = h.clone();
            h.resize(longest, 0.0);
            h
        })
        .collect();
    output_wav(&dir.join("rirs.wav"), &Audio::new(fs, rirs)?, WavEncoding::Float32)?;
    export_ctf(dir.join("ctf.json"), &true_critical_ctf(&scene.rirs, &stft)?)?;
    write_noise(dir.join("noise.json"), &scene.noise, stft.frame_length)?;
    write_json(dir.join("scene.json"), &cfg)?;
    log::info!("scene written to {}", dir.display());
    Ok(())
}

fn identify(base: RunConfig, a: &IdentifyArgs) -> Outcome {
    let audio = input_wav(&a.input)?;
    let cfg = config_for(base, &a.run, &audio)?;
    let stft = cfg.stft_config()?;
    let taps = cfg.filter_length()?;
    let specs = analyze(&audio.channels, &stft)?;
    let (set, report) = identify_all_bands(&specs, taps)?;
    export_ctf(&a.out, &set)?;
    let degenerate = report.degenerate_bands();
    if !degenerate.is_empty() {
        log::warn!("{} degenerate bands: {:?}", degenerate.len(), degenerate);
    }
    if let Some(p) = &a.report {
        emit_json(Some(p), &report)?;
    }
    Ok(())
}

fn load_noise(path: Option<&Path>, ctf: &CtfSet) -> Outcome<NoiseProfile> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(read_noise(p)?)
        }
        None => Ok(NoiseProfile::zeros(ctf.bands(), ctf.channels())),
    }
}

fn load_ctf(path: &Path) -> Outcome<CtfSet> {
    require_file(path)?;
    Ok(import_ctf(path)?)
}

fn dereverb(base: RunConfig, a: &DereverbArgs) -> Outcome {
    let audio = input_wav(&a.input)?;
    let cfg = config_for(base, &a.run, &audio)?;
    let stft = cfg.stft_config()?;
    let ctf = load_ctf(&a.ctf)?;
    if ctf.frame_length != stft.frame_length {
        return Err(Failure::usage(format!(
            "filters were made for frame length {}, STFT uses {}",
            ctf.frame_length, stft.frame_length
        )));
    }
    let noise = load_noise(a.noise_psd.as_deref(), &ctf)?;
    let specs = analyze(&audio.channels, &stft)?;
    let out = dereverberate(&specs, &ctf, &noise, &cfg.inverse_options())?;
    output_wav(&a.out, &Audio::new(audio.sample_rate, vec![out.signal])?, a.encoding.into())?;
    let unconverged = out.report.unconverged_bands();
    if !unconverged.is_empty() {
        log::warn!("{} bands hit the iteration limit", unconverged.len());
    }
    if let Some(p) = &a.report {
        emit_json(Some(p), &out.report)?;
    }
    Ok(())
}

fn eval(base: RunConfig, a: &EvalArgs) -> Outcome {
    let reference = input_wav(&a.reference)?;
    let estimate = input_wav(&a.estimate)?;
    if reference.sample_rate != estimate.sample_rate {
        return Err(Failure::usage(format!(
            "sample rates differ: {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    let Some(est) = estimate.channels.get(a.channel) else {
        return Err(Failure::usage(format!(
            "estimate has {} channels, asked for {}",
            estimate.num_channels(),
            a.channel
        )));
    };
    let stft = stft_for(&base, a.stft.as_deref(), reference.sample_rate as f64)?;
    let report = evaluate(&reference.channels[0], est, &stft)?;
    emit_json(a.report.as_deref(), &report)
}

#[derive(Serialize)]
struct FileRunReport {
    channels: usize,
    taps: usize,
    filter_ms: f64,
    degenerate_bands: Vec<usize>,
    unconverged_bands: Vec<usize>,
    fallback_bands: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unprocessed: Option<EvalReport>,
    runtime_s: f64,
}

fn pipeline(base: RunConfig, a: &PipelineArgs) -> Outcome {
    let dir = a.out_dir.as_deref().map(out_dir).transpose()?;
    let enc: WavEncoding = a.encoding.into();
    let Some(input) = &a.input else {
        let cfg = config_for_scene(base, &a.run, &a.scene)?;
        let fs = sample_rate_u32(cfg.sample_rate)?;
        let (report, scene, processed) = run_pipeline(&cfg)?;
        if let Some(dir) = &dir {
            output_wav(&dir.join("mics.wav"), &Audio::new(fs, scene.mics)?, enc)?;
            output_wav(&dir.join("reference.wav"), &Audio::new(fs, vec![scene.early_reference])?, enc)?;
            output_wav(&dir.join("estimate.wav"), &Audio::new(fs, vec![processed.estimate])?, enc)?;
            export_ctf(dir.join("ctf.json"), &processed.ctf)?;
            write_json(dir.join("report.json"), &report)?;
        }
        return emit_json(None, &report);
    };

    let start = Instant::now();
    let audio = input_wav(input)?;
    let cfg = config_for(base, &a.run, &audio)?;
    let stft = cfg.stft_config()?;
    let taps = cfg.filter_length()?;
    let reference = a.reference.as_deref().map(input_wav).transpose()?;
    let specs = analyze(&audio.channels, &stft)?;
    let (ctf, ident) = identify_all_bands(&specs, taps)?;
    let noise = load_noise(a.noise_psd.as_deref(), &ctf)?;
    let out = dereverberate(&specs, &ctf, &noise, &cfg.inverse_options())?;
    let (evaluation, unprocessed) = match &reference {
        Some(r) => (
            Some(evaluate(&r.channels[0], &out.signal, &stft)?),
            Some(evaluate(&r.channels[0], &audio.channels[0], &stft)?),
        ),
        None => (None, None),
    };
    let report = FileRunReport {
        channels: audio.num_channels(),
        taps,
        filter_ms: 1000.0 * (taps * stft.frame_length) as f64 / stft.sample_rate,
        degenerate_bands: ident.degenerate_bands(),
        unconverged_bands: out.report.unconverged_bands(),
        fallback_bands: out.report.fallback_bands(),
        evaluation,
        unprocessed,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &dir {
        output_wav(&dir.join("estimate.wav"), &Audio::new(audio.sample_rate, vec![out.signal])?, enc)?;
        export_ctf(dir.join("ctf.json"), &ctf)?;
        write_json(dir.join("report.json"), &report)?;
    }
    emit_json(None, &report)
}

fn sweep(base: RunConfig, a: &SweepArgs) -> Outcome {
    let cfg = config_for_scene(base, &a.run, &a.scene)?;
    let mut grid = match &a.grid {
        Some(p) => {
            require_file(p)?;
            read_json::<SweepGrid>(p)
                .map_err(|e| Failure::Usage(anyhow::anyhow!("grid {}: {e}", p.display())))?
        }
        None => SweepGrid::default(),
    };
    if !a.filter_ms.is_empty() {
        grid.filter_ms = a.filter_ms.clone();
    }
    if !a.snrs.is_empty() {
        grid.snr_db = a.snrs.iter().map(|s| s.0).collect();
    }
    if !a.seeds.is_empty() {
        grid.seeds = a.seeds.clone();
    }
    if grid.filter_ms.iter().any(|v| !(*v > 0.0)) {
        return Err(Failure::usage("filter spans must be positive"));
    }
    let reports = match &a.out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            run_sweep(&cfg, &grid, file)?
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let r = run_sweep(&cfg, &grid, &mut lock)?;
            lock.flush()?;
            r
        }
    };
    log::info!("{} sweep points", reports.len());
    Ok(())
}

fn ctf_export(base: RunConfig, a: &CtfExportArgs) -> Outcome {
    let rirs = input_wav(&a.rir)?;
    let stft = stft_for(&base, a.stft.as_deref(), rirs.sample_rate as f64)?;
    let set = if a.oversampled {
        CtfSet::from_rirs(&rirs.channels, &stft)?
    } else {
        true_critical_ctf(&rirs.channels, &stft)?
    };
    export_ctf(&a.out, &set)?;
    Ok(())
}

fn ctf_import(a: &CtfImportArgs) -> Outcome {
    let set = load_ctf(&a.input)?;
    let tap_step = match set.sampling {
        Sampling::Critical => set.frame_length,
        Sampling::Oversampled { step } => step,
    };
    let energy: f64 = set
        .taps
        .iter()
        .flatten()
        .flatten()
        .map(|v| v.norm_sqr())
        .sum();
    let summary = json!({
        "frame_length": set.frame_length,
        "sampling": set.sampling,
        "tap_step": tap_step,
        "noncausal": set.noncausal,
        "bands": set.bands(),
        "channels": set.channels(),
        "taps": set.tap_count(),
        "normalization": set.normalization,
        "degenerate": set.degenerate,
        "energy": energy,
    });
    emit_json(a.out.as_deref(), &summary)
}

fn parse_numbers(text: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            line.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .with_context(|| format!("row {}: bad number {t:?}", i + 1))
                })
                .collect()
        })
        .collect()
}

fn read_numbers(path: &Path) -> Outcome<Vec<Vec<f64>>> {
    require_file(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_numbers(&text).map_err(|e| Failure::Usage(e.context(path.display().to_string())))
}

fn load_problem(a: &SolveArgs) -> Outcome<ProblemFile> {
    if let Some(p) = &a.file {
        require_file(p)?;
        let mut file: ProblemFile = read_json(p)
            .map_err(|e| Failure::Usage(anyhow::anyhow!("problem {}: {e}", p.display())))?;
        if a.delta.is_some() {
            file.delta = a.delta;
        }
        return Ok(file);
    }
    let (Some(m), Some(r)) = (&a.matrix, &a.rhs) else {
        return Err(Failure::usage("give --file or both --matrix and --rhs"));
    };
    let matrix = read_numbers(m)?;
    let target = read_numbers(r)?.into_iter().flatten().collect();
    Ok(ProblemFile {
        matrix,
        target,
        delta: a.delta,
    })
}

fn solve(base: RunConfig, a: &SolveArgs) -> Outcome {
    let mut cfg = base;
    a.run.apply(&mut cfg)?;
    let params = cfg.solver;
    params.validate()?;
    let file = load_problem(a)?;
    let fit = FitMatrix::dense(file.matrix.clone()).map_err(|e| Failure::Usage(e.into()))?;
    let nnls_problem =
        ConvexProblem::nnls(fit, file.target.clone()).map_err(|e| Failure::Usage(e.into()))?;
    let n = nnls_problem.dim();
    let nnls = solve_nnls(&nnls_problem, &params, &vec![1.0; n], &vec![INITIAL_DUAL; n])?;
    let (problem, result) = match a.problem {
        ProblemKind::Nnls => (nnls_problem, nnls),
        ProblemKind::L1ball => {
            let Some(delta) = file.delta else {
                return Err(Failure::usage("l1ball needs --delta or a delta in the problem file"));
            };
            let ball = nnls_problem.with_ball(delta).map_err(|e| Failure::Usage(e.into()))?;
            let start: Vec<f64> = nnls.s.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
            let mut lambda0: Vec<f64> = nnls.lambda.iter().map(|l| 1.0 + l.max(0.0)).collect();
            lambda0.push(1.0);
            let r = solve_l1_ball(&ball, &params, &start, &lambda0)?;
            (ball, r)
        }
    };
    let summary = json!({
        "status": result.status,
        "iterations": result.iterations,
        "objective": result.objective,
        "misfit": problem.misfit(&result.s),
        "l1_norm": result.s.iter().sum::<f64>(),
        "gap": result.gap,
        "dual_residual": result.dual_residual,
        "s": result.s,
    });
    emit_json(a.out.as_deref(), &summary)?;
    if result.status == SolverStatus::Converged {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("solver stopped: {:?}", result.status)))
    }
}
