//! The pipeline stages as callable commands. The `harmosep` binary is a thin
//! argument-parsing layer over these functions.

use std::path::{Path, PathBuf};

use crate::dictionary::{train, Dictionary};
use crate::fixture::{generate, FixtureKind, FixtureSpec};
use crate::logspec::{read_log_cache, to_log_spectrogram, write_log_cache, LogSpectrogram, LogTransformOptions};
use crate::metrics::{bss_eval, BssScores};
use crate::parallel::Execution;
use crate::separate::{separate, SeparationResult};
use crate::signal::{read_wav, write_wav, write_wav_as, AudioClip, SampleFormat};
use crate::stft::{FreqAxis, Stft, StftConfig, StftEngine};
use crate::config::RunConfig;
use crate::{Error, Result};

/// Write through a temporary sibling file so that a failure never leaves a
/// partial file at `path`.
fn write_atomically(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    match write(&tmp).and_then(|_| std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn analyze(clip: &AudioClip, cfg: &RunConfig, exec: Execution) -> Result<(StftConfig, Stft)> {
    let stft_cfg = cfg.stft_config(clip.sample_rate_hz)?;
    let stft = StftEngine::new(&stft_cfg, exec)?.magnitude_and_phase(clip)?;
    Ok((stft_cfg, stft))
}

fn log_transform(stft_cfg: &StftConfig, stft: &Stft, cfg: &RunConfig, exec: Execution) -> Result<LogSpectrogram> {
    to_log_spectrogram(&stft.magnitude, &cfg.log_axis(), &LogTransformOptions::for_stft(stft_cfg), exec)
}

#[derive(Debug, Clone)]
pub struct TransformArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Optional grayscale image of the log-frequency spectrogram.
    pub pgm: Option<PathBuf>,
    /// Optional grayscale image of the linear-frequency spectrogram.
    pub linear_pgm: Option<PathBuf>,
}

/// WAV → log-frequency spectrogram cache.
pub fn cmd_transform(args: &TransformArgs, cfg: &RunConfig, exec: Execution) -> Result<LogSpectrogram> {
    cfg.validate()?;
    let clip = read_wav(&args.input)?;
    let (stft_cfg, stft) = analyze(&clip, cfg, exec)?;
    let u = log_transform(&stft_cfg, &stft, cfg, exec)?;
    write_atomically(&args.output, |tmp| write_log_cache(&u.grid, tmp))?;
    if let Some(p) = &args.pgm {
        u.grid.write_pgm(p)?;
    }
    if let Some(p) = &args.linear_pgm {
        stft.magnitude.write_pgm(p)?;
    }
    log::info!(
        "{}: {} frames, {} lines in total",
        args.input.display(),
        u.grid.n_frames(),
        u.lines.iter().map(Vec::len).sum::<usize>()
    );
    Ok(u)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub cache: PathBuf,
    pub output: PathBuf,
}

/// Log-spectrogram cache → dictionary file.
pub fn cmd_train(args: &TrainArgs, cfg: &RunConfig) -> Result<Dictionary> {
    cfg.validate()?;
    let u = read_log_cache(&args.cache)?;
    if !matches!(u.axis, FreqAxis::Logarithmic { .. }) || u.n_bins() != cfg.log_bins {
        return Err(Error::domain(format!(
            "cache has {} rows but the configuration expects {}",
            u.n_bins(),
            cfg.log_bins
        )));
    }
    // the line width in bins depends on the window only, not on the rate
    let sigma_nil = cfg.stft_config(48_000)?.line_sigma_bins();
    let dict = train(&u, &cfg.train_config(sigma_nil))?;
    write_atomically(&args.output, |tmp| dict.save(tmp))?;
    log::info!("kept columns {:?}", dict.kept);
    Ok(dict)
}

#[derive(Debug, Clone)]
pub struct SeparateArgs {
    pub input: PathBuf,
    pub dictionary: PathBuf,
    /// Reuse a cache written by `transform` for this input.
    pub cache: Option<PathBuf>,
}

#[derive(Debug)]
pub struct SeparateOutcome {
    pub stems: Vec<PathBuf>,
    pub report: PathBuf,
    pub result: SeparationResult,
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

/// Mixture WAV + dictionary → one WAV per instrument in the output
/// directory, named `<stem>.inst<k>.wav`, and a text report.
pub fn cmd_separate(args: &SeparateArgs, cfg: &RunConfig, exec: Execution) -> Result<SeparateOutcome> {
    cfg.validate()?;
    let dict = Dictionary::load(&args.dictionary)?;
    let clip = read_wav(&args.input)?;
    let (stft_cfg, stft) = analyze(&clip, cfg, exec)?;
    let u = match &args.cache {
        Some(p) => read_log_cache(p)?,
        None => log_transform(&stft_cfg, &stft, cfg, exec)?.grid,
    };
    let opts = cfg.separation_options(stft_cfg, exec);
    let result = separate(&u, &stft, &dict, &opts)?;

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let stem = stem_of(&args.input);
    let mut stems = Vec::new();
    for (k, signal) in result.signals.iter().enumerate() {
        let path = cfg.output_dir.join(format!("{stem}.inst{k}.wav"));
        write_atomically(&path, |tmp| write_wav(signal, tmp))?;
        stems.push(path);
    }
    let mut report = format!(
        "input {}\ndictionary {}\nframes {}\nmask {}\n",
        args.input.display(),
        args.dictionary.display(),
        result.atoms_per_frame.len(),
        cfg.use_mask
    );
    for k in 0..dict.kept.len() {
        let tones = result.atoms_per_frame.iter().flatten().filter(|a| a.pattern == k).count();
        report.push_str(&format!("instrument {k} column {} tones {tones}\n", dict.kept[k]));
    }
    let report_path = cfg.output_dir.join(format!("{stem}.report.txt"));
    write_atomically(&report_path, |tmp| std::fs::write(tmp, &report).map_err(|e| Error::io(tmp, e)))?;
    Ok(SeparateOutcome {
        stems,
        report: report_path,
        result,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub references: Vec<PathBuf>,
    pub estimates: Vec<PathBuf>,
}

/// Reference and estimated stems → SDR/SIR/SAR. Length differences are
/// resolved by zero-padding to the longest file, with a warning.
pub fn cmd_eval(args: &EvalArgs) -> Result<BssScores> {
    if args.references.len() != args.estimates.len() || args.references.is_empty() {
        return Err(Error::Config(format!(
            "{} reference files but {} estimate files",
            args.references.len(),
            args.estimates.len()
        )));
    }
    let load = |paths: &[PathBuf]| -> Result<Vec<Vec<f64>>> {
        paths.iter().map(|p| read_wav(p).map(|c| c.samples)).collect()
    };
    let mut refs = load(&args.references)?;
    let mut ests = load(&args.estimates)?;
    let len = refs.iter().chain(&ests).map(Vec::len).max().unwrap_or(0);
    for (v, path) in refs.iter_mut().chain(ests.iter_mut()).zip(args.references.iter().chain(&args.estimates)) {
        if v.len() != len {
            log::warn!("{} has {} samples; zero-padding to {len}", path.display(), v.len());
            v.resize(len, 0.0);
        }
    }
    bss_eval(&refs, &ests)
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub kind: FixtureKind,
    pub duration_s: f64,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub stem: String,
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub mix: PathBuf,
    pub references: Vec<PathBuf>,
    /// Dictionary holding the true instrument profiles.
    pub dictionary: PathBuf,
}

/// Write a synthetic mixture, its sources (32-bit float WAV, so the mixture
/// is exactly their sum) and the matching dictionary to the output directory.
pub fn cmd_synth(args: &SynthArgs, cfg: &RunConfig) -> Result<SynthOutcome> {
    let spec = FixtureSpec {
        kind: args.kind,
        sample_rate_hz: args.sample_rate_hz,
        duration_s: args.duration_s,
        seed: args.seed,
        n_har: cfg.n_har,
        ..FixtureSpec::melody(args.duration_s, args.seed)
    };
    crate::signal::check_supported_rate(spec.sample_rate_hz)?;
    let fixture = generate(&spec)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mix = dir.join(format!("{}.mix.wav", args.stem));
    write_wav_as(&fixture.mix, &mix, SampleFormat::Float32)?;
    let mut references = Vec::new();
    for (k, s) in fixture.sources.iter().enumerate() {
        let p = dir.join(format!("{}.ref{k}.wav", args.stem));
        write_wav_as(s, &p, SampleFormat::Float32)?;
        references.push(p);
    }
    let dictionary = dir.join(format!("{}.dict.txt", args.stem));
    Dictionary::from_columns(&fixture.profiles)?.save(&dictionary)?;
    Ok(SynthOutcome {
        mix,
        references,
        dictionary,
    })
}
