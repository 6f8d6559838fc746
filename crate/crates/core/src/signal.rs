//! PCM audio I/O and synthetic harmonic tones.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rates the frequency-axis constants are defined for.
pub const SUPPORTED_RATES: [u32; 2] = [44_100, 48_000];

/// Length of the raised-cosine fade applied to synthetic tones.
pub const FADE_SECONDS: f64 = 0.010;

/// A mono clip with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Truncate or zero-pad to `len` samples.
    pub fn fit_to_len(&mut self, len: usize) {
        self.samples.resize(len, 0.0);
    }
}

pub fn check_supported_rate(rate: u32) -> Result<()> {
    if SUPPORTED_RATES.contains(&rate) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "sample rate {rate} Hz is not supported (expected 44100 or 48000)"
        )))
    }
}

/// On-disk sample encoding for [`write_wav_as`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleFormat {
    #[default]
    Int16,
    Float32,
}

/// Read a PCM WAV file, averaging channels down to mono.
///
/// 16-bit integer samples are scaled by 2^-15; 32-bit float samples are taken
/// as-is.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file))
        .map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::format(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::format(
                path,
                format!("unsupported encoding {fmt:?} {bits}-bit"),
            ))
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;

    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioClip::new(samples, spec.sample_rate).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    write_wav_as(clip, path, SampleFormat::Int16)
}

/// Write a mono WAV file with the given sample encoding. Samples outside
/// `[-1, 1]` are clamped and a warning is logged.
pub fn write_wav_as(clip: &AudioClip, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let (bits, sample_format) = match format {
        SampleFormat::Int16 => (16, hound::SampleFormat::Int),
        SampleFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: bits,
        sample_format,
    };
    let clipped = clip.samples.iter().filter(|s| s.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!(
            "{}: {clipped} samples outside [-1, 1] were clamped",
            path.display()
        );
    }
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        let s = s.clamp(-1.0, 1.0);
        match format {
            SampleFormat::Int16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(to_io)?;
            }
            SampleFormat::Float32 => writer.write_sample(s as f32).map_err(to_io)?,
        }
    }
    writer.finalize().map_err(to_io)
}

/// Frequency of partial `h` (1-based) of a stiff string with fundamental `f1`
/// and inharmonicity `b`.
pub fn partial_frequency(f1: f64, h: usize, b: f64) -> f64 {
    let h = h as f64;
    (1.0 + b * h * h).sqrt() * h * f1
}

/// Synthesize `Σ_h amplitudes[h]·sin(2π f_h t + phases[h])` with partial
/// frequencies from [`partial_frequency`].
///
/// Partials at or above Nyquist are dropped, a 10 ms raised-cosine fade is
/// applied at both ends, and the result is peak-normalized to 0.5. Missing
/// phases default to zero.
pub fn synth_harmonic_tone(
    f1_hz: f64,
    amplitudes: &[f64],
    b: f64,
    duration_s: f64,
    sample_rate_hz: u32,
    phases: &[f64],
) -> Result<AudioClip> {
    if !(f1_hz > 0.0) || !f1_hz.is_finite() {
        return Err(Error::domain(format!("fundamental {f1_hz} Hz must be positive")));
    }
    if !(b >= 0.0) {
        return Err(Error::domain(format!("inharmonicity {b} must be non-negative")));
    }
    if !(duration_s > 0.0) {
        return Err(Error::domain("duration must be positive"));
    }
    if sample_rate_hz == 0 {
        return Err(Error::domain("sample rate must be positive"));
    }
    let fs = sample_rate_hz as f64;
    let nyquist = fs / 2.0;
    let len = (duration_s * fs).round() as usize;

    let partials: Vec<(f64, f64, f64)> = amplitudes
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let f = partial_frequency(f1_hz, i + 1, b);
            (f, a, phases.get(i).copied().unwrap_or(0.0))
        })
        .filter(|&(f, a, _)| f < nyquist && a != 0.0)
        .collect();

    let mut samples = vec![0.0; len];
    for &(f, a, phi) in &partials {
        let w = 2.0 * PI * f / fs;
        for (n, s) in samples.iter_mut().enumerate() {
            *s += a * (w * n as f64 + phi).sin();
        }
    }

    apply_fade(&mut samples, (FADE_SECONDS * fs).round() as usize);

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = 0.5 / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    AudioClip::new(samples, sample_rate_hz)
}

fn apply_fade(samples: &mut [f64], fade: usize) {
    let fade = fade.min(samples.len() / 2);
    if fade == 0 {
        return;
    }
    let len = samples.len();
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * (i as f64 + 0.5) / fade as f64).cos();
        samples[i] *= g;
        samples[len - 1 - i] *= g;
    }
}
