//! Gaussian-window STFT magnitude spectrograms and Griffin-Lim resynthesis.
//!
//! Frame `t` is centered on sample `t·hop`; samples outside the clip are
//! treated as zero. The FFT length equals the window length, and only the
//! non-negative frequency bins `0..=N/2` are kept.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::signal::{check_supported_rate, AudioClip};

/// Analysis parameters. The defaults give a 12288-sample window and FFT
/// (±6 standard deviations of a Gaussian with ζ = 1024 samples) and a hop
/// of 256 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    /// Standard deviation of the Gaussian window, in samples.
    pub zeta_samples: f64,
    pub hop_samples: usize,
    /// Window cut-off as a multiple of ζ on either side of the center.
    pub window_halfwidth: f64,
}

impl StftConfig {
    pub fn new(sample_rate_hz: u32) -> Result<Self> {
        check_supported_rate(sample_rate_hz)?;
        Ok(Self {
            sample_rate_hz,
            zeta_samples: 1024.0,
            hop_samples: 256,
            window_halfwidth: 6.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.hop_samples == 0 || !(self.zeta_samples > 0.0) {
            return Err(Error::domain("STFT parameters must be positive"));
        }
        let n = 2.0 * self.window_halfwidth * self.zeta_samples;
        if n.fract() != 0.0 || (n as usize) % 2 != 0 || n < 2.0 {
            return Err(Error::domain(format!(
                "window length {n} must be an even integer"
            )));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (2.0 * self.window_halfwidth * self.zeta_samples).round() as usize
    }

    pub fn fft_len(&self) -> usize {
        self.window_len()
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len() / 2 + 1
    }

    /// Frequency spacing F of the bins, in Hz.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.fft_len() as f64
    }

    /// Time spacing T of the frames, in seconds.
    pub fn frame_period_s(&self) -> f64 {
        self.hop_samples as f64 / self.sample_rate_hz as f64
    }

    /// Standard deviation, in bins, of the Gaussian line a stationary
    /// sinusoid leaves in each frame.
    pub fn line_sigma_bins(&self) -> f64 {
        self.fft_len() as f64 / (2.0 * PI * self.zeta_samples)
    }

    pub fn n_frames(&self, signal_len: usize) -> usize {
        signal_len / self.hop_samples + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len();
        let c = n as f64 / 2.0;
        (0..n)
            .map(|k| {
                let d = k as f64 - c;
                (-d * d / (2.0 * self.zeta_samples * self.zeta_samples)).exp()
            })
            .collect()
    }
}

/// Frequency axis of a [`SpectrogramGrid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FreqAxis {
    /// Row `k` sits at `k·bin_hz` Hz.
    Linear { bin_hz: f64 },
    /// Row `α` sits at linear bin `f0·2^(α/alpha0)`, i.e. at
    /// `f0·2^(α/alpha0)·bin_hz` Hz.
    Logarithmic { f0: f64, alpha0: f64, bin_hz: f64 },
}

/// Nonnegative magnitudes indexed by (frequency row, frame). Frames are stored
/// contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramGrid {
    n_bins: usize,
    n_frames: usize,
    values: Vec<f64>,
    pub axis: FreqAxis,
    pub frame_period_s: f64,
}

impl SpectrogramGrid {
    pub fn zeros(n_bins: usize, n_frames: usize, axis: FreqAxis, frame_period_s: f64) -> Self {
        Self {
            n_bins,
            n_frames,
            values: vec![0.0; n_bins * n_frames],
            axis,
            frame_period_s,
        }
    }

    /// Build from per-frame columns, each of length `n_bins`.
    pub fn from_frames(
        n_bins: usize,
        frames: Vec<Vec<f64>>,
        axis: FreqAxis,
        frame_period_s: f64,
    ) -> Result<Self> {
        let n_frames = frames.len();
        let mut values = Vec::with_capacity(n_bins * n_frames);
        for (t, col) in frames.into_iter().enumerate() {
            if col.len() != n_bins {
                return Err(Error::domain(format!(
                    "frame {t} has {} rows, expected {n_bins}",
                    col.len()
                )));
            }
            values.extend(col);
        }
        Ok(Self {
            n_bins,
            n_frames,
            values,
            axis,
            frame_period_s,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.n_bins + bin]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_bins == other.n_bins && self.n_frames == other.n_frames
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Write an 8-bit binary PGM image: one column per frame, high
    /// frequencies at the top, log amplitude over a 100 dB range with the
    /// maximum drawn black.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        const RANGE_DB: f64 = 100.0;
        let path = path.as_ref();
        let max = self.max_value();
        let mut pixels = Vec::with_capacity(self.n_bins * self.n_frames);
        for row in (0..self.n_bins).rev() {
            for t in 0..self.n_frames {
                let v = self.get(row, t);
                let db = if max > 0.0 && v > 0.0 {
                    (20.0 * (v / max).log10()).max(-RANGE_DB)
                } else {
                    -RANGE_DB
                };
                pixels.push((255.0 * (-db / RANGE_DB)).round() as u8);
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write!(f, "P5\n{} {}\n255\n", self.n_frames, self.n_bins).map_err(|e| Error::io(path, e))?;
        f.write_all(&pixels).map_err(|e| Error::io(path, e))
    }
}

/// Phases (radians) of an STFT, together with the length of the signal it
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub n_bins: usize,
    pub n_frames: usize,
    pub signal_len: usize,
    pub values: Vec<f64>,
}

impl PhaseGrid {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn zeros(n_bins: usize, n_frames: usize, signal_len: usize) -> Self {
        Self {
            n_bins,
            n_frames,
            signal_len,
            values: vec![0.0; n_bins * n_frames],
        }
    }
}

/// Output of [`stft_magnitude`].
#[derive(Debug, Clone)]
pub struct Stft {
    pub magnitude: SpectrogramGrid,
    pub phase: PhaseGrid,
}

/// Reusable forward/inverse transform for one configuration.
pub struct StftEngine {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    exec: Execution,
}

impl StftEngine {
    pub fn new(cfg: &StftConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let n = cfg.fft_len();
        Ok(Self {
            cfg: cfg.clone(),
            window: cfg.window(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            exec,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    fn frame_spectrum(&self, x: &[f64], t: usize) -> Vec<Complex<f64>> {
        let n = self.cfg.fft_len();
        let start = (t * self.cfg.hop_samples) as isize - (n / 2) as isize;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let i = start + k as isize;
                let v = if i >= 0 && (i as usize) < x.len() {
                    x[i as usize] * self.window[k]
                } else {
                    0.0
                };
                Complex::new(v, 0.0)
            })
            .collect();
        self.forward.process(&mut buf);
        buf.truncate(self.cfg.n_bins());
        buf
    }

    /// Complex STFT, frames contiguous.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n_frames = self.cfg.n_frames(x.len());
        map_indexed(self.exec, n_frames, |t| self.frame_spectrum(x, t))
    }

    pub fn magnitude_and_phase(&self, clip: &AudioClip) -> Result<Stft> {
        if clip.len() < self.cfg.window_len() {
            return Err(Error::domain(format!(
                "clip of {} samples is shorter than the {}-sample window",
                clip.len(),
                self.cfg.window_len()
            )));
        }
        let spectra = self.analyze(&clip.samples);
        let n_bins = self.cfg.n_bins();
        let n_frames = spectra.len();
        let mut mag = Vec::with_capacity(n_bins * n_frames);
        let mut phase = Vec::with_capacity(n_bins * n_frames);
        for col in &spectra {
            for c in col {
                mag.push(c.norm());
                phase.push(c.arg());
            }
        }
        Ok(Stft {
            magnitude: SpectrogramGrid {
                n_bins,
                n_frames,
                values: mag,
                axis: FreqAxis::Linear {
                    bin_hz: self.cfg.bin_hz(),
                },
                frame_period_s: self.cfg.frame_period_s(),
            },
            phase: PhaseGrid {
                n_bins,
                n_frames,
                signal_len: clip.len(),
                values: phase,
            },
        })
    }

    /// Least-squares inverse: overlap-add of windowed inverse FFTs divided by
    /// the summed squared window.
    pub fn synthesize<F>(&self, n_frames: usize, signal_len: usize, spectrum: F) -> Vec<f64>
    where
        F: Fn(usize) -> Vec<Complex<f64>> + Sync + Send,
    {
        const BLOCK: usize = 64;
        let n = self.cfg.fft_len();
        let hop = self.cfg.hop_samples;
        let half = n / 2;
        let mut num = vec![0.0; signal_len];
        let mut den = vec![0.0; signal_len];
        let mut t0 = 0;
        while t0 < n_frames {
            let count = BLOCK.min(n_frames - t0);
            let frames = map_indexed(self.exec, count, |i| {
                let half_spec = spectrum(t0 + i);
                let mut buf = vec![Complex::new(0.0, 0.0); n];
                buf[..=half].copy_from_slice(&half_spec[..=half]);
                for k in 1..half {
                    buf[n - k] = half_spec[k].conj();
                }
                // keep the result real
                buf[0].im = 0.0;
                buf[half].im = 0.0;
                self.inverse.process(&mut buf);
                buf.iter().map(|c| c.re / n as f64).collect::<Vec<f64>>()
            });
            for (i, frame) in frames.into_iter().enumerate() {
                let start = ((t0 + i) * hop) as isize - half as isize;
                for (k, v) in frame.into_iter().enumerate() {
                    let idx = start + k as isize;
                    if idx >= 0 && (idx as usize) < signal_len {
                        let w = self.window[k];
                        num[idx as usize] += w * v;
                        den[idx as usize] += w * w;
                    }
                }
            }
            t0 += count;
        }
        num.iter()
            .zip(&den)
            .map(|(&a, &d)| if d > 1e-300 { a / d } else { 0.0 })
            .collect()
    }
}

/// Magnitude (not power) spectrogram and phase of `clip`.
pub fn stft_magnitude(clip: &AudioClip, cfg: &StftConfig) -> Result<Stft> {
    StftEngine::new(cfg, Execution::default())?.magnitude_and_phase(clip)
}

/// Griffin-Lim resynthesis starting from `initial_phase`.
pub fn griffin_lim(
    target: &SpectrogramGrid,
    initial_phase: &PhaseGrid,
    iterations: usize,
    cfg: &StftConfig,
) -> Result<AudioClip> {
    griffin_lim_with(target, initial_phase, iterations, cfg, Execution::default(), false)
        .map(|(clip, _)| clip)
}

/// Griffin-Lim with execution control. When `track_error` is set, the
/// returned vector holds `‖|STFT(x_k)| − target‖₂` after every iteration.
pub fn griffin_lim_with(
    target: &SpectrogramGrid,
    initial_phase: &PhaseGrid,
    iterations: usize,
    cfg: &StftConfig,
    exec: Execution,
    track_error: bool,
) -> Result<(AudioClip, Vec<f64>)> {
    if iterations == 0 {
        return Err(Error::domain("Griffin-Lim needs at least one iteration"));
    }
    let engine = StftEngine::new(cfg, exec)?;
    let n_bins = cfg.n_bins();
    if target.n_bins() != n_bins
        || initial_phase.n_bins != n_bins
        || target.n_frames() != initial_phase.n_frames
        || cfg.n_frames(initial_phase.signal_len) != target.n_frames()
    {
        return Err(Error::domain(format!(
            "grid {}x{} / phase {}x{} (signal {}) do not match the STFT configuration",
            target.n_bins(),
            target.n_frames(),
            initial_phase.n_bins,
            initial_phase.n_frames,
            initial_phase.signal_len
        )));
    }
    let len = initial_phase.signal_len;
    let n_frames = target.n_frames();

    let mut phases: Vec<Vec<Complex<f64>>> = (0..n_frames)
        .map(|t| initial_phase.frame(t).iter().map(|&p| Complex::from_polar(1.0, p)).collect())
        .collect();
    let mut errors = Vec::new();
    let mut x = Vec::new();
    for it in 0..iterations {
        x = engine.synthesize(n_frames, len, |t| {
            target
                .frame(t)
                .iter()
                .zip(&phases[t])
                .map(|(&m, &u)| u * m)
                .collect()
        });
        let last = it + 1 == iterations;
        if last && !track_error {
            break;
        }
        let spectra = engine.analyze(&x);
        if track_error {
            let err: f64 = spectra
                .iter()
                .enumerate()
                .map(|(t, col)| {
                    col.iter()
                        .zip(target.frame(t))
                        .map(|(c, &m)| (c.norm() - m).powi(2))
                        .sum::<f64>()
                })
                .sum();
            errors.push(err.sqrt());
        }
        for (dst, col) in phases.iter_mut().zip(spectra) {
            for (u, c) in dst.iter_mut().zip(col) {
                let r = c.norm();
                *u = if r > 0.0 { c / r } else { Complex::new(1.0, 0.0) };
            }
        }
    }
    Ok((AudioClip::new(x, cfg.sample_rate_hz)?, errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small configuration for fast tests: ζ = 64, window 768, hop 32.
    fn small_cfg() -> StftConfig {
        StftConfig {
            sample_rate_hz: 48_000,
            zeta_samples: 64.0,
            hop_samples: 32,
            window_halfwidth: 6.0,
        }
    }

    fn noise(len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 48_000).unwrap()
    }

    #[test]
    fn default_constants() {
        let cfg = StftConfig::new(48_000).unwrap();
        assert_eq!(cfg.window_len(), 12_288);
        assert_eq!(cfg.n_bins(), 6145);
        assert!((cfg.bin_hz() - 3.90625).abs() < 1e-12);
        assert!((cfg.frame_period_s() - 256.0 / 48_000.0).abs() < 1e-15);
        let cd = StftConfig::new(44_100).unwrap();
        assert!((cd.bin_hz() - 44_100.0 / 12_288.0).abs() < 1e-12);
        assert!(StftConfig::new(32_000).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_grid() {
        let s = stft_magnitude(&AudioClip::silence(2000, 48_000), &small_cfg()).unwrap();
        assert!(s.magnitude.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(stft_magnitude(&AudioClip::silence(100, 48_000), &small_cfg()).is_err());
    }

    #[test]
    fn homogeneity() {
        let x = noise(3000, 1);
        let mut x2 = x.clone();
        x2.samples.iter_mut().for_each(|s| *s *= 2.0);
        let a = stft_magnitude(&x, &small_cfg()).unwrap().magnitude;
        let b = stft_magnitude(&x2, &small_cfg()).unwrap().magnitude;
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((v - 2.0 * u).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn sinusoid_gives_gaussian_line() {
        // A real cosine of amplitude 2 contributes a complex exponential of
        // unit amplitude at +ν; its line is a Gaussian of height √(2π)ζ and
        // standard deviation N/(2πζ) bins.
        let cfg = small_cfg();
        let nu_bins = 100.3;
        let f = nu_bins * cfg.bin_hz();
        let x: Vec<f64> = (0..4000)
            .map(|n| 2.0 * (2.0 * PI * f * n as f64 / 48_000.0).cos())
            .collect();
        let s = stft_magnitude(&AudioClip::new(x, 48_000).unwrap(), &cfg).unwrap();
        let col = s.magnitude.frame(60);
        let sigma = cfg.line_sigma_bins();
        let height = (2.0 * PI).sqrt() * cfg.zeta_samples;
        for k in 90..111 {
            let d = k as f64 - nu_bins;
            let expected = height * (-d * d / (2.0 * sigma * sigma)).exp();
            assert!(
                (col[k] - expected).abs() < 1e-6 * height,
                "bin {k}: {} vs {expected}",
                col[k]
            );
        }
        // energy of the column against the closed-form Gaussian integral
        let energy: f64 = col.iter().map(|v| v * v).sum();
        let analytic = height * height * sigma * PI.sqrt();
        assert!((energy / analytic - 1.0).abs() < 0.01);
    }

    #[test]
    fn consistent_pair_is_a_fixed_point() {
        let cfg = small_cfg();
        let x = noise(4000, 2);
        let s = stft_magnitude(&x, &cfg).unwrap();
        let y = griffin_lim(&s.magnitude, &s.phase, 1, &cfg).unwrap();
        let edge = cfg.window_len() / 2;
        let (mut num, mut den) = (0.0, 0.0);
        for i in edge..x.len() - edge {
            num += (x.samples[i] - y.samples[i]).powi(2);
            den += x.samples[i].powi(2);
        }
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn error_is_non_increasing() {
        let cfg = small_cfg();
        let x = noise(3000, 4);
        let s = stft_magnitude(&x, &cfg).unwrap();
        let mut target = s.magnitude.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        target
            .values_mut()
            .iter_mut()
            .for_each(|v| *v *= rng.gen_range(0.5..1.5));
        let (_, errs) =
            griffin_lim_with(&target, &s.phase, 5, &cfg, Execution::Sequential, true).unwrap();
        assert_eq!(errs.len(), 5);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{errs:?}");
        }
    }

    #[test]
    fn zero_magnitude_gives_silence() {
        let cfg = small_cfg();
        let s = stft_magnitude(&noise(2000, 6), &cfg).unwrap();
        let mut z = s.magnitude.clone();
        z.scale(0.0);
        let y = griffin_lim(&z, &s.phase, 2, &cfg).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = small_cfg();
        let s = stft_magnitude(&noise(2000, 7), &cfg).unwrap();
        let other = stft_magnitude(&noise(3000, 7), &cfg).unwrap();
        assert!(griffin_lim(&s.magnitude, &other.phase, 1, &cfg).is_err());
    }

    #[test]
    fn pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let s = stft_magnitude(&noise(2000, 8), &small_cfg()).unwrap();
        s.magnitude.write_pgm(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = format!("P5\n{} {}\n255\n", s.magnitude.n_frames(), s.magnitude.n_bins());
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + s.magnitude.values().len());
    }
}
