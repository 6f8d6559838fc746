//! Sparsity-based log-frequency spectrogram.
//!
//! Each linear-frequency STFT column is decomposed into Gaussian spectral
//! lines by peak-selected pursuit, and the lines are redrawn at their
//! logarithmic positions. Pitch changes then act as pure shifts.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::optim::{BoxSpec, MinimizeOptions};
use crate::parallel::{map_indexed, Execution};
use crate::pursuit::{clip_range, pursue, PatternFamily, PursuitAtom, PursuitConfig, Selector, GAUSS_RADIUS};
use crate::stft::{FreqAxis, SpectrogramGrid, StftConfig};
use crate::{Error, Result};

/// Logarithmic axis `α(f) = alpha0·log2(f/f0)`, `f` in linear bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAxisConfig {
    pub f0: f64,
    pub alpha0: f64,
    pub n_bins: usize,
}

impl Default for LogAxisConfig {
    /// Ten octaves at 102.4 rows per octave starting from bin 5.12 (20 Hz at
    /// 48 kHz with the default STFT).
    fn default() -> Self {
        Self {
            f0: 5.12,
            alpha0: 102.4,
            n_bins: 1024,
        }
    }
}

impl LogAxisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.alpha0 > 0.0 && self.f0.is_finite() && self.alpha0.is_finite()) {
            return Err(Error::Config("log axis needs positive f0 and alpha0".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::Config("log axis needs at least one row".into()));
        }
        Ok(())
    }

    /// Row position of linear bin `f`; `-inf` for `f <= 0`.
    pub fn position(&self, f: f64) -> f64 {
        if f > 0.0 {
            self.alpha0 * (f / self.f0).log2()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Linear bin at row position `alpha`.
    pub fn frequency(&self, alpha: f64) -> f64 {
        self.f0 * (alpha / self.alpha0).exp2()
    }

    pub fn axis(&self, bin_hz: f64) -> FreqAxis {
        FreqAxis::Logarithmic {
            f0: self.f0,
            alpha0: self.alpha0,
            bin_hz,
        }
    }
}

/// Gaussian spectral lines `exp(-s²/(2σ²))` (s in bins), θ = (σ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFamily {
    /// Line width of a stationary sinusoid, in bins.
    pub sigma_nil: f64,
}

impl GaussianFamily {
    pub fn new(sigma_nil: f64) -> Self {
        Self { sigma_nil }
    }

    pub fn for_stft(cfg: &StftConfig) -> Self {
        Self::new(cfg.line_sigma_bins())
    }
}

impl PatternFamily for GaussianFamily {
    fn n_patterns(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        1
    }

    fn default_params(&self) -> Vec<f64> {
        vec![self.sigma_nil]
    }

    fn param_bounds(&self) -> BoxSpec {
        BoxSpec {
            lower: vec![0.25 * self.sigma_nil],
            upper: vec![4.0 * self.sigma_nil],
        }
    }

    fn param_scales(&self) -> Vec<f64> {
        vec![self.sigma_nil]
    }

    fn evaluate(&self, _: usize, params: &[f64], s: f64) -> f64 {
        let sigma = params[0];
        if s.abs() > GAUSS_RADIUS * sigma {
            0.0
        } else {
            (-s * s / (2.0 * sigma * sigma)).exp()
        }
    }

    fn extent(&self, _: usize, params: &[f64]) -> (f64, f64) {
        (-GAUSS_RADIUS * params[0], GAUSS_RADIUS * params[0])
    }

    fn render(&self, _: usize, params: &[f64], shift: f64, amp: f64, start: usize, out: &mut [f64]) {
        add_gaussian(out, start, shift, params[0], amp);
    }

    fn backprop(
        &self,
        _: usize,
        params: &[f64],
        shift: f64,
        amp: f64,
        start: usize,
        weights: &[f64],
        grad: &mut [f64],
        _: Option<&mut [f64]>,
    ) {
        let sigma = params[0];
        let r = GAUSS_RADIUS * sigma;
        let Some((a, b)) = clip_range(shift - r, shift + r, start, weights.len()) else {
            return;
        };
        let inv_s2 = 1.0 / (sigma * sigma);
        let (mut ga, mut gm, mut gs) = (0.0, 0.0, 0.0);
        for (k, &w) in weights.iter().enumerate().take(b).skip(a) {
            let x = (start + k) as f64 - shift;
            let e = (-0.5 * x * x * inv_s2).exp();
            ga += w * e;
            gm += w * e * x;
            gs += w * e * x * x;
        }
        grad[0] += ga;
        grad[1] += amp * gm * inv_s2;
        grad[2] += amp * gs * inv_s2 / sigma;
    }
}

/// `out[k] += amp·exp(-(start + k − center)²/(2σ²))` within the Gaussian
/// radius.
pub fn add_gaussian(out: &mut [f64], start: usize, center: f64, sigma: f64, amp: f64) {
    let r = GAUSS_RADIUS * sigma;
    if let Some((a, b)) = clip_range(center - r, center + r, start, out.len()) {
        let inv = 0.5 / (sigma * sigma);
        for (k, v) in out.iter_mut().enumerate().take(b).skip(a) {
            let x = (start + k) as f64 - center;
            *v += amp * (-x * x * inv).exp();
        }
    }
}

/// Settings of the per-frame line pursuit.
#[derive(Debug, Clone)]
pub struct LogTransformOptions {
    pub family: GaussianFamily,
    pub pursuit: PursuitConfig,
    /// Peaks below this fraction of the spectrogram maximum are ignored.
    pub relative_floor: f64,
}

impl LogTransformOptions {
    pub fn new(family: GaussianFamily) -> Self {
        Self {
            family,
            pursuit: PursuitConfig {
                q: 1.0,
                delta: 1e-10,
                lambda: 1.0,
                n_pre: 1000,
                n_spr: 1000,
                n_itr: Some(20),
                selector: Selector::Peaks {
                    dominance: 3,
                    floor: 0.0,
                },
                minimizer: MinimizeOptions {
                    max_iters: 30,
                    max_evals: 90,
                    pgtol: 1e-12,
                    ftol: 1e-9,
                    ..Default::default()
                },
            },
            relative_floor: 1e-3,
        }
    }

    pub fn for_stft(cfg: &StftConfig) -> Self {
        Self::new(GaussianFamily::for_stft(cfg))
    }
}

/// A log-frequency spectrogram together with the lines found in every frame
/// (positions in linear bins, amplitudes on the input scale).
#[derive(Debug, Clone)]
pub struct LogSpectrogram {
    pub grid: SpectrogramGrid,
    pub lines: Vec<Vec<PursuitAtom>>,
}

/// Transform a linear-axis magnitude spectrogram to the log axis.
pub fn to_log_spectrogram(
    z: &SpectrogramGrid,
    axis: &LogAxisConfig,
    opts: &LogTransformOptions,
    exec: Execution,
) -> Result<LogSpectrogram> {
    axis.validate()?;
    opts.pursuit.validate()?;
    let FreqAxis::Linear { bin_hz } = z.axis else {
        return Err(Error::domain("log transform expects a linear-frequency spectrogram"));
    };
    let peak = z.max_value();
    if !peak.is_finite() {
        return Err(Error::domain("spectrogram contains non-finite values"));
    }
    let n_frames = z.n_frames();
    let m = axis.n_bins;
    let mut grid = SpectrogramGrid::zeros(m, n_frames, axis.axis(bin_hz), z.frame_period_s);
    if peak <= 0.0 {
        return Ok(LogSpectrogram {
            grid,
            lines: vec![Vec::new(); n_frames],
        });
    }

    let mut cfg = opts.pursuit.clone();
    if let Selector::Peaks { floor, .. } = &mut cfg.selector {
        *floor = floor.max(opts.relative_floor);
    }
    let frames = map_indexed(exec, n_frames, |t| -> Result<Vec<PursuitAtom>> {
        let y: Vec<f64> = z.frame(t).iter().map(|v| v / peak).collect();
        let mut atoms = pursue(&y, &opts.family, &cfg)?;
        for a in &mut atoms {
            a.amplitude *= peak;
        }
        atoms.sort_by(|a, b| a.shift.total_cmp(&b.shift));
        Ok(atoms)
    });

    let mut lines = Vec::with_capacity(n_frames);
    for (t, atoms) in frames.into_iter().enumerate() {
        let atoms = atoms?;
        let col = grid.frame_mut(t);
        for a in &atoms {
            let alpha = axis.position(a.shift);
            if alpha >= 0.0 && alpha < m as f64 {
                add_gaussian(col, 0, alpha, a.params[0], a.amplitude);
            }
        }
        lines.push(atoms);
    }
    Ok(LogSpectrogram { grid, lines })
}

const CACHE_MAGIC: &[u8; 4] = b"HSLS";
const CACHE_VERSION: u32 = 1;

/// Write a log-frequency spectrogram to the binary cache format.
///
/// Layout (little endian): magic `HSLS`, `u32` version, `u32` rows `m`,
/// `u32` frames, `f64` f0, `f64` alpha0, `f64` frame period in seconds,
/// `f64` linear bin width in Hz, then `m·frames` `f32` values, one frame
/// after another.
pub fn write_log_cache(grid: &SpectrogramGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let FreqAxis::Logarithmic { f0, alpha0, bin_hz } = grid.axis else {
        return Err(Error::domain("only log-frequency spectrograms can be cached"));
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(CACHE_MAGIC)?;
    put(&CACHE_VERSION.to_le_bytes())?;
    put(&(grid.n_bins() as u32).to_le_bytes())?;
    put(&(grid.n_frames() as u32).to_le_bytes())?;
    for v in [f0, alpha0, grid.frame_period_s, bin_hz] {
        put(&v.to_le_bytes())?;
    }
    for &v in grid.values() {
        put(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a cache written by [`write_log_cache`].
pub fn read_log_cache(path: impl AsRef<Path>) -> Result<SpectrogramGrid> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(path, "truncated log-spectrogram cache"),
            _ => Error::io(path, e),
        })?;
        Ok(buf)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(Error::format(path, "not a log-spectrogram cache"));
    }
    let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().unwrap());
    let f64_at = |b: Vec<u8>| f64::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != CACHE_VERSION {
        return Err(Error::format(path, format!("unsupported cache version {version}")));
    }
    let m = u32_at(take(4)?) as usize;
    let n_frames = u32_at(take(4)?) as usize;
    let f0 = f64_at(take(8)?);
    let alpha0 = f64_at(take(8)?);
    let frame_period_s = f64_at(take(8)?);
    let bin_hz = f64_at(take(8)?);
    let raw = take(4 * m * n_frames)?;
    let mut grid = SpectrogramGrid::zeros(m, n_frames, FreqAxis::Logarithmic { f0, alpha0, bin_hz }, frame_period_s);
    for (v, b) in grid.values_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::AudioClip;
    use crate::stft::stft_magnitude;

    fn family() -> GaussianFamily {
        GaussianFamily::new(6.0 / std::f64::consts::PI)
    }

    #[test]
    fn gaussian_shape() {
        let f = family();
        let th = f.default_params();
        assert_eq!(f.evaluate(0, &th, 0.0), 1.0);
        for s in [0.3, 1.7, 4.2, 9.9] {
            assert_eq!(f.evaluate(0, &th, s), f.evaluate(0, &th, -s));
        }
        let half = f.sigma_nil * (2.0 * 2f64.ln()).sqrt();
        assert!((f.evaluate(0, &th, half) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn axis_constants() {
        let a = LogAxisConfig::default();
        assert!((a.position(10.24) - 102.4).abs() < 1e-12);
        assert_eq!(a.position(5.12), 0.0);
        assert!((a.frequency(1024.0) - 5242.88).abs() < 1e-9);
        assert!((a.frequency(a.position(777.0)) - 777.0).abs() < 1e-9);
    }

    fn linear_grid(cols: Vec<Vec<f64>>) -> SpectrogramGrid {
        let n = cols[0].len();
        SpectrogramGrid::from_frames(n, cols, FreqAxis::Linear { bin_hz: 3.90625 }, 256.0 / 48000.0).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap()
    }

    /// Peak position by parabolic interpolation of the log magnitude, exact
    /// for a Gaussian.
    fn peak_center(v: &[f64]) -> f64 {
        let i = argmax(v);
        let (l, c, r) = (v[i - 1].ln(), v[i].ln(), v[i + 1].ln());
        i as f64 + 0.5 * (l - r) / (l - 2.0 * c + r)
    }

    #[test]
    fn single_line_lands_one_octave_up() {
        let f = family();
        let mut col = vec![0.0; 400];
        add_gaussian(&mut col, 0, 10.24, f.sigma_nil, 3.0);
        let z = linear_grid(vec![col]);
        let u = to_log_spectrogram(&z, &LogAxisConfig::default(), &LogTransformOptions::new(f), Execution::Sequential)
            .unwrap();
        assert_eq!(u.lines[0].len(), 1);
        assert!((u.lines[0][0].amplitude - 3.0).abs() < 1e-6);
        assert!((peak_center(u.grid.frame(0)) - 102.4).abs() < 0.1);
    }

    #[test]
    fn zero_in_zero_out() {
        let z = linear_grid(vec![vec![0.0; 100]; 3]);
        let u = to_log_spectrogram(&z, &LogAxisConfig::default(), &LogTransformOptions::new(family()), Execution::Sequential)
            .unwrap();
        assert!(u.grid.values().iter().all(|&v| v == 0.0));
        assert!(u.lines.iter().all(Vec::is_empty));
    }

    #[test]
    fn rejects_log_input() {
        let z = SpectrogramGrid::zeros(8, 1, LogAxisConfig::default().axis(1.0), 0.1);
        assert!(to_log_spectrogram(&z, &LogAxisConfig::default(), &LogTransformOptions::new(family()), Execution::Sequential)
            .is_err());
    }

    fn tone_clip(freqs: &[f64], rate: u32, secs: f64) -> AudioClip {
        let n = (secs * rate as f64) as usize;
        let s = (0..n)
            .map(|i| {
                let t = i as f64 / rate as f64;
                freqs.iter().map(|f| (2.0 * std::f64::consts::PI * f * t).sin()).sum::<f64>()
            })
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    #[test]
    fn two_tones_keep_their_log_distance() {
        let cfg = StftConfig::new(48000).unwrap();
        let clip = tone_clip(&[300.0, 1100.0], 48000, 0.5);
        let st = stft_magnitude(&clip, &cfg).unwrap();
        let axis = LogAxisConfig::default();
        let mid = st.magnitude.n_frames() / 2;
        let z = linear_grid(vec![st.magnitude.frame(mid).to_vec()]);
        let u = to_log_spectrogram(&z, &axis, &LogTransformOptions::for_stft(&cfg), Execution::Sequential).unwrap();
        let col = u.grid.frame(0);
        let split = axis.position(600.0 / cfg.bin_hz()) as usize;
        let c1 = peak_center(&col[..split]);
        let c2 = split as f64 + peak_center(&col[split..]);
        let expect = axis.alpha0 * (1100.0f64 / 300.0).log2();
        assert!((c2 - c1 - expect).abs() < 0.2, "{} vs {expect}", c2 - c1);
        assert_eq!(u.lines[0].len(), 2, "{:?}", u.lines[0]);
        let heights: f64 = u.lines[0].iter().map(|a| a.amplitude).sum();
        let maxima = 2.0 * z.max_value();
        assert!((heights - maxima).abs() < 0.1 * maxima);
    }

    #[test]
    fn cache_round_trip() {
        let axis = LogAxisConfig::default();
        let mut g = SpectrogramGrid::zeros(16, 3, axis.axis(3.90625), 0.005);
        for (i, v) in g.values_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.25;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        write_log_cache(&g, &p).unwrap();
        let back = read_log_cache(&p).unwrap();
        assert_eq!(back, g);
        std::fs::write(&p, b"HSLS\x01\0\0\0").unwrap();
        assert!(matches!(read_log_cache(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"RIFF....").unwrap();
        assert!(matches!(read_log_cache(&p), Err(Error::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn axis_round_trip_and_octaves(f in 5.12f64..6000.0) {
            let axis = LogAxisConfig::default();
            let a = axis.position(f);
            proptest::prop_assert!((axis.frequency(a) / f - 1.0).abs() < 1e-12);
            proptest::prop_assert!((axis.position(2.0 * f) - a - axis.alpha0).abs() < 1e-9);
        }
    }
}
