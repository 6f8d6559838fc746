//! Separation of a mixture with a trained dictionary.
//!
//! Every log-frequency frame is explained by the kept instruments. The tones
//! found are redrawn on the linear axis one instrument at a time, optionally
//! used as soft masks on the mixture spectrogram, and turned back into audio
//! with Griffin-Lim started from the mixture phase.

use crate::dictionary::{normalized, HarmonicFamily};
use crate::logspec::{add_gaussian, LogAxisConfig};
use crate::parallel::{map_indexed, Execution};
use crate::pursuit::{pursue, PursuitAtom, PursuitConfig};
use crate::signal::AudioClip;
use crate::stft::{griffin_lim_with, FreqAxis, PhaseGrid, SpectrogramGrid, Stft, StftConfig};
use crate::{dictionary::Dictionary, Error, Result};

/// Added to the model before dividing in [`apply_mask`].
pub const MASK_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SeparationOptions {
    pub stft: StftConfig,
    pub axis: LogAxisConfig,
    pub pursuit: PursuitConfig,
    pub use_mask: bool,
    pub gl_iters: usize,
    pub exec: Execution,
}

impl SeparationOptions {
    pub fn new(stft: StftConfig, n_spr: usize) -> Self {
        Self {
            stft,
            axis: LogAxisConfig::default(),
            pursuit: PursuitConfig::tones(n_spr),
            use_mask: true,
            gl_iters: 1,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// Tones per frame; `pattern` indexes the dictionary's kept columns and
    /// amplitudes are on the scale of the input spectrogram.
    pub atoms_per_frame: Vec<Vec<PursuitAtom>>,
    /// Unmasked model spectrogram of each instrument.
    pub inst_spectrograms: Vec<SpectrogramGrid>,
    /// Mixture spectrogram distributed in proportion to the models.
    pub masked_spectrograms: Vec<SpectrogramGrid>,
    /// One signal per instrument, from the masked or unmasked spectrograms
    /// depending on the options.
    pub signals: Vec<AudioClip>,
}

/// Identify the kept instruments in every frame of `u`.
pub fn identify_frames(
    u: &SpectrogramGrid,
    dict: &Dictionary,
    opts: &SeparationOptions,
) -> Result<Vec<Vec<PursuitAtom>>> {
    if u.n_bins() != opts.axis.n_bins {
        return Err(Error::domain(format!(
            "log spectrogram has {} rows, axis expects {}",
            u.n_bins(),
            opts.axis.n_bins
        )));
    }
    if dict.kept.is_empty() {
        return Err(Error::domain("dictionary keeps no instruments"));
    }
    let peak = u.max_value();
    let scaled = normalized(u)?;
    let family = HarmonicFamily::kept(dict, opts.stft.line_sigma_bins(), &opts.axis);
    let frames = map_indexed(opts.exec, u.n_frames(), |t| {
        pursue(scaled.frame(t), &family, &opts.pursuit).map(|mut atoms| {
            for a in &mut atoms {
                a.amplitude *= peak;
            }
            atoms
        })
    });
    frames.into_iter().collect()
}

/// Linear-axis spectrogram of instrument `inst` (an index into `dict.kept`).
pub fn reconstruct_instrument(
    atoms_per_frame: &[Vec<PursuitAtom>],
    inst: usize,
    dict: &Dictionary,
    axis: &LogAxisConfig,
    stft: &StftConfig,
    exec: Execution,
) -> SpectrogramGrid {
    let n_bins = stft.n_bins();
    let nyquist = (n_bins - 1) as f64;
    let column = dict.column(dict.kept[inst]);
    let frames = map_indexed(exec, atoms_per_frame.len(), |t| {
        let mut col = vec![0.0; n_bins];
        for a in atoms_per_frame[t].iter().filter(|a| a.pattern == inst) {
            let (sigma, b) = (a.params[0], a.params[1]);
            let f1 = axis.frequency(a.shift);
            for (i, &d) in column.iter().enumerate() {
                let h = (i + 1) as f64;
                let f = (1.0 + b * h * h).sqrt() * h * f1;
                if f > nyquist {
                    break;
                }
                if d > 0.0 {
                    add_gaussian(&mut col, 0, f, sigma, a.amplitude * d);
                }
            }
        }
        col
    });
    SpectrogramGrid::from_frames(
        n_bins,
        frames,
        FreqAxis::Linear { bin_hz: stft.bin_hz() },
        stft.frame_period_s(),
    )
    .expect("columns have n_bins rows")
}

/// `inst / (model + ε) · mixture`, elementwise; zero where the model is zero.
pub fn apply_mask(inst: &SpectrogramGrid, model: &SpectrogramGrid, mixture: &SpectrogramGrid) -> Result<SpectrogramGrid> {
    if !inst.same_shape(model) || !inst.same_shape(mixture) {
        return Err(Error::domain("mask operands differ in shape"));
    }
    let mut out = inst.clone();
    for ((o, &z), &x) in out.values_mut().iter_mut().zip(model.values()).zip(mixture.values()) {
        *o = if z > 0.0 { *o / (z + MASK_EPSILON) * x } else { 0.0 };
    }
    Ok(out)
}

/// Elementwise sum of equally shaped grids.
pub fn sum_grids(grids: &[SpectrogramGrid]) -> Option<SpectrogramGrid> {
    let mut it = grids.iter();
    let mut total = it.next()?.clone();
    for g in it {
        for (a, b) in total.values_mut().iter_mut().zip(g.values()) {
            *a += b;
        }
    }
    Some(total)
}

/// Griffin-Lim resynthesis of every grid, started from `phase`.
pub fn resynthesize(
    grids: &[SpectrogramGrid],
    phase: &PhaseGrid,
    stft: &StftConfig,
    iterations: usize,
    exec: Execution,
    sample_rate_hz: u32,
) -> Result<Vec<AudioClip>> {
    grids
        .iter()
        .map(|g| {
            griffin_lim_with(g, phase, iterations, stft, exec, false).map(|(mut clip, _)| {
                clip.sample_rate_hz = sample_rate_hz;
                clip
            })
        })
        .collect()
}

/// Full separation of one recording.
pub fn separate(u: &SpectrogramGrid, mixture: &Stft, dict: &Dictionary, opts: &SeparationOptions) -> Result<SeparationResult> {
    let z = &mixture.magnitude;
    if z.n_frames() != u.n_frames() || z.n_bins() != opts.stft.n_bins() {
        return Err(Error::domain(format!(
            "spectrogram {}x{} and log spectrogram with {} frames do not belong together",
            z.n_bins(),
            z.n_frames(),
            u.n_frames()
        )));
    }
    if opts.gl_iters == 0 {
        return Err(Error::Config("gl_iters must be at least 1".into()));
    }
    let atoms_per_frame = identify_frames(u, dict, opts)?;
    let inst_spectrograms: Vec<SpectrogramGrid> = (0..dict.kept.len())
        .map(|k| reconstruct_instrument(&atoms_per_frame, k, dict, &opts.axis, &opts.stft, opts.exec))
        .collect();
    let model = sum_grids(&inst_spectrograms).expect("at least one instrument");

    // the mask constant is meant for spectra of order one
    let scale = z.max_value().max(model.max_value());
    let masked_spectrograms = if scale > 0.0 {
        let mut zs = z.clone();
        zs.scale(1.0 / scale);
        let mut ms = model;
        ms.scale(1.0 / scale);
        inst_spectrograms
            .iter()
            .map(|g| {
                let mut gs = g.clone();
                gs.scale(1.0 / scale);
                let mut m = apply_mask(&gs, &ms, &zs)?;
                m.scale(scale);
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        inst_spectrograms.clone()
    };

    let source = if opts.use_mask { &masked_spectrograms } else { &inst_spectrograms };
    let signals = resynthesize(source, &mixture.phase, &opts.stft, opts.gl_iters, opts.exec, opts.stft.sample_rate_hz)?;
    Ok(SeparationResult {
        atoms_per_frame,
        inst_spectrograms,
        masked_spectrograms,
        signals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StftConfig {
        StftConfig::new(48000).unwrap()
    }

    fn dict_with(cols: &[Vec<f64>]) -> Dictionary {
        Dictionary::from_columns(cols).unwrap()
    }

    fn e1() -> Vec<f64> {
        let mut c = vec![0.0; 25];
        c[0] = 1.0;
        c
    }

    fn tone(amp: f64, shift: f64, pattern: usize) -> PursuitAtom {
        PursuitAtom {
            amplitude: amp,
            shift,
            pattern,
            params: vec![cfg().line_sigma_bins(), 0.0],
        }
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap()
    }

    #[test]
    fn fundamental_maps_back_to_linear_bin() {
        let d = dict_with(&[e1()]);
        let axis = LogAxisConfig::default();
        let g = reconstruct_instrument(&[vec![tone(2.0, 102.4, 0)]], 0, &d, &axis, &cfg(), Execution::Sequential);
        let col = g.frame(0);
        assert_eq!(argmax(col), 10);
        let s = cfg().line_sigma_bins();
        let want = 2.0 * (-(0.24f64).powi(2) / (2.0 * s * s)).exp();
        assert!((col[10] - want).abs() < 1e-12);
    }

    #[test]
    fn no_atoms_no_energy() {
        let d = dict_with(&[e1(), e1()]);
        let g = reconstruct_instrument(&[vec![tone(1.0, 300.0, 0)]], 1, &d, &LogAxisConfig::default(), &cfg(), Execution::Sequential);
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partials_above_nyquist_skipped() {
        let d = dict_with(&[vec![1.0; 25]]);
        let axis = LogAxisConfig::default();
        // fundamental at bin 1000: partials 7 and up exceed 6144
        let mu = axis.position(1000.0);
        let g = reconstruct_instrument(&[vec![tone(1.0, mu, 0)]], 0, &d, &axis, &cfg(), Execution::Sequential);
        let col = g.frame(0);
        assert!(col[6000] > 0.9);
        assert!(col[6144] < 1e-10);
    }

    #[test]
    fn instruments_add_up() {
        let d = dict_with(&[vec![0.5; 25], e1()]);
        let axis = LogAxisConfig::default();
        let atoms = vec![vec![tone(1.0, 250.0, 0), tone(0.7, 310.5, 1)], vec![tone(0.3, 400.0, 1)]];
        let c = cfg();
        let parts: Vec<_> = (0..2)
            .map(|k| reconstruct_instrument(&atoms, k, &d, &axis, &c, Execution::Sequential))
            .collect();
        let total = sum_grids(&parts).unwrap();
        let mut all = d.clone();
        all.kept = vec![0, 1];
        let joint: Vec<Vec<PursuitAtom>> = atoms.clone();
        let direct0 = reconstruct_instrument(&joint, 0, &all, &axis, &c, Execution::Sequential);
        let direct1 = reconstruct_instrument(&joint, 1, &all, &axis, &c, Execution::Sequential);
        for i in 0..total.values().len() {
            let s = direct0.values()[i] + direct1.values()[i];
            assert!((total.values()[i] - s).abs() <= 1e-12 * (1.0 + s));
        }
    }

    fn grid(v: Vec<f64>) -> SpectrogramGrid {
        SpectrogramGrid::from_frames(v.len(), vec![v], FreqAxis::Linear { bin_hz: 1.0 }, 0.01).unwrap()
    }

    #[test]
    fn mask_cases() {
        let z = grid(vec![0.2, 0.9, 0.0, 1.0]);
        let half = grid(vec![0.1, 0.45, 0.0, 0.5]);
        let mix = grid(vec![0.4, 0.3, 0.7, 0.8]);
        let m = apply_mask(&half, &z, &mix).unwrap();
        for (a, b) in m.values().iter().zip(mix.values()) {
            if *b == 0.7 {
                assert_eq!(*a, 0.0);
            } else {
                assert!((a - b / 2.0).abs() <= 1e-9 * b);
            }
        }
        let same = apply_mask(&z, &z, &mix).unwrap();
        assert!((same.values()[1] - 0.3).abs() < 1e-9);
        assert!(apply_mask(&z, &grid(vec![1.0]), &mix).is_err());
    }

    #[test]
    fn disjoint_masks_sum_to_mixture() {
        let a = grid(vec![1.0, 0.5, 0.0, 0.0]);
        let b = grid(vec![0.0, 0.0, 0.2, 0.8]);
        let model = sum_grids(&[a.clone(), b.clone()]).unwrap();
        let mix = grid(vec![0.3, 0.6, 0.9, 0.1]);
        let s = sum_grids(&[apply_mask(&a, &model, &mix).unwrap(), apply_mask(&b, &model, &mix).unwrap()]).unwrap();
        for (x, y) in s.values().iter().zip(mix.values()) {
            assert!((x - y).abs() <= 1e-6 * y);
        }
    }
}
