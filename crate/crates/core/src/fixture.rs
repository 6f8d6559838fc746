//! Synthetic two-instrument recordings with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::{synth_harmonic_tone, AudioClip};
use crate::Result;

/// Harmonic amplitudes of a soft, almost sinusoidal instrument.
pub fn mellow_profile(n_har: usize) -> Vec<f64> {
    (1..=n_har)
        .map(|h| match h {
            1 => 1.0,
            2 => 0.12,
            3 => 0.04,
            _ => 0.0,
        })
        .collect()
}

/// Harmonic amplitudes `1/h` of a sawtooth-like instrument.
pub fn bright_profile(n_har: usize) -> Vec<f64> {
    (1..=n_har).map(|h| 1.0 / h as f64).collect()
}

pub fn midi_to_hz(note: f64) -> f64 {
    440.0 * ((note - 69.0) / 12.0).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// Independent random melodies in separate registers.
    Melody,
    /// The second instrument doubles the first one octave lower, so every
    /// partial of the upper voice coincides with an even partial of the
    /// lower one.
    OctaveOverlap,
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub note_s: f64,
    pub seed: u64,
    pub n_har: usize,
}

impl FixtureSpec {
    pub fn melody(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: FixtureKind::Melody,
            sample_rate_hz: 48_000,
            duration_s,
            note_s: 0.5,
            seed,
            n_har: 25,
        }
    }
}

/// A mixture and its sources. All samples are exactly representable as
/// `f32`, and `mix` is the `f32` sum of the sources.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub mix: AudioClip,
    pub sources: Vec<AudioClip>,
    /// Harmonic profile used for each source.
    pub profiles: Vec<Vec<f64>>,
}

/// Generate the fixture described by `spec`. The mellow instrument plays
/// MIDI notes 72..=84 and the bright one 55..=67.
pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rate = spec.sample_rate_hz;
    let total = (spec.duration_s * rate as f64).round() as usize;
    let note_len = (spec.note_s * rate as f64).round() as usize;
    let profiles = vec![mellow_profile(spec.n_har), bright_profile(spec.n_har)];
    let mut tracks = vec![vec![0.0f64; total]; 2];

    let mut start = 0;
    while start < total {
        let len = note_len.min(total - start);
        let upper = rng.gen_range(72..=84) as f64;
        let lower = match spec.kind {
            FixtureKind::Melody => rng.gen_range(55..=67) as f64,
            FixtureKind::OctaveOverlap => upper - 12.0,
        };
        let gains = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
        for (k, note) in [upper, lower].into_iter().enumerate() {
            let phases: Vec<f64> = (0..spec.n_har).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            let tone = synth_harmonic_tone(midi_to_hz(note), &profiles[k], 0.0, len as f64 / rate as f64, rate, &phases)?;
            for (dst, s) in tracks[k][start..start + len].iter_mut().zip(&tone.samples) {
                *dst = gains[k] * s;
            }
        }
        start += len;
    }

    let sources: Vec<AudioClip> = tracks
        .into_iter()
        .map(|t| AudioClip::new(t.into_iter().map(|v| v as f32 as f64).collect(), rate))
        .collect::<Result<_>>()?;
    let mix = sources[0]
        .samples
        .iter()
        .zip(&sources[1].samples)
        .map(|(&a, &b)| (a as f32 + b as f32) as f64)
        .collect();
    Ok(Fixture {
        mix: AudioClip::new(mix, rate)?,
        sources,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_exact_f32_sum() {
        let f = generate(&FixtureSpec::melody(1.2, 3)).unwrap();
        assert_eq!(f.mix.len(), 57_600);
        for i in 0..f.mix.len() {
            let (a, b) = (f.sources[0].samples[i] as f32, f.sources[1].samples[i] as f32);
            assert_eq!(f.mix.samples[i] as f32, a + b);
            assert_eq!(f.mix.samples[i], (a + b) as f64);
        }
        assert!(f.sources.iter().all(|s| s.samples.iter().any(|v| v.abs() > 0.1)));
    }

    #[test]
    fn seeded() {
        let a = generate(&FixtureSpec::melody(1.0, 9)).unwrap();
        let b = generate(&FixtureSpec::melody(1.0, 9)).unwrap();
        let c = generate(&FixtureSpec::melody(1.0, 10)).unwrap();
        assert_eq!(a.mix, b.mix);
        assert_ne!(a.mix, c.mix);
    }

    #[test]
    fn octave_overlap_shares_partials() {
        let spec = FixtureSpec {
            kind: FixtureKind::OctaveOverlap,
            ..FixtureSpec::melody(0.5, 1)
        };
        let f = generate(&spec).unwrap();
        assert_eq!(f.sources.len(), 2);
        assert!((midi_to_hz(60.0) * 2.0 - midi_to_hz(72.0)).abs() < 1e-9);
    }

    #[test]
    fn profiles() {
        assert_eq!(bright_profile(4), vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
        let m = mellow_profile(25);
        assert_eq!(m.len(), 25);
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
