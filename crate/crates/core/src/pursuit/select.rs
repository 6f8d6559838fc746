//! Candidate preselection: cross-correlation with the sampled patterns, or
//! dominant local maxima of the residual.

use std::cmp::Ordering;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::loss::lift;
use super::{PatternFamily, PursuitAtom};

struct SampledPattern {
    /// Offset of the first sample.
    lo: isize,
    norm: f64,
    spectrum: Vec<Complex<f64>>,
}

/// Cross-correlates residuals of a fixed length with the lifted patterns
/// `y_{η,θ_nil}[·]^q` of one family, via FFT.
pub struct Correlator {
    len: usize,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    patterns: Vec<SampledPattern>,
    default_params: Vec<f64>,
    q: f64,
}

impl Correlator {
    pub fn new<F: PatternFamily + ?Sized>(family: &F, q: f64, len: usize) -> Self {
        let theta = family.default_params();
        let sampled: Vec<(isize, Vec<f64>)> = (0..family.n_patterns())
            .map(|eta| {
                let (lo, hi) = family.extent(eta, &theta);
                let (lo, hi) = (lo.ceil() as isize, hi.floor() as isize);
                let values = (lo..=hi)
                    .map(|k| lift(family.evaluate(eta, &theta, k as f64).max(0.0), q))
                    .collect();
                (lo, values)
            })
            .collect();
        let longest = sampled.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let fft_len = (len + longest + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let patterns = sampled
            .into_iter()
            .map(|(lo, values)| {
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut spectrum = vec![Complex::new(0.0, 0.0); fft_len];
                for (s, &v) in spectrum.iter_mut().zip(&values) {
                    s.re = v;
                }
                forward.process(&mut spectrum);
                spectrum.iter_mut().for_each(|c| *c = c.conj());
                SampledPattern { lo, norm, spectrum }
            })
            .collect();
        Self {
            len,
            fft_len,
            forward,
            inverse,
            patterns,
            default_params: theta,
            q,
        }
    }

    /// `ρ[η][μ] = Σ_i r[i]·y_{η,θ_nil}[i − μ]^q / ‖y_{η,θ_nil}^q‖₂` for
    /// `μ = 0..len`. Patterns with zero norm give all-zero rows.
    pub fn correlate(&self, r: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(r.len(), self.len);
        let mut rs = vec![Complex::new(0.0, 0.0); self.fft_len];
        for (c, &v) in rs.iter_mut().zip(r) {
            c.re = v;
        }
        self.forward.process(&mut rs);
        let l = self.fft_len as isize;
        self.patterns
            .iter()
            .map(|p| {
                if p.norm == 0.0 {
                    return vec![0.0; self.len];
                }
                let mut buf: Vec<Complex<f64>> =
                    rs.iter().zip(&p.spectrum).map(|(a, b)| a * b).collect();
                self.inverse.process(&mut buf);
                let scale = 1.0 / (self.fft_len as f64 * p.norm);
                (0..self.len as isize)
                    .map(|mu| buf[(mu + p.lo).rem_euclid(l) as usize].re * scale)
                    .collect()
            })
            .collect()
    }

    /// Up to `n_pick` atoms at the largest correlations, initialized with
    /// θ_nil and amplitude `(ρ/‖y^q‖₂)^(1/q)`. Non-positive correlations
    /// are skipped.
    pub fn select(&self, r: &[f64], n_pick: usize) -> Vec<PursuitAtom> {
        let rho = self.correlate(r);
        let mut cands: Vec<(f64, usize, usize)> = rho
            .iter()
            .enumerate()
            .flat_map(|(eta, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(move |(mu, &v)| (v, eta, mu))
            })
            .collect();
        let by_rank = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        };
        if n_pick < cands.len() {
            cands.select_nth_unstable_by(n_pick, by_rank);
            cands.truncate(n_pick);
        }
        cands.sort_by(by_rank);
        cands
            .into_iter()
            .filter_map(|(v, eta, mu)| {
                let amp = (v / self.patterns[eta].norm).powf(1.0 / self.q);
                (amp > 0.0 && amp.is_finite()).then(|| PursuitAtom {
                    amplitude: amp,
                    shift: mu as f64,
                    pattern: eta,
                    params: self.default_params.clone(),
                })
            })
            .collect()
    }
}

/// Cross-correlation preselection (see [`Correlator::select`]).
pub fn select_xcorr<F: PatternFamily + ?Sized>(
    r: &[f64],
    family: &F,
    q: f64,
    n_pick: usize,
) -> Vec<PursuitAtom> {
    Correlator::new(family, q, r.len()).select(r, n_pick)
}

/// Indices `i` with `r[i] > floor` that dominate their `dominance`
/// neighbours on both sides, tallest first (at most `n_pick`).
///
/// A point must be strictly greater than its left neighbours and at least as
/// large as its right neighbours, so a plateau yields only its first point.
pub fn find_peaks(r: &[f64], dominance: usize, floor: f64, n_pick: usize) -> Vec<(usize, f64)> {
    let n = r.len();
    let mut peaks: Vec<(usize, f64)> = (0..n)
        .filter(|&i| {
            let v = r[i];
            if !(v > floor) || !(v > 0.0) {
                return false;
            }
            let left = i.saturating_sub(dominance);
            let right = (i + dominance).min(n - 1);
            (left..i).all(|k| r[k] < v) && (i + 1..=right).all(|k| r[k] <= v)
        })
        .map(|i| (i, r[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    peaks.truncate(n_pick);
    peaks
}

/// Peak preselection: atoms of pattern 0 at the dominant maxima of `r`,
/// with the peak heights as initial amplitudes.
pub fn select_peaks(
    r: &[f64],
    dominance: usize,
    floor: f64,
    n_pick: usize,
    default_params: &[f64],
) -> Vec<PursuitAtom> {
    find_peaks(r, dominance, floor, n_pick)
        .into_iter()
        .map(|(i, h)| PursuitAtom {
            amplitude: h,
            shift: i as f64,
            pattern: 0,
            params: default_params.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bump() {
        let r = [0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(find_peaks(&r, 3, 0.0, 10), vec![(3, 3.0)]);
    }

    #[test]
    fn two_equal_peaks_far_apart() {
        let mut r = vec![0.0; 30];
        r[5] = 1.0;
        r[15] = 1.0;
        let p = find_peaks(&r, 3, 0.0, 10);
        assert_eq!(p.iter().map(|x| x.0).collect::<Vec<_>>(), vec![5, 15]);
    }

    #[test]
    fn plateau_reports_first_point_once() {
        // enumerate plateau widths and positions
        for width in 1..8 {
            for start in 1..6 {
                let mut r = vec![0.0; 20];
                for v in r.iter_mut().skip(start).take(width) {
                    *v = 2.0;
                }
                let p = find_peaks(&r, 3, 0.0, 10);
                assert_eq!(p, vec![(start, 2.0)], "width {width} start {start}");
            }
        }
    }

    #[test]
    fn non_positive_residual_gives_nothing() {
        let r = vec![-1.0, -0.5, 0.0, -0.2];
        assert!(find_peaks(&r, 3, 0.0, 10).is_empty());
    }

    #[test]
    fn floor_filters_small_peaks() {
        let r = [0.0, 1e-9, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(find_peaks(&r, 3, 1e-6, 10), vec![(7, 1.0)]);
        assert_eq!(find_peaks(&r, 3, 0.0, 10).len(), 2);
    }

    #[test]
    fn respects_n_pick() {
        let r: Vec<f64> = (0..100).map(|i| if i % 10 == 0 { i as f64 + 1.0 } else { 0.0 }).collect();
        let p = find_peaks(&r, 3, 0.0, 3);
        assert_eq!(p.iter().map(|x| x.0).collect::<Vec<_>>(), vec![90, 80, 70]);
    }
}
