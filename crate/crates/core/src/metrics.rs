//! Projection-based separation quality: SDR, SIR and SAR in decibels.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Energies at or below this fraction of the estimate's energy count as zero.
const ZERO_ENERGY: f64 = 1e-20;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonal projection of `x` onto the span of `basis`. A rank-deficient
/// basis is handled by a least-squares pseudo-solution.
pub fn project(x: &[f64], basis: &[&[f64]]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::domain("cannot project an empty signal"));
    }
    if basis.iter().any(|b| b.len() != x.len()) {
        return Err(Error::domain("basis signals differ in length from the projected signal"));
    }
    let k = basis.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(basis[i], basis[j]));
    let rhs = DVector::from_fn(k, |i, _| dot(basis[i], x));
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let pinv = gram
        .pseudo_inverse(1e-12 * scale)
        .map_err(|e| Error::domain(format!("projection failed: {e}")))?;
    let coef = pinv * rhs;
    let mut out = vec![0.0; x.len()];
    for (b, c) in basis.iter().zip(coef.iter()) {
        for (o, v) in out.iter_mut().zip(b.iter()) {
            *o += c * v;
        }
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `10·log10(num/den)` with `-inf` when the numerator vanishes and `+inf`
/// when only the denominator does.
fn ratio_db(num: f64, den: f64, reference_energy: f64) -> f64 {
    let tiny = ZERO_ENERGY * reference_energy;
    if num <= tiny {
        f64::NEG_INFINITY
    } else if den <= tiny {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Scores for one estimate against one reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

/// Scores of every reference under the best assignment of estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BssScores {
    pub sdr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub sar_db: Vec<f64>,
    /// `permutation[k]` is the estimate assigned to reference `k`.
    pub permutation: Vec<usize>,
}

impl BssScores {
    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr_db)
    }

    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir_db)
    }

    /// Human-readable lines followed by `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for k in 0..self.sdr_db.len() {
            s.push_str(&format!(
                "instrument {k} (estimate {}): SDR {:.2} dB, SIR {:.2} dB, SAR {:.2} dB\n",
                self.permutation[k], self.sdr_db[k], self.sir_db[k], self.sar_db[k]
            ));
        }
        for k in 0..self.sdr_db.len() {
            s.push_str(&format!(
                "instrument={k} estimate={} sdr={} sir={} sar={}\n",
                self.permutation[k], self.sdr_db[k], self.sir_db[k], self.sar_db[k]
            ));
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if m.is_nan() {
        f64::NEG_INFINITY
    } else {
        m
    }
}

/// Score each estimate against each reference and pick the assignment with
/// the highest mean SIR. Estimates are zero-padded or truncated to the
/// reference length.
pub fn bss_eval(references: &[Vec<f64>], estimates: &[Vec<f64>]) -> Result<BssScores> {
    let n = references.len();
    if n == 0 || estimates.len() != n {
        return Err(Error::domain(format!(
            "{} references but {} estimates",
            n,
            estimates.len()
        )));
    }
    let len = references[0].len();
    if len == 0 || references.iter().any(|r| r.len() != len) {
        return Err(Error::domain("references must be non-empty and of equal length"));
    }
    let estimates: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.resize(len, 0.0);
            e
        })
        .collect();

    let all: Vec<&[f64]> = references.iter().map(Vec::as_slice).collect();
    let mut table = vec![vec![None; n]; n];
    for (j, x) in estimates.iter().enumerate() {
        let energy = dot(x, x);
        let p_all = project(x, &all)?;
        let sar = ratio_db(dot(&p_all, &p_all), sq_dist(&p_all, x), energy);
        for (k, r) in references.iter().enumerate() {
            let p = project(x, &[r.as_slice()])?;
            let target = dot(&p, &p);
            table[k][j] = Some(PairScores {
                sdr_db: ratio_db(target, sq_dist(&p, x), energy),
                sir_db: ratio_db(target, sq_dist(&p, &p_all), energy),
                sar_db: sar,
            });
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let sirs: Vec<f64> = (0..n).map(|k| table[k][perm[k]].unwrap().sir_db).collect();
        let m = mean(&sirs);
        if best.as_ref().map_or(true, |(b, _)| m > *b) {
            best = Some((m, perm));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    let pick = |k: usize| table[k][permutation[k]].unwrap();
    Ok(BssScores {
        sdr_db: (0..n).map(|k| pick(k).sdr_db).collect(),
        sir_db: (0..n).map(|k| pick(k).sir_db).collect(),
        sar_db: (0..n).map(|k| pick(k).sar_db).collect(),
        permutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
    }

    fn sine(n: usize, f: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / n as f64 + phase).sin())
            .collect()
    }

    #[test]
    fn projection_basics() {
        let a = noise(64, 1);
        let b = noise(64, 2);
        let x: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 2.0 * u - 0.5 * v).collect();
        let p = project(&x, &[&a, &b]).unwrap();
        assert!(sq_dist(&p, &x).sqrt() < 1e-10);

        let s = sine(64, 3.0, 0.0);
        let c = sine(64, 3.0, std::f64::consts::FRAC_PI_2);
        let p = project(&s, &[&c]).unwrap();
        assert!(p.iter().all(|v| v.abs() < 1e-12));

        let x = noise(64, 3);
        let p = project(&x, &[&a, &b]).unwrap();
        let r: Vec<f64> = x.iter().zip(&p).map(|(u, v)| u - v).collect();
        for basis in [&a, &b] {
            assert!(dot(&r, basis).abs() < 1e-8 * (dot(&r, &r) * dot(basis, basis)).sqrt().max(1e-300));
        }
        // duplicated basis vector
        let p = project(&x, &[&a, &a]).unwrap();
        let q = project(&x, &[&a]).unwrap();
        assert!(sq_dist(&p, &q) < 1e-20);
        assert!(project(&[], &[]).is_err());
    }

    #[test]
    fn perfect_estimates() {
        let refs = vec![noise(200, 1), noise(200, 2)];
        let s = bss_eval(&refs, &refs).unwrap();
        assert_eq!(s.permutation, vec![0, 1]);
        assert!(s.sdr_db.iter().all(|v| *v == f64::INFINITY));
        assert!(s.sir_db.iter().all(|v| *v == f64::INFINITY));
    }

    #[test]
    fn swapped_estimates() {
        let refs = vec![noise(300, 1), noise(300, 2)];
        let mut est: Vec<Vec<f64>> = refs.iter().map(|r| r.iter().map(|v| v + 0.01).collect()).collect();
        let straight = bss_eval(&refs, &est).unwrap();
        est.swap(0, 1);
        let swapped = bss_eval(&refs, &est).unwrap();
        assert_eq!(swapped.permutation, vec![1, 0]);
        assert_eq!(swapped.sdr_db, straight.sdr_db);
        assert_eq!(swapped.sir_db, straight.sir_db);
    }

    #[test]
    fn phase_shifted_sine_is_minus_infinity() {
        let refs = vec![sine(480, 5.0, 0.0)];
        let est = vec![sine(480, 5.0, std::f64::consts::FRAC_PI_2)];
        assert_eq!(bss_eval(&refs, &est).unwrap().sdr_db[0], f64::NEG_INFINITY);
    }

    #[test]
    fn count_mismatch() {
        assert!(bss_eval(&[vec![1.0]], &[]).is_err());
    }

    #[test]
    fn report_spells_out_infinities() {
        let refs = vec![noise(50, 4)];
        let r = bss_eval(&refs, &refs).unwrap().report();
        assert!(r.contains("sdr=inf"), "{r}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(32))]

        #[test]
        fn gains_and_order_do_not_change_scores(
            seed in 0u64..1000,
            g0 in proptest::sample::select(vec![-4.0, -0.5, 0.3, 2.0, 10.0]),
            g1 in proptest::sample::select(vec![-3.0, -0.1, 0.7, 5.0]),
        ) {
            let refs = vec![noise(500, seed), noise(500, seed + 1000)];
            let extra = noise(500, seed + 2000);
            let ests: Vec<Vec<f64>> = (0..2)
                .map(|k| (0..500).map(|i| refs[k][i] + 0.2 * refs[1 - k][i] + 0.05 * extra[i]).collect())
                .collect();
            let base = bss_eval(&refs, &ests).unwrap();
            let other: Vec<Vec<f64>> = vec![
                ests[1].iter().map(|v| v * g1).collect(),
                ests[0].iter().map(|v| v * g0).collect(),
            ];
            let moved = bss_eval(&refs, &other).unwrap();
            proptest::prop_assert_eq!(moved.permutation.clone(), vec![1, 0]);
            for k in 0..2 {
                proptest::prop_assert!((moved.sdr_db[k] - base.sdr_db[k]).abs() < 1e-8);
                proptest::prop_assert!((moved.sir_db[k] - base.sir_db[k]).abs() < 1e-8);
                proptest::prop_assert!((moved.sar_db[k] - base.sar_db[k]).abs() < 1e-8);
            }
        }
    }
}
