//! Sparse pursuit of shifted continuous patterns.
//!
//! A nonnegative sample vector `Y[s]` is approximated by
//! `Σ_j a_j · y_{η_j,θ_j}(s − μ_j)` where each `y_{η,θ}` comes from a
//! [`PatternFamily`]. Atoms are chosen greedily from the lifted residual,
//! refined jointly with a box-constrained quasi-Newton solver, thinned to at
//! most `n_spr` atoms per pattern, and the loop stops as soon as an iteration
//! fails to shrink the loss by the factor `λ`.

mod loss;
mod pursue;
mod select;

pub use loss::{loss, loss_and_gradient, LossGradient};
pub use pursue::{pursue, pursue_traced, PursuitTrace, StopReason};
pub use select::{select_peaks, select_xcorr, Correlator};

use crate::optim::{BoxSpec, MinimizeOptions};

/// Gaussians are evaluated out to this many standard deviations; beyond it
/// they are treated as exactly zero (e^-50 ≈ 2e-22).
pub const GAUSS_RADIUS: f64 = 10.0;

/// A parameterized set of nonnegative continuous patterns `y_{η,θ}(s)`.
///
/// Rendering and back-propagation work on a window of integer samples
/// `start..start + out.len()`.
pub trait PatternFamily: Sync {
    fn n_patterns(&self) -> usize;

    /// Number of continuous parameters θ per atom.
    fn n_params(&self) -> usize;

    /// θ_nil, used for preselection and to initialize new atoms.
    fn default_params(&self) -> Vec<f64>;

    /// Ω_θ.
    fn param_bounds(&self) -> BoxSpec;

    /// Typical magnitude of each parameter; the refinement solver works in
    /// units of these.
    fn param_scales(&self) -> Vec<f64> {
        vec![1.0; self.n_params()]
    }

    /// `y_{η,θ}(s)`.
    fn evaluate(&self, pattern: usize, params: &[f64], s: f64) -> f64;

    /// Offsets `(lo, hi)` such that `y_{η,θ}(s) = 0` for `s ∉ [lo, hi]`.
    fn extent(&self, pattern: usize, params: &[f64]) -> (f64, f64);

    /// `out[k] += amp · y_{η,θ}(start + k − shift)`.
    fn render(
        &self,
        pattern: usize,
        params: &[f64],
        shift: f64,
        amp: f64,
        start: usize,
        out: &mut [f64],
    );

    /// With `weights[k] = ∂L/∂model[start + k]`, add to `grad` the derivative
    /// of `L` with respect to `[amp, shift, θ...]` through this atom, and,
    /// when `coef_grad` is given, with respect to the family's coefficients.
    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        pattern: usize,
        params: &[f64],
        shift: f64,
        amp: f64,
        start: usize,
        weights: &[f64],
        grad: &mut [f64],
        coef_grad: Option<&mut [f64]>,
    );

    /// Number of trainable coefficients the family exposes (zero if none).
    fn n_coefficients(&self) -> usize {
        0
    }
}

/// One identified pattern instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PursuitAtom {
    pub amplitude: f64,
    pub shift: f64,
    pub pattern: usize,
    pub params: Vec<f64>,
}

/// How candidate atoms are preselected from the residual.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// Cross-correlate the lifted residual with each pattern at θ_nil.
    CrossCorrelation,
    /// Take local maxima that dominate `dominance` neighbours on each side.
    /// Maxima not exceeding `floor` are ignored.
    Peaks { dominance: usize, floor: f64 },
}

#[derive(Debug, Clone)]
pub struct PursuitConfig {
    /// Lifting exponent, in (0, 1].
    pub q: f64,
    /// Offset keeping the lifted loss differentiable.
    pub delta: f64,
    /// An iteration is kept only if it brings the loss to at most `lambda`
    /// times its previous value.
    pub lambda: f64,
    /// Candidates added per iteration.
    pub n_pre: usize,
    /// Maximum atoms per pattern.
    pub n_spr: usize,
    /// Iteration cap; `None` means twice the overall sparsity level.
    pub n_itr: Option<usize>,
    pub selector: Selector,
    pub minimizer: MinimizeOptions,
}

impl PursuitConfig {
    /// Settings for identifying instrument tones: q = 1/2, λ = 0.9, one
    /// candidate per iteration chosen by cross-correlation.
    pub fn tones(n_spr: usize) -> Self {
        Self {
            q: 0.5,
            delta: 1e-10,
            lambda: 0.9,
            n_pre: 1,
            n_spr,
            n_itr: None,
            selector: Selector::CrossCorrelation,
            minimizer: MinimizeOptions {
                max_iters: 500,
                max_evals: 2000,
                pgtol: 1e-10,
                ftol: 1e-12,
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad("q must lie in (0, 1]");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if self.n_pre == 0 || self.n_spr == 0 {
            return bad("n_pre and n_spr must be at least 1");
        }
        if self.n_itr == Some(0) {
            return bad("n_itr must be at least 1");
        }
        Ok(())
    }

    pub fn iteration_cap(&self, n_patterns: usize) -> usize {
        self.n_itr.unwrap_or(2 * self.n_spr * n_patterns).max(1)
    }
}

/// Evaluate `Σ_j a_j y_{η_j,θ_j}(s − μ_j)` on `0..len`.
pub fn render_atoms<F: PatternFamily + ?Sized>(family: &F, atoms: &[PursuitAtom], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for a in atoms {
        family.render(a.pattern, &a.params, a.shift, a.amplitude, 0, &mut out);
    }
    out
}

/// Clip the sample range covered by `[center + lo, center + hi]` to
/// `start..start + len`, returning local indices.
pub(crate) fn clip_range(lo: f64, hi: f64, start: usize, len: usize) -> Option<(usize, usize)> {
    let first = lo.ceil().max(start as f64);
    let last = hi.floor().min((start + len) as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize - start, last as usize - start + 1))
}
