//! The lifted ℓ₂ loss `Σ_s ((Y[s] + δ)^q − (δ + model[s])^q)²`.

use super::{PatternFamily, PursuitAtom};

#[inline]
pub(crate) fn lift(v: f64, q: f64) -> f64 {
    if q == 1.0 {
        v
    } else if q == 0.5 {
        v.sqrt()
    } else {
        v.powf(q)
    }
}

/// `d/dv v^q`.
#[inline]
pub(crate) fn lift_slope(v: f64, q: f64) -> f64 {
    if q == 1.0 {
        1.0
    } else if q == 0.5 {
        0.5 / v.sqrt()
    } else {
        q * v.powf(q - 1.0)
    }
}

/// Sum of squared lifted differences over a window, writing
/// `∂L/∂model` into `weights` when provided.
pub(crate) fn window_loss(
    target: &[f64],
    model: &[f64],
    q: f64,
    delta: f64,
    weights: Option<&mut [f64]>,
) -> f64 {
    match weights {
        None => target
            .iter()
            .zip(model)
            .map(|(&t, &m)| {
                let d = t - lift(delta + m.max(0.0), q);
                d * d
            })
            .sum(),
        Some(w) => {
            let mut total = 0.0;
            for ((wk, &t), &m) in w.iter_mut().zip(target).zip(model) {
                let v = delta + m.max(0.0);
                let d = t - lift(v, q);
                total += d * d;
                *wk = -2.0 * d * lift_slope(v, q);
            }
            total
        }
    }
}

pub(crate) fn lifted_target(y: &[f64], q: f64, delta: f64) -> Vec<f64> {
    y.iter().map(|&v| lift(v.max(0.0) + delta, q)).collect()
}

/// Loss value of `atoms` against `y`.
pub fn loss<F: PatternFamily + ?Sized>(
    y: &[f64],
    atoms: &[PursuitAtom],
    family: &F,
    q: f64,
    delta: f64,
) -> f64 {
    let model = super::render_atoms(family, atoms, y.len());
    window_loss(&lifted_target(y, q, delta), &model, q, delta, None)
}

/// Loss value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub value: f64,
    /// Per atom: `[∂L/∂a, ∂L/∂μ, ∂L/∂θ...]`.
    pub atoms: Vec<Vec<f64>>,
    /// `∂L/∂coefficients` (empty when the family exposes none).
    pub coefficients: Vec<f64>,
}

pub fn loss_and_gradient<F: PatternFamily + ?Sized>(
    y: &[f64],
    atoms: &[PursuitAtom],
    family: &F,
    q: f64,
    delta: f64,
) -> LossGradient {
    let model = super::render_atoms(family, atoms, y.len());
    let mut weights = vec![0.0; y.len()];
    let value = window_loss(&lifted_target(y, q, delta), &model, q, delta, Some(&mut weights));
    let mut coefficients = vec![0.0; family.n_coefficients()];
    let grads = atoms
        .iter()
        .map(|a| {
            let mut g = vec![0.0; 2 + a.params.len()];
            let coef = (!coefficients.is_empty()).then_some(coefficients.as_mut_slice());
            family.backprop(a.pattern, &a.params, a.shift, a.amplitude, 0, &weights, &mut g, coef);
            g
        })
        .collect();
    LossGradient {
        value,
        atoms: grads,
        coefficients,
    }
}
