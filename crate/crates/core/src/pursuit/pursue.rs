//! The greedy selection / refinement / thinning loop.

use super::loss::{lift, lifted_target, window_loss};
use super::select::{select_peaks, Correlator};
use super::{render_atoms, PatternFamily, PursuitAtom, PursuitConfig, Selector};
use crate::optim::{minimize_box, BoxSpec, OptimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The selector found no candidate with positive amplitude.
    NoCandidates,
    /// The last iteration did not shrink the loss enough and was undone.
    InsufficientDecrease,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct PursuitTrace {
    pub atoms: Vec<PursuitAtom>,
    /// Loss before the first iteration followed by the loss after every
    /// accepted iteration.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl PursuitTrace {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("losses start with the empty-model loss")
    }
}

/// Approximate `y` by a sparse set of shifted patterns from `family`.
pub fn pursue<F: PatternFamily + ?Sized>(
    y: &[f64],
    family: &F,
    cfg: &PursuitConfig,
) -> crate::Result<Vec<PursuitAtom>> {
    Ok(pursue_traced(y, family, cfg)?.atoms)
}

/// [`pursue`], also reporting the loss history and why it stopped.
pub fn pursue_traced<F: PatternFamily + ?Sized>(
    y: &[f64],
    family: &F,
    cfg: &PursuitConfig,
) -> crate::Result<PursuitTrace> {
    cfg.validate()?;
    if family.param_bounds().len() != family.n_params() {
        return Err(crate::Error::Config("parameter box does not match n_params".into()));
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(crate::Error::domain("pursuit input must be finite and nonnegative"));
    }
    let target = lifted_target(y, cfg.q, cfg.delta);
    let correlator = match cfg.selector {
        Selector::CrossCorrelation => Some(Correlator::new(family, cfg.q, y.len())),
        Selector::Peaks { .. } => None,
    };
    let cap = cfg.iteration_cap(family.n_patterns());

    let mut atoms: Vec<PursuitAtom> = Vec::new();
    // false once an atom has been refined and left untouched since
    let mut fresh: Vec<bool> = Vec::new();
    let mut prev = full_loss(&target, &atoms, family, cfg);
    let mut losses = vec![prev];
    let mut iterations = 0;
    let mut stop = StopReason::IterationCap;

    while iterations < cap {
        iterations += 1;
        let model = render_atoms(family, &atoms, y.len());
        let residual: Vec<f64> = target
            .iter()
            .zip(&model)
            .map(|(&t, &m)| t - lift(cfg.delta + m.max(0.0), cfg.q))
            .collect();
        let candidates = match (&cfg.selector, &correlator) {
            (Selector::CrossCorrelation, Some(c)) => c.select(&residual, cfg.n_pre),
            (Selector::Peaks { dominance, floor }, _) => {
                select_peaks(&residual, *dominance, *floor, cfg.n_pre, &family.default_params())
            }
            _ => unreachable!(),
        };
        if candidates.is_empty() {
            stop = StopReason::NoCandidates;
            break;
        }

        let mut trial = atoms.clone();
        let mut trial_fresh = fresh.clone();
        trial.extend(candidates);
        trial_fresh.resize(trial.len(), true);
        refine(&target, &mut trial, &mut trial_fresh, family, cfg);
        if thin(&mut trial, &mut trial_fresh, cfg.n_spr) {
            refine(&target, &mut trial, &mut trial_fresh, family, cfg);
        }
        drop_vanished(&mut trial, &mut trial_fresh, family, y.len());

        let value = full_loss(&target, &trial, family, cfg);
        if !value.is_finite() || value >= cfg.lambda * prev {
            stop = StopReason::InsufficientDecrease;
            break;
        }
        atoms = trial;
        fresh = trial_fresh;
        prev = value;
        losses.push(value);
    }

    Ok(PursuitTrace {
        atoms,
        losses,
        iterations,
        stop,
    })
}

fn full_loss<F: PatternFamily + ?Sized>(
    target: &[f64],
    atoms: &[PursuitAtom],
    family: &F,
    cfg: &PursuitConfig,
) -> f64 {
    let model = render_atoms(family, atoms, target.len());
    window_loss(target, &model, cfg.q, cfg.delta, None)
}

/// Keep the `n_spr` largest-amplitude atoms of every pattern. Returns whether
/// anything was removed.
fn thin(atoms: &mut Vec<PursuitAtom>, fresh: &mut Vec<bool>, n_spr: usize) -> bool {
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&i, &j| {
        atoms[i]
            .pattern
            .cmp(&atoms[j].pattern)
            .then(atoms[j].amplitude.total_cmp(&atoms[i].amplitude))
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; atoms.len()];
    let mut run = 0;
    for (k, &i) in order.iter().enumerate() {
        run = if k > 0 && atoms[order[k - 1]].pattern == atoms[i].pattern { run + 1 } else { 0 };
        keep[i] = run < n_spr;
    }
    retain_flags(atoms, fresh, &keep)
}

/// Remove atoms with zero amplitude or lying entirely outside the samples.
fn drop_vanished<F: PatternFamily + ?Sized>(
    atoms: &mut Vec<PursuitAtom>,
    fresh: &mut Vec<bool>,
    family: &F,
    len: usize,
) {
    let keep: Vec<bool> = atoms
        .iter()
        .map(|a| {
            let (lo, hi) = family.extent(a.pattern, &a.params);
            a.amplitude > 0.0 && a.shift + hi >= 0.0 && a.shift + lo <= len as f64 - 1.0
        })
        .collect();
    retain_flags(atoms, fresh, &keep);
}

fn retain_flags(atoms: &mut Vec<PursuitAtom>, fresh: &mut Vec<bool>, keep: &[bool]) -> bool {
    let before = atoms.len();
    let mut it = keep.iter();
    atoms.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    fresh.retain(|_| *it.next().unwrap());
    atoms.len() != before
}

/// Padded sample span `[lo, hi]` an atom may influence during refinement.
fn reach<F: PatternFamily + ?Sized>(family: &F, a: &PursuitAtom) -> (f64, f64) {
    let (lo, hi) = family.extent(a.pattern, &a.params);
    let pad = 0.25 * (hi - lo) + 2.0;
    (a.shift + lo - pad, a.shift + hi + pad)
}

/// Largest number of atoms optimized at once.
const MAX_BLOCK: usize = 12;
/// Passes over the blocks of a group too large for one block.
const BLOCK_SWEEPS: usize = 2;

/// Jointly refine amplitudes, shifts and parameters.
///
/// Atoms whose reaches overlap form a group; separate groups do not interact
/// and are solved on their own windows. Groups larger than [`MAX_BLOCK`] are
/// solved block by block, with the remaining atoms held fixed, for
/// [`BLOCK_SWEEPS`] passes. Groups made only of atoms already refined and
/// untouched since are skipped.
fn refine<F: PatternFamily + ?Sized>(
    target: &[f64],
    atoms: &mut [PursuitAtom],
    fresh: &mut [bool],
    family: &F,
    cfg: &PursuitConfig,
) {
    let len = target.len();
    let mut spans: Vec<(f64, f64, usize)> = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (lo, hi) = reach(family, a);
            (lo, hi, i)
        })
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut groups: Vec<(f64, Vec<(f64, f64, usize)>)> = Vec::new();
    for span in spans {
        match groups.last_mut() {
            Some(g) if span.0 <= g.0 => {
                g.0 = g.0.max(span.1);
                g.1.push(span);
            }
            _ => groups.push((span.1, vec![span])),
        }
    }

    let mut model = render_atoms(family, atoms, len);
    for (_, members) in groups {
        if !members.iter().any(|&(_, _, i)| fresh[i]) {
            continue;
        }
        let sweeps = if members.len() > MAX_BLOCK { BLOCK_SWEEPS } else { 1 };
        let n_blocks = members.len().div_ceil(MAX_BLOCK);
        let per_block = members.len().div_ceil(n_blocks);
        for _ in 0..sweeps {
            for block in members.chunks(per_block) {
                let lo = block.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
                let hi = block.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
                let start = lo.ceil().max(0.0) as usize;
                let end = ((hi.floor() + 1.0).max(0.0) as usize).min(len);
                if start >= end {
                    continue;
                }
                let old: Vec<PursuitAtom> = block.iter().map(|m| atoms[m.2].clone()).collect();
                let window = &mut model[start..end];
                for a in &old {
                    family.render(a.pattern, &a.params, a.shift, -a.amplitude, start, window);
                }
                let refined = refine_group(&target[start..end], start, window, &old, family, cfg);
                for (m, a) in block.iter().zip(refined) {
                    family.render(a.pattern, &a.params, a.shift, a.amplitude, start, window);
                    atoms[m.2] = a;
                }
            }
        }
        for &(_, _, i) in &members {
            fresh[i] = false;
        }
    }
}

/// Optimize `atoms` on the window `start..start + target.len()`, on top of
/// the fixed contribution `background` of all other atoms.
fn refine_group<F: PatternFamily + ?Sized>(
    target: &[f64],
    start: usize,
    background: &[f64],
    atoms: &[PursuitAtom],
    family: &F,
    cfg: &PursuitConfig,
) -> Vec<PursuitAtom> {
    let n_par = family.n_params();
    let stride = 2 + n_par;
    let theta_box = family.param_bounds();
    let theta_scale = family.param_scales();

    let mut scale = Vec::with_capacity(atoms.len() * stride);
    let mut lower = Vec::with_capacity(atoms.len() * stride);
    let mut upper = Vec::with_capacity(atoms.len() * stride);
    let mut x0 = Vec::with_capacity(atoms.len() * stride);
    for a in atoms {
        let amp_scale = if a.amplitude > 0.0 { a.amplitude } else { 1.0 };
        scale.extend([amp_scale, 1.0]);
        scale.extend(&theta_scale);
        lower.extend([0.0, f64::NEG_INFINITY]);
        upper.extend([f64::INFINITY, f64::INFINITY]);
        for k in 0..n_par {
            lower.push(theta_box.lower[k] / theta_scale[k]);
            upper.push(theta_box.upper[k] / theta_scale[k]);
        }
        x0.push(a.amplitude / amp_scale);
        x0.push(a.shift);
        x0.extend(a.params.iter().zip(&theta_scale).map(|(p, s)| p / s));
    }
    let bounds = BoxSpec { lower, upper };

    let decode = |x: &[f64]| -> Vec<PursuitAtom> {
        atoms
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let v = &x[j * stride..(j + 1) * stride];
                let s = &scale[j * stride..(j + 1) * stride];
                PursuitAtom {
                    amplitude: v[0] * s[0],
                    shift: v[1] * s[1],
                    pattern: a.pattern,
                    params: (0..n_par).map(|k| v[2 + k] * s[2 + k]).collect(),
                }
            })
            .collect()
    };

    let mut model = vec![0.0; target.len()];
    let mut weights = vec![0.0; target.len()];
    let mut local = vec![0.0; stride];
    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        let current = decode(x);
        model.copy_from_slice(background);
        for a in &current {
            family.render(a.pattern, &a.params, a.shift, a.amplitude, start, &mut model);
        }
        let value = window_loss(target, &model, cfg.q, cfg.delta, Some(&mut weights));
        for (j, a) in current.iter().enumerate() {
            local.iter_mut().for_each(|v| *v = 0.0);
            family.backprop(a.pattern, &a.params, a.shift, a.amplitude, start, &weights, &mut local, None);
            for k in 0..stride {
                g[j * stride + k] = local[k] * scale[j * stride + k];
            }
        }
        value
    };

    let x = match minimize_box(objective, &x0, &bounds, &cfg.minimizer) {
        Ok(m) => m.x,
        Err(OptimError::NonFinite { x, f }) if f.is_finite() => x,
        Err(_) => x0,
    };
    decode(&x)
}
