//! Harmonic instrument model and dictionary learning.
//!
//! Every dictionary column holds the relative amplitudes of the first
//! `n_har` partials of one instrument. On the log-frequency axis a tone with
//! fundamental row `μ` puts partial `h` at `μ + alpha0·log2(h·√(1 + b·h²))`,
//! so a column describes the instrument at every pitch.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};

use crate::logspec::{add_gaussian, LogAxisConfig};
use crate::optim::{AdamState, BoxSpec};
use crate::pursuit::{clip_range, loss_and_gradient, pursue, PatternFamily, PursuitAtom, PursuitConfig, GAUSS_RADIUS};
use crate::stft::SpectrogramGrid;
use crate::{Error, Result};

/// Largest inharmonicity the fit may use.
pub const MAX_INHARMONICITY: f64 = 5e-3;

/// Nonnegative `n_har × n_pat` matrix with entries in `[0, 1]`, stored
/// column by column, plus the set of columns kept as instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub n_har: usize,
    pub n_pat: usize,
    values: Vec<f64>,
    pub kept: Vec<usize>,
}

impl Dictionary {
    pub fn zeros(n_har: usize, n_pat: usize) -> Self {
        Self {
            n_har,
            n_pat,
            values: vec![0.0; n_har * n_pat],
            kept: (0..n_pat).collect(),
        }
    }

    /// Build from columns; every column must have the same length and
    /// entries in `[0, 1]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n_har = columns.first().map_or(0, Vec::len);
        if n_har == 0 {
            return Err(Error::domain("dictionary needs at least one non-empty column"));
        }
        let mut d = Self::zeros(n_har, columns.len());
        for (c, col) in columns.iter().enumerate() {
            if col.len() != n_har {
                return Err(Error::domain(format!("column {c} has {} entries, expected {n_har}", col.len())));
            }
            if col.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::domain(format!("column {c} has entries outside [0, 1]")));
            }
            d.column_mut(c).copy_from_slice(col);
        }
        Ok(d)
    }

    /// Columns drawn with [`init_column`].
    pub fn random(n_har: usize, n_pat: usize, rng: &mut impl Rng) -> Self {
        let mut d = Self::zeros(n_har, n_pat);
        for c in 0..n_pat {
            let col = init_column(n_har, rng);
            d.column_mut(c).copy_from_slice(&col);
        }
        d
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_har..(c + 1) * self.n_har]
    }

    pub fn column_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.n_har..(c + 1) * self.n_har]
    }

    /// Entry for partial `h` (1-based) of column `c`.
    pub fn get(&self, h: usize, c: usize) -> f64 {
        self.values[c * self.n_har + h - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Text form: a header line, `n_har`, `n_pat`, the kept column indices,
    /// then one line of `n_har` numbers per column. Numbers use the shortest
    /// representation that reads back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::from("harmosep-dictionary 1\n");
        let _ = writeln!(s, "n_har {}", self.n_har);
        let _ = writeln!(s, "n_pat {}", self.n_pat);
        s.push_str("kept");
        for k in &self.kept {
            let _ = write!(s, " {k}");
        }
        s.push('\n');
        for c in 0..self.n_pat {
            let line: Vec<String> = self.column(c).iter().map(|v| format!("{v}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| format!("missing {what}"));
        if next("header")?.trim() != "harmosep-dictionary 1" {
            return Err("not a version 1 dictionary file".into());
        }
        let field = |line: &str, key: &str| -> std::result::Result<usize, String> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| format!("expected `{key} <count>`, found `{line}`"))
        };
        let n_har = field(next("n_har")?, "n_har")?;
        let n_pat = field(next("n_pat")?, "n_pat")?;
        let kept_line = next("kept")?;
        let kept: Vec<usize> = kept_line
            .strip_prefix("kept")
            .ok_or("expected kept column list")?
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        if kept.iter().any(|&k| k >= n_pat) {
            return Err("kept column index out of range".into());
        }
        let mut columns = Vec::with_capacity(n_pat);
        for c in 0..n_pat {
            let col: Vec<f64> = next("column")?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| format!("column {c}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if col.len() != n_har {
                return Err(format!("column {c} has {} entries, expected {n_har}", col.len()));
            }
            columns.push(col);
        }
        let mut d = Self::from_columns(&columns).map_err(|e| e.to_string())?;
        d.kept = kept;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|r| Error::format(path, r))
    }
}

/// A random harmonic profile `d[h]/h^e` with `d ~ U[0, 1)` and `e` Pareto
/// distributed with minimum 1 and shape 1/2.
pub fn init_column(n_har: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d: Vec<f64> = (0..n_har).map(|_| rng.gen::<f64>()).collect();
    let e: f64 = Pareto::new(1.0, 0.5).expect("valid Pareto parameters").sample(rng);
    d.iter()
        .enumerate()
        .map(|(i, v)| v / ((i + 1) as f64).powf(e))
        .collect()
}

/// Log-axis offset of partial `h` relative to the fundamental.
pub fn partial_offset(alpha0: f64, h: usize, b: f64) -> f64 {
    let h = h as f64;
    alpha0 * (h * (1.0 + b * h * h).sqrt()).log2()
}

/// Harmonic tones built from dictionary columns, θ = (σ, b).
///
/// Pattern `η` uses column `columns[η]`.
#[derive(Debug, Clone)]
pub struct HarmonicFamily<'a> {
    pub dict: &'a Dictionary,
    pub columns: Vec<usize>,
    pub sigma_nil: f64,
    pub alpha0: f64,
}

impl<'a> HarmonicFamily<'a> {
    /// Family over every column of `dict`.
    pub fn new(dict: &'a Dictionary, sigma_nil: f64, axis: &LogAxisConfig) -> Self {
        Self {
            dict,
            columns: (0..dict.n_pat).collect(),
            sigma_nil,
            alpha0: axis.alpha0,
        }
    }

    /// Family over the kept columns only.
    pub fn kept(dict: &'a Dictionary, sigma_nil: f64, axis: &LogAxisConfig) -> Self {
        Self {
            columns: dict.kept.clone(),
            ..Self::new(dict, sigma_nil, axis)
        }
    }

    /// Number of leading partials that can be nonzero in pattern `eta`.
    fn active_partials(&self, eta: usize) -> usize {
        let col = self.dict.column(self.columns[eta]);
        col.iter().rposition(|&v| v > 0.0).map_or(0, |i| i + 1)
    }
}

impl PatternFamily for HarmonicFamily<'_> {
    fn n_patterns(&self) -> usize {
        self.columns.len()
    }

    fn n_params(&self) -> usize {
        2
    }

    fn default_params(&self) -> Vec<f64> {
        vec![self.sigma_nil, 0.0]
    }

    fn param_bounds(&self) -> BoxSpec {
        BoxSpec {
            lower: vec![0.25 * self.sigma_nil, 0.0],
            upper: vec![4.0 * self.sigma_nil, MAX_INHARMONICITY],
        }
    }

    fn param_scales(&self) -> Vec<f64> {
        vec![self.sigma_nil, 1e-3]
    }

    fn evaluate(&self, eta: usize, params: &[f64], s: f64) -> f64 {
        let (sigma, b) = (params[0], params[1]);
        let col = self.dict.column(self.columns[eta]);
        col.iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(|(i, &d)| {
                let x = s - partial_offset(self.alpha0, i + 1, b);
                if x.abs() > GAUSS_RADIUS * sigma {
                    0.0
                } else {
                    d * (-x * x / (2.0 * sigma * sigma)).exp()
                }
            })
            .sum()
    }

    fn extent(&self, eta: usize, params: &[f64]) -> (f64, f64) {
        let r = GAUSS_RADIUS * params[0];
        let top = self.active_partials(eta).max(1);
        (-r, partial_offset(self.alpha0, top, params[1]) + r)
    }

    fn render(&self, eta: usize, params: &[f64], shift: f64, amp: f64, start: usize, out: &mut [f64]) {
        let (sigma, b) = (params[0], params[1]);
        let col = self.dict.column(self.columns[eta]);
        for (i, &d) in col.iter().enumerate() {
            if d > 0.0 {
                add_gaussian(out, start, shift + partial_offset(self.alpha0, i + 1, b), sigma, amp * d);
            }
        }
    }

    fn backprop(
        &self,
        eta: usize,
        params: &[f64],
        shift: f64,
        amp: f64,
        start: usize,
        weights: &[f64],
        grad: &mut [f64],
        mut coef_grad: Option<&mut [f64]>,
    ) {
        let (sigma, b) = (params[0], params[1]);
        let c = self.columns[eta];
        let col = self.dict.column(c);
        let r = GAUSS_RADIUS * sigma;
        let inv_s2 = 1.0 / (sigma * sigma);
        let ln2 = std::f64::consts::LN_2;
        for (i, &d) in col.iter().enumerate() {
            if d <= 0.0 && coef_grad.is_none() {
                continue;
            }
            let h = (i + 1) as f64;
            let center = shift + partial_offset(self.alpha0, i + 1, b);
            let Some((lo, hi)) = clip_range(center - r, center + r, start, weights.len()) else {
                continue;
            };
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for (k, &w) in weights.iter().enumerate().take(hi).skip(lo) {
                let x = (start + k) as f64 - center;
                let e = w * (-0.5 * x * x * inv_s2).exp();
                s0 += e;
                s1 += e * x;
                s2 += e * x * x;
            }
            let do_db = self.alpha0 * 0.5 * h * h / ((1.0 + b * h * h) * ln2);
            grad[0] += d * s0;
            grad[1] += amp * d * s1 * inv_s2;
            grad[2] += amp * d * s2 * inv_s2 / sigma;
            grad[3] += amp * d * s1 * inv_s2 * do_db;
            if let Some(cg) = coef_grad.as_deref_mut() {
                cg[c * self.dict.n_har + i] += amp * s0;
            }
        }
    }

    fn n_coefficients(&self) -> usize {
        self.dict.n_har * self.dict.n_pat
    }
}

/// Settings of dictionary training.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Number of instruments to keep.
    pub n_ins: usize,
    /// Number of dictionary columns (twice `n_ins` by default).
    pub n_pat: usize,
    pub n_har: usize,
    /// Training steps; a multiple of `prune_interval`.
    pub n_trn: usize,
    pub prune_interval: usize,
    /// Steps a fresh column is granted before its usage counts.
    pub head_start: usize,
    pub seed: u64,
    pub sigma_nil: f64,
    pub axis: LogAxisConfig,
    pub pursuit: PursuitConfig,
    pub kappa: f64,
}

impl TrainConfig {
    pub fn new(n_ins: usize, n_spr: usize, n_trn: usize, seed: u64, sigma_nil: f64) -> Self {
        Self {
            n_ins,
            n_pat: 2 * n_ins,
            n_har: 25,
            n_trn,
            prune_interval: 500,
            head_start: 250,
            seed,
            sigma_nil,
            axis: LogAxisConfig::default(),
            pursuit: PursuitConfig::tones(n_spr),
            kappa: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_ins == 0 || self.n_pat < self.n_ins {
            return bad(format!("need 1 <= n_ins <= n_pat, got n_ins {} n_pat {}", self.n_ins, self.n_pat));
        }
        if self.n_har == 0 {
            return bad("n_har must be positive".into());
        }
        if self.prune_interval == 0 || self.n_trn % self.prune_interval != 0 {
            return bad(format!(
                "n_trn ({}) must be a multiple of the pruning interval ({})",
                self.n_trn, self.prune_interval
            ));
        }
        if !(self.sigma_nil > 0.0) {
            return bad("sigma_nil must be positive".into());
        }
        self.axis.validate()?;
        self.pursuit.validate()
    }
}

/// Mutable state of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub dict: Dictionary,
    pub adam: AdamState,
    /// Summed atom amplitude per column since its last reset.
    pub amp_acc: Vec<f64>,
    pub steps: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dict = Dictionary::random(cfg.n_har, cfg.n_pat, &mut rng);
        let mut adam = AdamState::new(cfg.n_har, cfg.n_pat);
        adam.kappa = cfg.kappa;
        Self {
            dict,
            adam,
            amp_acc: vec![0.0; cfg.n_pat],
            steps: 0,
            rng,
        }
    }

    /// One training step on a random frame of `u` (already scaled to a
    /// maximum of 1). Returns the atoms found.
    pub fn step(&mut self, u: &SpectrogramGrid, cfg: &TrainConfig) -> Result<Vec<PursuitAtom>> {
        let t = self.rng.gen_range(0..u.n_frames());
        let y = u.frame(t);
        let family = HarmonicFamily::new(&self.dict, cfg.sigma_nil, &cfg.axis);
        let atoms = pursue(y, &family, &cfg.pursuit)?;
        self.steps += 1;
        if !atoms.is_empty() {
            for a in &atoms {
                self.amp_acc[a.pattern] += a.amplitude;
            }
            let grad = loss_and_gradient(y, &atoms, &family, cfg.pursuit.q, cfg.pursuit.delta).coefficients;
            let all: Vec<usize> = (0..cfg.n_pat).collect();
            self.adam.step(self.dict.values_mut(), &grad, &all);
        }
        if self.steps % cfg.prune_interval == 0 {
            self.prune(cfg);
        }
        Ok(atoms)
    }

    /// Keep the `n_ins` columns with the highest amplitude per step and
    /// redraw the others with fresh optimizer state.
    pub fn prune(&mut self, cfg: &TrainConfig) {
        let kept = rank_columns(&self.amp_acc, &self.adam.tau, cfg.head_start as u64, cfg.n_ins);
        for c in 0..cfg.n_pat {
            if !kept.contains(&c) {
                let col = init_column(cfg.n_har, &mut self.rng);
                self.dict.column_mut(c).copy_from_slice(&col);
                self.adam.reset_column(c);
                self.amp_acc[c] = 0.0;
            }
        }
        self.dict.kept = kept;
    }
}

/// Indices of the `n_keep` columns with the largest `acc / max(tau − head_start, 1)`,
/// ascending. Ties go to the lower index.
pub fn rank_columns(acc: &[f64], tau: &[u64], head_start: u64, n_keep: usize) -> Vec<usize> {
    let ratio = |c: usize| acc[c] / (tau[c].saturating_sub(head_start).max(1)) as f64;
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&i, &j| ratio(j).total_cmp(&ratio(i)).then(i.cmp(&j)));
    order.truncate(n_keep);
    order.sort_unstable();
    order
}

/// Learn a dictionary from a log-frequency spectrogram. The returned
/// dictionary's `kept` set names the instrument columns.
pub fn train(u: &SpectrogramGrid, cfg: &TrainConfig) -> Result<Dictionary> {
    cfg.validate()?;
    if u.n_frames() == 0 || u.n_bins() == 0 {
        return Err(Error::domain("cannot train on an empty spectrogram"));
    }
    let scaled = normalized(u)?;
    let mut state = TrainState::new(cfg);
    for _ in 0..cfg.n_trn {
        state.step(&scaled, cfg)?;
    }
    if cfg.n_trn == 0 {
        state.dict.kept = (0..cfg.n_ins).collect();
    }
    Ok(state.dict)
}

/// Copy of `u` scaled to a maximum of 1 (unchanged if all zero).
pub fn normalized(u: &SpectrogramGrid) -> Result<SpectrogramGrid> {
    let peak = u.max_value();
    if !peak.is_finite() || u.values().iter().any(|v| *v < 0.0) {
        return Err(Error::domain("spectrogram must be finite and nonnegative"));
    }
    let mut out = u.clone();
    if peak > 0.0 {
        out.scale(1.0 / peak);
    }
    Ok(out)
}
