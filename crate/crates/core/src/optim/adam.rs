//! Adam with one second-moment estimate per dictionary column.
//!
//! First moments are tracked per entry; the second moment of a column is the
//! running mean of its squared gradient entries, which keeps the relative
//! scaling between harmonics of one column. Each column has its own step
//! counter so a reinitialized column restarts its bias correction. After
//! every step entries are projected onto `[0, 1]`.

/// Optimizer state for an `n_rows × n_cols` column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub n_rows: usize,
    pub n_cols: usize,
    /// First moments, column-major.
    pub v1: Vec<f64>,
    /// One second moment per column.
    pub v2: Vec<f64>,
    /// Steps taken by each column since its last reset.
    pub tau: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step size.
    pub kappa: f64,
}

impl AdamState {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            v1: vec![0.0; n_rows * n_cols],
            v2: vec![0.0; n_cols],
            tau: vec![0; n_cols],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            kappa: 1e-3,
        }
    }

    pub fn reset_column(&mut self, col: usize) {
        self.v1[col * self.n_rows..(col + 1) * self.n_rows].fill(0.0);
        self.v2[col] = 0.0;
        self.tau[col] = 0;
    }

    /// One update of the columns in `active`, in place. `matrix` and
    /// `gradient` are column-major with `n_rows` entries per column.
    pub fn step(&mut self, matrix: &mut [f64], gradient: &[f64], active: &[usize]) {
        let n = self.n_rows;
        assert_eq!(matrix.len(), n * self.n_cols);
        assert_eq!(gradient.len(), n * self.n_cols);
        for &c in active {
            self.tau[c] += 1;
            let tau = self.tau[c] as i32;
            let g = &gradient[c * n..(c + 1) * n];
            let v1 = &mut self.v1[c * n..(c + 1) * n];
            for (m, &gi) in v1.iter_mut().zip(g) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
            }
            let mean_sq = if n > 0 {
                g.iter().map(|v| v * v).sum::<f64>() / n as f64
            } else {
                0.0
            };
            self.v2[c] = self.beta2 * self.v2[c] + (1.0 - self.beta2) * mean_sq;
            let c1 = 1.0 - self.beta1.powi(tau);
            let v2_hat = self.v2[c] / (1.0 - self.beta2.powi(tau));
            let denom = (v2_hat + self.epsilon).sqrt();
            let col = &mut matrix[c * n..(c + 1) * n];
            for (d, m) in col.iter_mut().zip(v1.iter()) {
                *d -= self.kappa * (m / c1) / denom;
                *d = d.clamp(0.0, 1.0);
            }
        }
    }
}
