//! Optimizers used by the pipeline: a box-constrained limited-memory
//! quasi-Newton minimizer for pursuit refinement, and a column-wise Adam
//! variant for dictionary updates.

mod adam;
mod lbfgsb;

pub use adam::AdamState;
pub use lbfgsb::{minimize_box, MinimizeOptions, Minimum};

/// Per-coordinate bounds. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimError> {
        if lower.len() != upper.len() {
            return Err(OptimError::Dimension(format!(
                "{} lower bounds vs {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(OptimError::Dimension(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(*l).min(*u);
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum OptimError {
    /// The objective produced NaN or an infinite value. `x`/`f` hold the last
    /// iterate at which it was finite.
    #[error("objective not finite; last valid value {f} at {x:?}")]
    NonFinite { x: Vec<f64>, f: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
