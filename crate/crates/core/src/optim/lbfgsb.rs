//! Projected limited-memory BFGS for bound-constrained problems.
//!
//! Each iteration fixes the variables that sit on a bound with the gradient
//! pointing outward, builds an L-BFGS direction on the remaining free
//! variables, and backtracks along the projected path `P(x + αd)` until the
//! Armijo condition holds.

use std::collections::VecDeque;

use super::{BoxSpec, OptimError};

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    pub max_evals: usize,
    /// Stop when the infinity norm of the projected gradient drops below this.
    pub pgtol: f64,
    /// Stop when an accepted step lowers f by less than `ftol·max(|f|, |f_new|)`.
    pub ftol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 1000,
            max_evals: 5000,
            pgtol: 1e-10,
            ftol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Minimize `objective` over `bounds`, starting from `x0` (projected onto the
/// box first).
///
/// The objective writes its gradient into the second argument and returns
/// the value. The result is never worse than the starting point; if the
/// iteration budget runs out the best iterate is returned with
/// `converged == false`.
pub fn minimize_box<F>(
    mut objective: F,
    x0: &[f64],
    bounds: &BoxSpec,
    opts: &MinimizeOptions,
) -> Result<Minimum, OptimError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if bounds.len() != n {
        return Err(OptimError::Dimension(format!(
            "{n} variables but {} bounds",
            bounds.len()
        )));
    }
    let (lo, hi) = (&bounds.lower, &bounds.upper);
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut evals = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFinite { x, f: f64::NAN });
    }
    if n == 0 {
        return Ok(Minimum { x, f, iterations: 0, evaluations: 1, converged: true });
    }

    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory.max(1)];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters && evals < opts.max_evals {
        // projected gradient and free set
        let mut pg_norm = 0.0f64;
        for i in 0..n {
            let pinned = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
            free[i] = !pinned;
            if !pinned {
                pg_norm = pg_norm.max(g[i].abs());
            }
        }
        if pg_norm <= opts.pgtol {
            converged = true;
            break;
        }
        iterations += 1;

        // two-loop recursion restricted to the free variables
        for i in 0..n {
            d[i] = if free[i] { g[i] } else { 0.0 };
        }
        for (k, p) in memory.iter().enumerate().rev() {
            let a = p.rho * (0..n).filter(|&i| free[i]).map(|i| p.s[i] * d[i]).sum::<f64>();
            alpha_buf[k] = a;
            for i in 0..n {
                if free[i] {
                    d[i] -= a * p.y[i];
                }
            }
        }
        if let Some(p) = memory.back() {
            let gamma = 1.0 / (p.rho * dot(&p.y, &p.y));
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, p) in memory.iter().enumerate() {
            let beta = p.rho * (0..n).filter(|&i| free[i]).map(|i| p.y[i] * d[i]).sum::<f64>();
            for i in 0..n {
                if free[i] {
                    d[i] += p.s[i] * (alpha_buf[k] - beta);
                }
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);

        if !(dot(&d, &g) < 0.0) || memory.is_empty() {
            memory.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut step = if memory.is_empty() {
            (1.0 / d.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        // backtracking along the projected path
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                x_new[i] = (x[i] + step * d[i]).max(lo[i]).min(hi[i]);
            }
            let dg: f64 = (0..n).map(|i| (x_new[i] - x[i]) * g[i]).sum();
            if x_new == x {
                break;
            }
            let fv = objective(&x_new, &mut g_new);
            evals += 1;
            if !fv.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
                return Err(OptimError::NonFinite { x, f });
            }
            if fv <= f + ARMIJO_C1 * dg {
                accepted = Some(fv);
                break;
            }
            step *= 0.5;
            if evals >= opts.max_evals {
                break;
            }
        }
        let Some(fv) = accepted else {
            if memory.is_empty() {
                // no descent possible from here at machine precision
                converged = true;
                break;
            }
            memory.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            if opts.memory > 0 {
                memory.push_back(Pair { s, y, rho: 1.0 / sy });
            }
        }

        let decrease = f - fv;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = fv;
        if decrease <= opts.ftol * (f + decrease).abs().max(f.abs()) {
            converged = true;
            break;
        }
    }

    Ok(Minimum {
        x,
        f,
        iterations,
        evaluations: evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic(c: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> f64 {
        move |x, g| {
            let mut f = 0.0;
            for i in 0..x.len() {
                g[i] = 2.0 * (x[i] - c[i]);
                f += (x[i] - c[i]).powi(2);
            }
            f
        }
    }

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn unconstrained_quadratic() {
        let c = vec![0.3, -1.2, 2.5];
        let b = BoxSpec::new(vec![-5.0; 3], vec![5.0; 3]).unwrap();
        let m = minimize_box(quadratic(c.clone()), &[0.0; 3], &b, &Default::default()).unwrap();
        for i in 0..3 {
            assert!((m.x[i] - c[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_outside_box_projects() {
        let c = vec![3.0, -4.0, 0.5];
        let b = BoxSpec::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
        let m = minimize_box(quadratic(c), &[0.0; 3], &b, &Default::default()).unwrap();
        let expect = [1.0, -1.0, 0.5];
        for i in 0..3 {
            assert!((m.x[i] - expect[i]).abs() < 1e-8, "{:?}", m.x);
        }
    }

    #[test]
    fn rosenbrock_in_box() {
        let b = BoxSpec::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let m = minimize_box(rosenbrock, &[-1.2, 1.0], &b, &Default::default()).unwrap();
        assert!(m.f < 1e-10, "f = {} after {} iterations", m.f, m.iterations);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_with_active_bound() {
        // minimum over x0 ≤ 0.5 sits on the bound
        let b = BoxSpec::new(vec![-2.0, -2.0], vec![0.5, 2.0]).unwrap();
        let m = minimize_box(rosenbrock, &[-1.2, 1.0], &b, &Default::default()).unwrap();
        assert!((m.x[0] - 0.5).abs() < 1e-9);
        assert!((m.x[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn nan_reports_last_valid_iterate() {
        let obj = |x: &[f64], g: &mut [f64]| {
            g[0] = -1.0;
            if x[0] > 0.5 {
                f64::NAN
            } else {
                -x[0]
            }
        };
        let b = BoxSpec::unbounded(1);
        match minimize_box(obj, &[0.0], &b, &Default::default()) {
            Err(OptimError::NonFinite { x, f }) => {
                assert!(x[0] <= 0.5);
                assert!(f.is_finite());
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn bound_mismatch() {
        assert!(BoxSpec::new(vec![1.0], vec![0.0]).is_err());
        let b = BoxSpec::unbounded(2);
        assert!(minimize_box(quadratic(vec![0.0]), &[0.0], &b, &Default::default()).is_err());
    }

    proptest! {
        #[test]
        fn never_worse_and_inside_box(
            c in proptest::collection::vec(-3.0f64..3.0, 4),
            w in proptest::collection::vec(0.1f64..10.0, 4),
            x0 in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let b = BoxSpec::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
            let obj = |x: &[f64], g: &mut [f64]| {
                let mut f = 0.0;
                for i in 0..4 {
                    let r = x[i] - c[i];
                    f += w[i] * r * r + 0.1 * (3.0 * x[i]).sin();
                    g[i] = 2.0 * w[i] * r + 0.3 * (3.0 * x[i]).cos();
                }
                f
            };
            let mut g = vec![0.0; 4];
            let f0 = obj(&x0, &mut g);
            let m = minimize_box(obj, &x0, &b, &Default::default()).unwrap();
            prop_assert!(m.f <= f0);
            prop_assert!(b.contains(&m.x));
        }
    }
}
