//! Projected limited-memory BFGS with Armijo backtracking along the
//! projected path, for simple box constraints.
//!
//! The objective returns the `L²` representer of its gradient; `measure`
//! converts Euclidean sums into the `L²` pairing (`⟨g, d⟩ = measure Σ g d`).
//! The two-loop recursion is invariant under that scaling, so only the
//! sufficient-decrease test and the stopping norm depend on it.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the `L²` norm of the projected gradient drops below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// First trial step moves the largest component by this fraction of
    /// `max(‖x‖∞, 1)` whenever no curvature pairs are stored.
    pub initial_step: f64,
    pub measure: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iter: 200,
            grad_tol: 1e-9,
            armijo: 1e-4,
            max_backtracks: 40,
            initial_step: 0.1,
            measure: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
        }
    }
}

/// One accepted iterate; the first record describes the starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
}

impl OptimReport {
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Gradient with components of active bounds zeroed.
fn free_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * (dot(&s, &s) * dot(&y, &y)).sqrt()) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `H q`.
    fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut q = q.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }
}

/// Minimises `f` over the box `[lower, upper]` starting from the projection
/// of `x0`. Accepted values never increase.
pub fn minimize_projected<F>(
    mut f: F,
    x0: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: LbfgsOptions,
) -> Result<OptimReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x)?;
    let mut memory = Memory {
        pairs: VecDeque::new(),
        cap: opts.memory.max(1),
    };
    let norm = |v: &[f64]| (opts.measure * dot(v, v)).sqrt();

    let mut free = free_gradient(&x, &g, lower, upper);
    let mut history = vec![IterationRecord {
        iteration: 0,
        value: fx,
        grad_norm: norm(&free),
        step: 0.0,
    }];

    for it in 1..=opts.max_iter + 1 {
        if norm(&free) <= opts.grad_tol {
            return Ok(OptimReport {
                x,
                value: fx,
                history,
                termination: Termination::Converged,
            });
        }
        if it > opts.max_iter {
            break;
        }
        let mut d: Vec<f64> = memory.apply(&free).into_iter().map(|v| -v).collect();
        for (di, fi) in d.iter_mut().zip(&free) {
            if *fi == 0.0 {
                *di = 0.0;
            }
        }
        let mut fresh = memory.pairs.is_empty();
        if !(dot(&d, &g) < 0.0) {
            memory.pairs.clear();
            d = free.iter().map(|v| -v).collect();
            fresh = true;
        }
        let mut t = if fresh {
            opts.initial_step * max_abs(&x).max(1.0) / max_abs(&d)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut trial, lower, upper);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = opts.measure * dot(&g, &moved);
            if max_abs(&moved) > 0.0 {
                let (ft, gt) = f(&trial)?;
                if ft.is_finite() && ft <= fx + opts.armijo * decrease {
                    accepted = Some((trial, moved, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, s, ft, gt)) = accepted else {
            return Ok(OptimReport {
                x,
                value: fx,
                history,
                termination: Termination::LineSearchFailed,
            });
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        x = trial;
        fx = ft;
        g = gt;
        free = free_gradient(&x, &g, lower, upper);
        history.push(IterationRecord {
            iteration: it,
            value: fx,
            grad_norm: norm(&free),
            step: t,
        });
    }
    Ok(OptimReport {
        x,
        value: fx,
        history,
        termination: Termination::MaxIterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn unconstrained_rosenbrock() {
        let inf = f64::INFINITY;
        let rep = minimize_projected(
            rosenbrock,
            vec![-1.2, 1.0],
            &[-inf, -inf],
            &[inf, inf],
            LbfgsOptions {
                max_iter: 500,
                grad_tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6);
        for w in rep.history.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn box_constrained_quadratic() {
        // minimise Σ (x_i - c_i)^2 on [0, 1]^3 with c outside the box
        let c = [2.0, -1.0, 0.3];
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
            let g = x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect();
            Ok((v, g))
        };
        let rep = minimize_projected(f, vec![0.5; 3], &[0.0; 3], &[1.0; 3], LbfgsOptions::default()).unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-12);
        assert!(rep.x[1].abs() < 1e-12);
        assert!((rep.x[2] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn stationary_start_terminates_immediately() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((x[0] * x[0], vec![2.0 * x[0]])) };
        let rep = minimize_projected(f, vec![0.0], &[-1.0], &[1.0], LbfgsOptions::default()).unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert_eq!(rep.iterations(), 0);
    }
}
