//! Descent with Armijo backtracking for smooth objectives on flat vector
//! spaces or on products of surfaces (via projection and retraction).

mod field;
mod precond;

pub use field::{AxisKind, DofMap, FieldObjective};
pub use precond::SpectralPreconditioner;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Preconditioned limited-memory BFGS directions.
    Lbfgs,
    /// Preconditioned gradient directions.
    SteepestDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop when the normalized gradient sup-norm falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub rule: StepRule,
    /// Correction pairs kept by L-BFGS.
    pub memory: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, max_iter: 20_000, rule: StepRule::Lbfgs, memory: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// The line search could not find a decrease.
    Stalled,
}

impl SolveStatus {
    pub fn converged(&self) -> bool {
        *self == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub energy: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    /// Energy at `x` evaluated directly.
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Per-iteration energies, accumulated from stable increments so they are monotone.
    pub log: Vec<IterRecord>,
}

impl SolveOutcome {
    /// Log lines `iter,energy,residual`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iter,energy,residual\n");
        for r in &self.log {
            s.push_str(&format!("{},{:e},{:e}\n", r.iter, r.energy, r.residual));
        }
        s
    }
}

/// A smooth objective over a vector of unknowns. Gradients are expected in
/// the tangent space at the current point when the domain is curved.
pub trait Objective {
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// `E(x₁) − E(x₀)`, accurate when the two points are close.
    fn delta(&self, x0: &[f64], x1: &[f64]) -> Result<f64>;

    /// Point reached from `x` along `d` with the given step.
    fn retract(&self, x: &[f64], d: &[f64], step: f64) -> Result<Vec<f64>> {
        Ok(x.iter().zip(d).map(|(a, b)| a + step * b).collect())
    }

    /// Moves a vector into the tangent space at `x`.
    fn transport(&self, _x: &[f64], _v: &mut [f64]) -> Result<()> {
        Ok(())
    }

    /// Approximate inverse Hessian applied to `g`.
    fn precondition(&self, _x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        Ok(g.to_vec())
    }

    /// Stopping measure of a gradient.
    fn residual(&self, g: &[f64]) -> f64 {
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop<O: Objective>(obj: &O, x: &[f64], g: &[f64], hist: &VecDeque<Pair>) -> Result<Vec<f64>> {
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; hist.len()];
    for (i, p) in hist.iter().enumerate().rev() {
        alpha[i] = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= alpha[i] * yi);
    }
    let mut r = obj.precondition(x, &q)?;
    if let Some(last) = hist.back() {
        let py = obj.precondition(x, &last.y)?;
        let yhy = dot(&last.y, &py);
        if yhy > 0.0 {
            let gamma = 1.0 / (last.rho * yhy);
            r.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for (i, p) in hist.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &r);
        r.iter_mut().zip(&p.s).for_each(|(ri, si)| *ri += (alpha[i] - beta) * si);
    }
    r.iter_mut().for_each(|v| *v = -*v);
    Ok(r)
}

/// Descent from `x0` until the residual drops to `settings.tol`.
///
/// Accepted steps satisfy the Armijo condition with `c = 1e−4` on halved
/// trial steps starting from 1. Retractions that fail with an ambiguous
/// projection are treated as rejected trials.
pub fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, settings: &SolverSettings) -> Result<SolveOutcome> {
    let mut x = x0;
    let (mut energy, mut g) = obj.value_grad(&x)?;
    let mut acc = energy;
    let mut res = obj.residual(&g);
    let mut log = vec![IterRecord { iter: 0, energy, residual: res }];
    let mut hist: VecDeque<Pair> = VecDeque::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    loop {
        if res <= settings.tol {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;

        let mut d = match settings.rule {
            StepRule::Lbfgs if !hist.is_empty() => two_loop(obj, &x, &g, &hist)?,
            _ => obj.precondition(&x, &g)?.into_iter().map(|v| -v).collect(),
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = obj.precondition(&x, &g)?.into_iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                d = g.iter().map(|v| -v).collect();
                slope = -dot(&g, &g);
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            match obj.retract(&x, &d, step) {
                Ok(x1) => {
                    let de = obj.delta(&x, &x1)?;
                    if de <= ARMIJO_C * step * slope {
                        accepted = Some((x1, de));
                        break;
                    }
                }
                Err(Error::AmbiguousProjection { .. }) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((x1, de)) = accepted else {
            status = SolveStatus::Stalled;
            break;
        };

        let (e1, g1) = obj.value_grad(&x1)?;
        let mut s: Vec<f64> = x1.iter().zip(&x).map(|(a, b)| a - b).collect();
        obj.transport(&x1, &mut s)?;
        let mut g_old = g;
        obj.transport(&x1, &mut g_old)?;
        let y: Vec<f64> = g1.iter().zip(&g_old).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == settings.memory.max(1) {
                hist.pop_front();
            }
            hist.push_back(Pair { rho: 1.0 / sy, s, y });
        }
        // Parallel-transported history is approximate on curved domains.
        if settings.rule == StepRule::Lbfgs && hist.len() > 1 {
            let older = hist.len() - 1;
            for p in hist.iter_mut().take(older) {
                obj.transport(&x1, &mut p.s)?;
                obj.transport(&x1, &mut p.y)?;
                let sy = dot(&p.s, &p.y);
                p.rho = if sy > 0.0 { 1.0 / sy } else { 0.0 };
            }
            hist.retain(|p| p.rho > 0.0);
        }

        x = x1;
        g = g1;
        energy = e1;
        acc += de;
        res = obj.residual(&g);
        log.push(IterRecord { iter: iterations, energy: acc, residual: res });
    }

    Ok(SolveOutcome { x, energy, residual: res, iterations, status, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        diag: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let v = x.iter().zip(&self.diag).map(|(a, d)| 0.5 * d * a * a).sum();
            Ok((v, x.iter().zip(&self.diag).map(|(a, d)| d * a).collect()))
        }
        fn delta(&self, x0: &[f64], x1: &[f64]) -> Result<f64> {
            Ok(x0.iter().zip(x1).zip(&self.diag).map(|((a, b), d)| 0.5 * d * (b - a) * (b + a)).sum())
        }
    }

    #[test]
    fn lbfgs_solves_ill_conditioned_quadratic() {
        let obj = Quadratic { diag: (1..=50).map(|i| i as f64 / 10.0).collect() };
        let out = minimize(&obj, vec![1.0; 50], &SolverSettings { tol: 1e-10, ..Default::default() }).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!(out.x.iter().all(|v| v.abs() < 1e-8));
        assert!(out.log.windows(2).all(|w| w[1].energy < w[0].energy));
    }

    #[test]
    fn steepest_descent_converges() {
        let obj = Quadratic { diag: vec![0.5, 1.0, 1.5] };
        let settings = SolverSettings { tol: 1e-10, rule: StepRule::SteepestDescent, ..Default::default() };
        let out = minimize(&obj, vec![1.0, -2.0, 3.0], &settings).unwrap();
        assert!(out.status.converged());
    }

    #[test]
    fn iteration_cap_reported() {
        let obj = Quadratic { diag: (1..=50).map(|i| (i * i) as f64).collect() };
        let settings = SolverSettings { tol: 1e-14, max_iter: 2, ..Default::default() };
        let out = minimize(&obj, vec![1.0; 50], &settings).unwrap();
        assert_eq!(out.status, SolveStatus::MaxIterations);
        assert_eq!(out.iterations, 2);
    }
}
