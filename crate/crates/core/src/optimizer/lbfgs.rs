use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::record::{IterationRow, RunRecord, Stage};
use crate::circuit::Angles;
use crate::error::{AqcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// Relative cost decrease below which the run counts as converged.
    pub cost_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_iterations: 1000,
            grad_tol: 1e-8,
            cost_tol: 1e-15,
            max_line_search: 40,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Curvature pairs `(s, y)` for the two-loop recursion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LbfgsMemory {
    pub capacity: usize,
    pub s: VecDeque<Vec<f64>>,
    pub y: VecDeque<Vec<f64>>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            s: VecDeque::new(),
            y: VecDeque::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    /// Stores a pair unless it violates the curvature condition. Returns
    /// whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > f64::EPSILON * dot(&y, &y)) || self.capacity == 0 {
            return false;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        true
    }

    /// `−H·g` from the two-loop recursion.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let k = self.s.len();
        let mut a = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&self.y[i], &self.s[i])).collect();
        for i in (0..k).rev() {
            a[i] = rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= a[i] * yj;
            }
        }
        if let (Some(s), Some(y)) = (self.s.back(), self.y.back()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let b = rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (a[i] - b) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// An evaluated point.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome {
    /// Accepted step satisfying the strong Wolfe conditions.
    pub accepted: Option<(f64, Point)>,
    /// Lowest point evaluated (the start point if nothing was lower).
    pub best: Point,
    pub evaluations: usize,
}

fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let den = db - da + 2.0 * d2;
    if den == 0.0 {
        return None;
    }
    let t = b - (b - a) * (db + d2 - d1) / den;
    t.is_finite().then_some(t)
}

/// Strong-Wolfe bracketing line search with cubic-interpolation zoom.
pub fn strong_wolfe<F>(
    eval: &mut F,
    start: &Point,
    p: &[f64],
    alpha0: f64,
    config: &LbfgsConfig,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d0 = dot(&start.g, p);
    let mut best = start.clone();
    let mut evaluations = 0;
    let mut probe = |alpha: f64, best: &mut Point, evals: &mut usize| -> Result<(Point, f64)> {
        let x: Vec<f64> = start.x.iter().zip(p).map(|(x, d)| x + alpha * d).collect();
        let (f, g) = eval(&x)?;
        *evals += 1;
        let d = dot(&g, p);
        let pt = Point { x, f, g };
        if pt.f.is_finite() && pt.f < best.f {
            *best = pt.clone();
        }
        Ok((pt, d))
    };
    let (c1, c2) = (config.c1, config.c2);
    let sufficient = |alpha: f64, f: f64| f <= start.f + c1 * alpha * d0;
    let curvature = |d: f64| d.abs() <= -c2 * d0;

    if !(d0 < 0.0) {
        return Ok(LineSearchOutcome {
            accepted: None,
            best,
            evaluations,
        });
    }

    // bracketing phase
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, start.f, d0);
    let mut alpha = alpha0;
    let mut bracket = None;
    for i in 0..config.max_line_search {
        let (pt, d) = probe(alpha, &mut best, &mut evaluations)?;
        if !pt.f.is_finite() {
            // shrink into the finite region
            bracket = Some(((a_prev, f_prev, d_prev), (alpha, f64::INFINITY, f64::NAN)));
            break;
        }
        if !sufficient(alpha, pt.f) || (i > 0 && pt.f >= f_prev) {
            bracket = Some(((a_prev, f_prev, d_prev), (alpha, pt.f, d)));
            break;
        }
        if curvature(d) {
            return Ok(LineSearchOutcome {
                accepted: Some((alpha, pt)),
                best,
                evaluations,
            });
        }
        if d >= 0.0 {
            bracket = Some(((alpha, pt.f, d), (a_prev, f_prev, d_prev)));
            break;
        }
        a_prev = alpha;
        f_prev = pt.f;
        d_prev = d;
        alpha *= 2.0;
    }
    let Some(((mut lo, mut f_lo, mut d_lo), (mut hi, mut f_hi, mut d_hi))) = bracket else {
        return Ok(LineSearchOutcome {
            accepted: None,
            best,
            evaluations,
        });
    };

    // zoom phase
    while evaluations < config.max_line_search {
        let width = (hi - lo).abs();
        if width <= 1e-14 * lo.abs().max(hi.abs()).max(1e-300) {
            break;
        }
        let (left, right) = (lo.min(hi), lo.max(hi));
        let mut alpha = 0.5 * (lo + hi);
        if f_hi.is_finite() && d_hi.is_finite() {
            if let Some(t) = cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi) {
                if t > left + 0.1 * width && t < right - 0.1 * width {
                    alpha = t;
                }
            }
        }
        let (pt, d) = probe(alpha, &mut best, &mut evaluations)?;
        if !pt.f.is_finite() || !sufficient(alpha, pt.f) || pt.f >= f_lo {
            hi = alpha;
            f_hi = pt.f;
            d_hi = d;
        } else {
            if curvature(d) {
                return Ok(LineSearchOutcome {
                    accepted: Some((alpha, pt)),
                    best,
                    evaluations,
                });
            }
            if d * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            lo = alpha;
            f_lo = pt.f;
            d_lo = d;
        }
    }
    Ok(LineSearchOutcome {
        accepted: None,
        best,
        evaluations,
    })
}

/// First trial step: unit step once curvature is known, otherwise scaled so
/// the first move has length at most 1.
pub fn initial_step(memory: &LbfgsMemory, g: &[f64]) -> f64 {
    if memory.is_empty() {
        (1.0 / norm(g)).min(1.0)
    } else {
        1.0
    }
}

/// Minimizes `f` from `x0`. The callable returns the value and gradient.
pub fn lbfgs_minimize<F>(mut f: F, x0: &Angles, config: &LbfgsConfig) -> Result<(Angles, RunRecord)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut record = RunRecord::new("none");
    let (f0, g0) = f(x0.as_slice())?;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(AqcError::Divergence("non-finite value at the start point".into()));
    }
    let mut cur = Point {
        x: x0.0.clone(),
        f: f0,
        g: g0,
    };
    let mut best = cur.clone();
    let mut memory = LbfgsMemory::new(config.memory);
    for it in 0..=config.max_iterations {
        let gn = norm(&cur.g);
        record.push(IterationRow {
            iteration: it as u64,
            restart: 0,
            stage: Stage::Lbfgs,
            cost: cur.f,
            global_cost: cur.f,
            weight: 0.0,
            grad_norm: gn,
            fidelity: None,
            wall_ms: 0.0,
        });
        if gn < config.grad_tol {
            record.converged = true;
            break;
        }
        if it == config.max_iterations {
            break;
        }
        let mut p = memory.direction(&cur.g);
        if !(dot(&p, &cur.g) < 0.0) {
            memory.clear();
            p = memory.direction(&cur.g);
        }
        let alpha0 = initial_step(&memory, &cur.g);
        let mut ls = strong_wolfe(&mut f, &cur, &p, alpha0, config)?;
        if ls.accepted.is_none() && !memory.is_empty() {
            // retry once along steepest descent
            memory.clear();
            p = memory.direction(&cur.g);
            ls = strong_wolfe(&mut f, &cur, &p, initial_step(&memory, &cur.g), config)?;
        }
        if ls.best.f < best.f {
            best = ls.best.clone();
        }
        let Some((_, next)) = ls.accepted else {
            record.stalled = true;
            break;
        };
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        let decrease = cur.f - next.f;
        cur = next;
        if cur.f < best.f {
            best = cur.clone();
        }
        if decrease.abs() <= config.cost_tol * cur.f.abs().max(1.0) {
            record.converged = true;
            record.push(IterationRow {
                iteration: it as u64 + 1,
                restart: 0,
                stage: Stage::Lbfgs,
                cost: cur.f,
                global_cost: cur.f,
                weight: 0.0,
                grad_norm: norm(&cur.g),
                fidelity: None,
                wall_ms: 0.0,
            });
            break;
        }
    }
    Ok((Angles(best.x), record))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        // diag(1..5) with minimizer at (1, −1, 2, 0, 3)
        let c = [1.0, -1.0, 2.0, 0.0, 3.0];
        let mut f = 0.0;
        let mut g = vec![0.0; 5];
        for i in 0..5 {
            let h = (i + 1) as f64;
            let d = x[i] - c[i];
            f += 0.5 * h * d * d;
            g[i] = h * d;
        }
        Ok((f, g))
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn convex_quadratic() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let (x, rec) = lbfgs_minimize(quadratic, &Angles(vec![0.0; 5]), &cfg).unwrap();
        let c = [1.0, -1.0, 2.0, 0.0, 3.0];
        for (xi, ci) in x.0.iter().zip(c) {
            assert!((xi - ci).abs() < 1e-8);
        }
        assert!(rec.rows.len() <= 21, "{} iterations", rec.rows.len());
        assert!(rec.converged);
    }

    #[test]
    fn start_at_optimum() {
        let x0 = Angles(vec![1.0, -1.0, 2.0, 0.0, 3.0]);
        let (x, rec) = lbfgs_minimize(quadratic, &x0, &LbfgsConfig::default()).unwrap();
        assert_eq!(x, x0);
        assert_eq!(rec.rows.len(), 1);
        assert!(rec.converged);
    }

    #[test]
    fn rosenbrock_smoke() {
        let cfg = LbfgsConfig {
            grad_tol: 1e-6,
            cost_tol: 0.0,
            max_iterations: 200,
            ..Default::default()
        };
        let (x, rec) = lbfgs_minimize(rosenbrock, &Angles(vec![-1.2, 1.0]), &cfg).unwrap();
        assert!(rec.converged && !rec.stalled);
        assert!(rec.rows.last().unwrap().grad_norm < 1e-6);
        assert!((x.0[0] - 1.0).abs() < 1e-5 && (x.0[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn line_search_satisfies_strong_wolfe() {
        let cfg = LbfgsConfig::default();
        let (f, g) = rosenbrock(&[-1.2, 1.0]).unwrap();
        let start = Point {
            x: vec![-1.2, 1.0],
            f,
            g: g.clone(),
        };
        let p: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut eval = rosenbrock;
        let out = strong_wolfe(&mut eval, &start, &p, 1.0, &cfg).unwrap();
        let (alpha, pt) = out.accepted.unwrap();
        let d0 = dot(&g, &p);
        assert!(pt.f <= f + cfg.c1 * alpha * d0);
        assert!(dot(&pt.g, &p).abs() <= -cfg.c2 * d0);
    }

    #[test]
    fn ascent_direction_fails_cleanly() {
        let cfg = LbfgsConfig::default();
        let (f, g) = quadratic(&[0.0; 5]).unwrap();
        let start = Point {
            x: vec![0.0; 5],
            f,
            g: g.clone(),
        };
        let mut eval = quadratic;
        let out = strong_wolfe(&mut eval, &start, &g, 1.0, &cfg).unwrap();
        assert!(out.accepted.is_none());
        assert_eq!(out.best, start);
    }

    #[test]
    fn memory_respects_capacity_and_curvature() {
        let mut m = LbfgsMemory::new(2);
        assert!(!m.push(vec![1.0], vec![-1.0]));
        for i in 0..4 {
            assert!(m.push(vec![1.0 + i as f64], vec![1.0]));
        }
        assert_eq!(m.s.len(), 2);
        assert_eq!(m.s[0], vec![3.0]);
    }
}
