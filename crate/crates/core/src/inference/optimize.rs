//! Box-constrained optimizers used by the estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Componentwise bounds on a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Bounds { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// True when some coordinate sits within `rel` of the box width from a face.
    pub fn touches(&self, x: &[f64], rel: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).any(|(v, (l, u))| {
            let tol = rel * (u - l).abs().max(1e-300);
            (v - l).abs() <= tol || (u - v).abs() <= tol
        })
    }
}

#[derive(Clone, Debug)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization with every trial point projected into the box.
///
/// Stops when the spread of simplex values is below `ftol` relative to
/// their magnitude, or the simplex has collapsed. Non-finite objective
/// values are treated as `+inf`. One restart from the best vertex guards
/// against premature collapse.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    ftol: f64,
    max_iter: usize,
) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let mut iterations = 0usize;
    let mut best = (start.clone(), eval(&start, &mut evals));
    let mut converged = false;

    for _restart in 0..2 {
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push(best.clone());
        for k in 0..n {
            let mut v = best.0.clone();
            let width = bounds.upper[k] - bounds.lower[k];
            let step = if width.is_finite() { 0.05 * width } else { 0.05 * v[k].abs().max(1e-2) };
            v[k] = if v[k] + step <= bounds.upper[k] { v[k] + step } else { v[k] - step };
            bounds.clamp(&mut v);
            let fv = eval(&v, &mut evals);
            simplex.push((v, fv));
        }
        converged = false;
        while iterations < max_iter {
            iterations += 1;
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (fb, fw) = (simplex[0].1, simplex[n].1);
            let diameter = simplex[1..]
                .iter()
                .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            let scale = 1.0 + simplex[0].0.iter().map(|c| c.abs()).fold(0.0, f64::max);
            if fb.is_finite() && (fw - fb <= ftol * (fb.abs() + fw.abs()) + ftol * ftol || diameter <= 1e-10 * scale) {
                converged = true;
                break;
            }
            let mut centroid = vec![0.0; n];
            for (v, _) in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| {
                let mut p: Vec<f64> = centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect();
                bounds.clamp(&mut p);
                p
            };
            let xr = along(1.0);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let x = along(0.5);
                    let v = eval(&x, &mut evals);
                    (x, v)
                } else {
                    let x = along(-0.5);
                    let v = eval(&x, &mut evals);
                    (x, v)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for (v, fv) in simplex.iter_mut().skip(1) {
                        for (c, b) in v.iter_mut().zip(&x0) {
                            *c = b + 0.5 * (*c - b);
                        }
                        *fv = eval(v, &mut evals);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best.1 - ftol * best.1.abs();
        if simplex[0].1 <= best.1 {
            best = simplex[0].clone();
        }
        if !converged || !improved {
            break;
        }
    }
    OptimOutcome {
        x: best.0,
        fx: best.1,
        iterations,
        evaluations: evals,
        converged,
    }
}

/// Value, gradient and Hessian of a concave objective.
pub type Curvature = (f64, Vec<f64>, DMatrix<f64>);

/// Projected Newton ascent with backtracking for a concave objective;
/// falls back to the gradient when the Hessian is not negative definite.
pub fn newton_ascent<F: FnMut(&[f64]) -> Option<Curvature>>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    ftol: f64,
    max_iter: usize,
) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.clamp(&mut x);
    let mut evals = 1;
    let Some(mut cur) = f(&x) else {
        return OptimOutcome { x, fx: f64::NEG_INFINITY, iterations: 0, evaluations: evals, converged: false };
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let g = DVector::from_vec(cur.1.clone());
        // Coordinates pressed against a face by the gradient stay fixed; the
        // Newton system is solved over the rest.
        let free: Vec<usize> = (0..n)
            .filter(|&k| !((x[k] <= bounds.lower[k] && g[k] < 0.0) || (x[k] >= bounds.upper[k] && g[k] > 0.0)))
            .collect();
        let mut d = DVector::zeros(n);
        if !free.is_empty() {
            let gf = DVector::from_iterator(free.len(), free.iter().map(|&k| g[k]));
            let neg_h = DMatrix::from_fn(free.len(), free.len(), |a, b| -cur.2[(free[a], free[b])]);
            let df = match neg_h.cholesky() {
                Some(ch) => ch.solve(&gf),
                None => gf,
            };
            for (a, &k) in free.iter().enumerate() {
                d[k] = df[a];
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
            bounds.clamp(&mut trial);
            let step: f64 = trial.iter().zip(&x).zip(g.iter()).map(|((a, b), gk)| (a - b) * gk).sum();
            evals += 1;
            if let Some(next) = f(&trial) {
                if next.0.is_finite() && next.0 >= cur.0 + 1e-4 * step {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            // No ascent possible along the projected direction.
            converged = d.iter().all(|v| v.abs() <= 1e-10 * (1.0 + x.iter().map(|c| c.abs()).fold(0.0, f64::max)))
                || cur.1.iter().all(|v| v.abs() < 1e-9);
            break;
        };
        let dx = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let df = (next.0 - cur.0).abs();
        x = trial;
        cur = next;
        if dx <= 1e-10 * (1.0 + x.iter().map(|c| c.abs()).fold(0.0, f64::max)) || df <= ftol * cur.0.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    OptimOutcome {
        x,
        fx: cur.0,
        iterations,
        evaluations: evals,
        converged,
    }
}
