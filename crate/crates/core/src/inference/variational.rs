//! Linear estimator from the variational (integration-by-parts) identity,
//! usable with bare points when the move law is uniform or exponential.
//!
//! The pair statistic is replaced by a C1 surrogate whose band indicators
//! fall smoothly from 1 to 0 over a shell of width `0.05 R` centred on each
//! band edge. For each vector test function `F` and each axis `k` the
//! equation
//!
//! ```text
//! sum_y [ d_k F_k(y) - F_k(y) (d_k S1 . theta1 + sum_m d_k S2_m(y) theta2_m) ] = 0
//! ```
//!
//! is linear in `theta`; all `p * d` rows are stacked and solved by least
//! squares.

use nalgebra::{DMatrix, DVector};

use super::{EstimatorConfig, FitResult, Observation};
use crate::error::{Error, Result};
use crate::geometry::{erode, GlobalShift, LatticeSpec};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::moves::MoveModel;
use crate::points::{CellList, NeighborSearch};

/// Relative width of the band-edge taper.
pub const TAPER_WIDTH: f64 = 0.05;

/// Smooth weight `psi(y)` and its gradient.
pub trait Psi: Sync {
    fn value_grad(&self, y: &[f64], grad: &mut [f64]) -> f64;
}

/// Product of `cos^2` bumps over every translate of the move box; vanishes
/// with its gradient on the box boundaries.
#[derive(Clone, Debug)]
pub struct BoxBump {
    pub centre: Vec<f64>,
    pub half: Vec<f64>,
}

impl Psi for BoxBump {
    fn value_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let d = y.len();
        let mut v = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for k in 0..d {
            let mut t = y[k] - self.centre[k];
            t -= t.round();
            let h = self.half[k];
            if t.abs() > h {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return 0.0;
            }
            let a = std::f64::consts::PI / (2.0 * h);
            v[k] = (a * t).cos().powi(2);
            dv[k] = -a * (2.0 * a * t).sin();
        }
        product_rule(&v, &dv, grad)
    }
}

/// `prod_k sin^2(pi (y_k - u_k))`, zero on every shifted lattice hyperplane.
#[derive(Clone, Debug)]
pub struct PeriodicSine {
    pub shift: Vec<f64>,
}

impl Psi for PeriodicSine {
    fn value_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let pi = std::f64::consts::PI;
        let v: Vec<f64> = y.iter().zip(&self.shift).map(|(c, u)| (pi * (c - u)).sin().powi(2)).collect();
        let dv: Vec<f64> = y.iter().zip(&self.shift).map(|(c, u)| pi * (2.0 * pi * (c - u)).sin()).collect();
        product_rule(&v, &dv, grad)
    }
}

fn product_rule(v: &[f64], dv: &[f64], grad: &mut [f64]) -> f64 {
    let total: f64 = v.iter().product();
    for k in 0..v.len() {
        grad[k] = dv[k] * v.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, x)| x).product::<f64>();
    }
    total
}

fn is_unit_cubic(lat: &LatticeSpec) -> bool {
    lat.basis().iter().enumerate().all(|(a, row)| {
        row.iter().enumerate().all(|(b, v)| (v - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12)
    })
}

/// Default weight for the two supported move families on the unit cubic
/// lattice.
pub fn default_psi(moves: &MoveModel, lattice: &LatticeSpec, shift: &GlobalShift) -> Result<Box<dyn Psi>> {
    if !is_unit_cubic(lattice) {
        return Err(Error::Config("the default weight needs the unit cubic lattice; supply psi".into()));
    }
    match moves {
        MoveModel::Uniform { lower, upper } => {
            let half: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
            if half.iter().any(|&h| h > 0.5) {
                return Err(Error::Config("the default weight needs a move box of side at most 1".into()));
            }
            let centre = lower.iter().zip(upper).zip(shift.as_slice()).map(|((l, u), s)| s + 0.5 * (l + u)).collect();
            Ok(Box::new(BoxBump { centre, half }))
        }
        MoveModel::ExponentialOrthant { .. } => Ok(Box::new(PeriodicSine { shift: shift.0.clone() })),
        MoveModel::GaussianIsotropic { .. } => Err(Error::Config(
            "the variational estimator needs uniform or exponential moves".into(),
        )),
    }
}

/// Smoothed indicator of `rho <= edge`: first and second derivatives in rho.
fn step_derivatives(rho: f64, edge: f64, w: f64) -> (f64, f64) {
    let t = (rho - (edge - 0.5 * w)) / w;
    if t <= 0.0 || t >= 1.0 {
        return (0.0, 0.0);
    }
    (-6.0 * t * (1.0 - t) / w, -(6.0 - 12.0 * t) / (w * w))
}

/// Stacked linear system `A theta = b` of the variational equations.
#[derive(Clone, Debug)]
pub struct VariationalSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub p1: usize,
    pub n_used: usize,
    pub volume: f64,
}

impl VariationalSystem {
    /// Equation values `b - A theta`.
    pub fn residual(&self, theta: &ThetaVector) -> DVector<f64> {
        let t = DVector::from_vec(theta.to_flat());
        &self.b - &self.a * t
    }
}

pub fn variational_system(obs: &Observation, family: &GibbsModel, psi: Option<&dyn Psi>) -> Result<VariationalSystem> {
    let d = family.dim();
    if obs.dim() != d {
        return Err(Error::Dimension { expected: d, got: obs.dim() });
    }
    if let MoveModel::GaussianIsotropic { .. } = family.moves {
        return Err(Error::Config("the variational estimator needs uniform or exponential moves".into()));
    }
    let owned;
    let psi: &dyn Psi = match psi {
        Some(p) => p,
        None => {
            owned = default_psi(&family.moves, &family.lattice, &obs.shift)?;
            owned.as_ref()
        }
    };
    let edges = family.interaction.breakpoints();
    let range = family.range();
    let w = TAPER_WIDTH * range;
    if edges.windows(2).any(|e| e[1] - e[0] <= w) {
        return Err(Error::Config("band widths must exceed the taper width".into()));
    }
    let p1 = family.p1();
    let p2 = family.p2();
    let p = p1 + p2;
    // Test functions: psi for the move parameter, then d S2_m psi.
    let n_fn = p;
    let reach = range + 0.5 * w;
    let inner = erode(&obs.window, reach);
    let cells = CellList::new(&obs.window, reach, obs.points.clone());

    let mut a = DMatrix::<f64>::zeros(n_fn * d, p);
    let mut b = DVector::<f64>::zeros(n_fn * d);
    let mut grad_s = vec![0.0; p2 * d];
    let mut hess_s = vec![0.0; p2 * d];
    let mut dpsi = vec![0.0; d];
    let mut n_used = 0;
    for j in 0..obs.points.len() {
        let y = obs.points.get(j);
        if !inner.contains(y) {
            continue;
        }
        n_used += 1;
        grad_s.iter_mut().for_each(|v| *v = 0.0);
        hess_s.iter_mut().for_each(|v| *v = 0.0);
        cells.for_each_within(y, reach, Some(j), |k, d2| {
            let rho = d2.sqrt();
            if rho == 0.0 {
                return;
            }
            let other = cells.get(k);
            for m in 0..p2 {
                let (mut t1, mut t2) = step_derivatives(rho, edges[m], w);
                if m > 0 {
                    let (l1, l2) = step_derivatives(rho, edges[m - 1], w);
                    t1 -= l1;
                    t2 -= l2;
                }
                if t1 == 0.0 && t2 == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let diff = y[c] - other[c];
                    grad_s[m * d + c] += t1 * diff / rho;
                    hess_s[m * d + c] += t2 * diff * diff / d2 + t1 * (1.0 / rho - diff * diff / (d2 * rho));
                }
            }
        });
        let psi_v = psi.value_grad(y, &mut dpsi);
        if psi_v == 0.0 && dpsi.iter().all(|v| *v == 0.0) {
            continue;
        }
        for l in 0..n_fn {
            for k in 0..d {
                // F_k and d_k F_k of test function l.
                let (fk, dfk) = if p1 == 1 && l == 0 {
                    (psi_v, dpsi[k])
                } else {
                    let m = l - p1;
                    let g = grad_s[m * d + k];
                    (g * psi_v, hess_s[m * d + k] * psi_v + g * dpsi[k])
                };
                let row = l * d + k;
                b[row] += dfk;
                if p1 == 1 {
                    a[(row, 0)] += fk;
                }
                for m in 0..p2 {
                    a[(row, p1 + m)] += fk * grad_s[m * d + k];
                }
            }
        }
    }
    if n_used == 0 {
        return Err(Error::InsufficientData { usable: 0 });
    }
    Ok(VariationalSystem {
        a,
        b,
        p1,
        n_used,
        volume: obs.window.volume(),
    })
}

/// Least-squares solution of the variational system; a rank-deficient
/// system is an identifiability error.
pub fn fit_variational(obs: &Observation, family: &GibbsModel, cfg: &EstimatorConfig, psi: Option<&dyn Psi>) -> Result<FitResult> {
    let sys = variational_system(obs, family, psi)?;
    let svd = sys.a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::Identifiability);
    }
    let sol = svd.solve(&sys.b, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let theta_hat = ThetaVector::from_flat(sys.p1, sol.as_slice());
    let res = sys.residual(&theta_hat);
    Ok(FitResult {
        estimator: "variational".into(),
        criterion: res.iter().map(|v| v * v).sum(),
        theta_hat,
        converged: true,
        at_bound: false,
        n_sites_used: sys.n_used,
        residuals: res.iter().map(|v| v / sys.volume).collect(),
        iterations: 0,
        evaluations: 1,
        config: cfg.clone(),
        resolved: None,
    })
}
