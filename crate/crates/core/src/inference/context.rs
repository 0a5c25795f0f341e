//! Per-site quadrature cache shared by every evaluation of one fit.
//!
//! For a frozen observation the pair statistic at each quadrature node of
//! each usable site does not depend on `theta`, so it is computed once and
//! stored as a small table of distinct count patterns. An evaluation at a
//! new `theta` is then one pass of multiply-adds over the cached nodes.

use nalgebra::DMatrix;

use super::optimize::{nelder_mead, newton_ascent, Curvature};
use super::{EstimatorConfig, FitResult, Framework, Observation, OptimizerKind, ResolvedConfig, TestFn, TestFunction};
use crate::error::{Error, Result};
use crate::geometry::BorderCorrection;
use crate::intensity::{GibbsModel, ThetaVector};
use crate::interactions::pair_statistic_excluding;
use crate::moves::{QuadratureOptions, QuadratureRule};
use crate::points::CellList;

struct SiteCache {
    site: Vec<f64>,
    x_obs: Vec<f64>,
    /// `S(i, X_i)` at the observed move.
    s_obs: Vec<f64>,
    obs_hard: bool,
    /// Distinct pair-count vectors met at the admissible nodes.
    patterns: Vec<Vec<f64>>,
    /// `(node index, pattern id)` of every node with `b_n = 1` and no
    /// hard-core breach.
    nodes: Vec<(u32, u32)>,
}

/// Quantities derived from the score at one `theta`.
#[derive(Clone, Debug)]
pub struct Moments {
    pub lpl: f64,
    pub gradient: Vec<f64>,
    /// `DLR_n(S_j)` for each component; equals `-gradient`.
    pub dlr_score: Vec<f64>,
    /// Observed part `sum S(i, X_i)` of the score equations.
    pub observed: Vec<f64>,
    /// Compensator part `sum E_{Lambda_n} S` of the score equations.
    pub compensator: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

pub struct EstimationContext {
    gm: GibbsModel,
    resolved: ResolvedConfig,
    quad: QuadratureRule,
    node_s1: Vec<f64>,
    sites: Vec<SiteCache>,
    volume: f64,
    infeasible: bool,
}

impl EstimationContext {
    pub fn new(obs: &Observation, gm: &GibbsModel, cfg: &EstimatorConfig) -> Result<Self> {
        if obs.framework != Framework::F1 {
            return Err(Error::Config("site-based estimating equations need Framework-1 data".into()));
        }
        if obs.dim() != gm.dim() {
            return Err(Error::Dimension { expected: gm.dim(), got: obs.dim() });
        }
        let resolved = cfg.resolve(obs, gm)?;
        let p1 = gm.p1();
        let opts = QuadratureOptions {
            min_theta1: (p1 > 0).then(|| resolved.bounds.lower[0]),
            m_hint: None,
        };
        let quad = gm.moves.quadrature_with(resolved.resolution, &opts);
        let mut node_s1 = Vec::with_capacity(quad.len() * p1);
        for (x, _) in quad.iter() {
            node_s1.extend(gm.moves.s1_unchecked(x));
        }

        let range = gm.range();
        let border = BorderCorrection::new(&obs.window, resolved.m, range);
        let cells = CellList::new(&obs.window, range, obs.points.clone());
        let d = gm.dim();
        let mut sites = Vec::new();
        let mut infeasible = false;
        let mut y = vec![0.0; d];
        for k in 0..obs.n_pairs() {
            let site = obs.sites.get(k);
            let x = obs.displacements.get(k);
            for a in 0..d {
                y[a] = site[a] + x[a];
            }
            if !border.site_ok(site) || !border.location_ok(&y) {
                continue;
            }
            let own = obs.own_point(k).ok_or_else(|| Error::Data("pair point missing from the observed points".into()))?;
            let mut s_obs = gm.moves.s1(x).map_err(|_| Error::Data(format!("displacement {x:?} is outside the move support")))?;
            let stat = pair_statistic_excluding(&gm.interaction, &y, &cells, Some(own));
            s_obs.extend(stat.counts_f64());
            infeasible |= stat.hardcore_violated;

            let mut patterns: Vec<Vec<u32>> = Vec::new();
            let mut nodes = Vec::new();
            for (q, (node, _)) in quad.iter().enumerate() {
                for a in 0..d {
                    y[a] = site[a] + node[a];
                }
                if !border.location_ok(&y) {
                    continue;
                }
                let st = pair_statistic_excluding(&gm.interaction, &y, &cells, Some(own));
                if st.hardcore_violated {
                    continue;
                }
                let pid = match patterns.iter().position(|p| *p == st.counts) {
                    Some(j) => j,
                    None => {
                        patterns.push(st.counts);
                        patterns.len() - 1
                    }
                };
                nodes.push((q as u32, pid as u32));
            }
            if nodes.is_empty() {
                return Err(Error::DegenerateSite { site: site.to_vec() });
            }
            sites.push(SiteCache {
                site: site.to_vec(),
                x_obs: x.to_vec(),
                s_obs,
                obs_hard: stat.hardcore_violated,
                patterns: patterns.into_iter().map(|p| p.into_iter().map(f64::from).collect()).collect(),
                nodes,
            });
        }
        if sites.is_empty() {
            return Err(Error::InsufficientData { usable: 0 });
        }
        Ok(EstimationContext {
            gm: gm.clone(),
            resolved,
            quad,
            node_s1,
            sites,
            volume: obs.window.volume(),
            infeasible,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn resolved(&self) -> &ResolvedConfig {
        &self.resolved
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    /// True when some usable observed point breaches the hard core.
    pub fn infeasible(&self) -> bool {
        self.infeasible
    }

    fn check_theta(&self, theta: &ThetaVector) -> Result<()> {
        if theta.theta1.len() != self.gm.p1() || theta.theta2.len() != self.gm.p2() {
            return Err(Error::Dimension { expected: self.gm.p(), got: theta.len() });
        }
        if theta.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        self.gm.moves.with_theta1(&theta.theta1)?;
        Ok(())
    }

    /// `w_q exp(-theta1 . S1(x_q))` at every node; the constant `c(theta1)`
    /// cancels in `Lambda_n`.
    fn node_weights(&self, theta: &ThetaVector) -> Vec<f64> {
        let p1 = self.gm.p1();
        self.quad
            .weights()
            .iter()
            .enumerate()
            .map(|(q, w)| {
                let e: f64 = (0..p1).map(|a| theta.theta1[a] * self.node_s1[q * p1 + a]).sum();
                w * (-e).exp()
            })
            .collect()
    }

    /// Pattern factors `exp(-(theta2 . c_p - shift))` and the shift.
    fn pattern_factors(site: &SiteCache, theta2: &[f64]) -> (Vec<f64>, f64) {
        let energies: Vec<f64> = site
            .patterns
            .iter()
            .map(|c| c.iter().zip(theta2).map(|(n, t)| if *n == 0.0 { 0.0 } else { n * t }).sum())
            .collect();
        let shift = energies.iter().copied().fold(f64::INFINITY, f64::min);
        (energies.iter().map(|e| (-(e - shift)).exp()).collect(), shift)
    }

    /// Pseudo-likelihood, its gradient, the score DLR values and optionally
    /// the Hessian, all from one pass.
    pub fn moments(&self, theta: &ThetaVector, hessian: bool) -> Result<Moments> {
        self.check_theta(theta)?;
        let p1 = self.gm.p1();
        let p2 = self.gm.p2();
        let p = p1 + p2;
        let flat = theta.to_flat();
        let gw = self.node_weights(theta);

        let mut lpl = 0.0;
        let mut observed = vec![0.0; p];
        let mut compensator = vec![0.0; p];
        let mut hess = hessian.then(|| DMatrix::<f64>::zeros(p, p));
        let mut acc0 = Vec::new();
        let mut acc1 = Vec::new();
        let mut acc2 = Vec::new();
        let mut mean = vec![0.0; p];
        let mut second = vec![0.0; p * p];
        for site in &self.sites {
            let np = site.patterns.len();
            acc0.clear();
            acc0.resize(np, 0.0);
            acc1.clear();
            acc1.resize(np * p1, 0.0);
            if hessian {
                acc2.clear();
                acc2.resize(np * p1 * p1, 0.0);
            }
            for &(q, pid) in &site.nodes {
                let (q, pid) = (q as usize, pid as usize);
                let g = gw[q];
                acc0[pid] += g;
                for a in 0..p1 {
                    let s = self.node_s1[q * p1 + a];
                    acc1[pid * p1 + a] += g * s;
                    if hessian {
                        for b in 0..p1 {
                            acc2[(pid * p1 + a) * p1 + b] += g * s * self.node_s1[q * p1 + b];
                        }
                    }
                }
            }
            let (fac, shift) = Self::pattern_factors(site, &theta.theta2);
            let z: f64 = fac.iter().zip(&acc0).map(|(f, a)| f * a).sum();
            if !(z > 0.0) || !z.is_finite() {
                return Err(Error::DegenerateSite { site: site.site.clone() });
            }
            mean.iter_mut().for_each(|v| *v = 0.0);
            for (j, c) in site.patterns.iter().enumerate() {
                let f = fac[j] / z;
                for a in 0..p1 {
                    mean[a] += f * acc1[j * p1 + a];
                }
                for m in 0..p2 {
                    mean[p1 + m] += f * acc0[j] * c[m];
                }
            }
            if let Some(h) = hess.as_mut() {
                second.iter_mut().for_each(|v| *v = 0.0);
                for (j, c) in site.patterns.iter().enumerate() {
                    let f = fac[j] / z;
                    for a in 0..p1 {
                        for b in 0..p1 {
                            second[a * p + b] += f * acc2[(j * p1 + a) * p1 + b];
                        }
                        for m in 0..p2 {
                            let v = f * acc1[j * p1 + a] * c[m];
                            second[a * p + p1 + m] += v;
                            second[(p1 + m) * p + a] += v;
                        }
                    }
                    for m in 0..p2 {
                        for n in 0..p2 {
                            second[(p1 + m) * p + p1 + n] += f * acc0[j] * c[m] * c[n];
                        }
                    }
                }
                for a in 0..p {
                    for b in 0..p {
                        h[(a, b)] -= second[a * p + b] - mean[a] * mean[b];
                    }
                }
            }
            let log_z = z.ln() - shift;
            let dot: f64 = flat.iter().zip(&site.s_obs).map(|(t, s)| if *s == 0.0 { 0.0 } else { t * s }).sum();
            lpl += if site.obs_hard { f64::NEG_INFINITY } else { -dot - log_z };
            for j in 0..p {
                observed[j] += site.s_obs[j];
                compensator[j] += mean[j];
            }
        }
        let dlr_score: Vec<f64> = observed.iter().zip(&compensator).map(|(a, b)| a - b).collect();
        Ok(Moments {
            lpl,
            gradient: dlr_score.iter().map(|v| -v).collect(),
            dlr_score,
            observed,
            compensator,
            hessian: hess,
        })
    }

    /// Observed and compensator parts `(A, B)` of `DLR_n(f) = A - B`.
    pub fn dlr_parts(&self, theta: &ThetaVector, f: &dyn TestFn) -> Result<(f64, f64)> {
        self.check_theta(theta)?;
        let p1 = self.gm.p1();
        let d = self.gm.dim();
        let gw = self.node_weights(theta);
        let mut stat = vec![0.0; self.gm.p()];
        let (mut a_sum, mut b_sum) = (0.0, 0.0);
        for site in &self.sites {
            let (fac, _) = Self::pattern_factors(site, &theta.theta2);
            let (mut num, mut den) = (0.0, 0.0);
            for &(q, pid) in &site.nodes {
                let (q, pid) = (q as usize, pid as usize);
                let w = gw[q] * fac[pid];
                stat[..p1].copy_from_slice(&self.node_s1[q * p1..(q + 1) * p1]);
                stat[p1..].copy_from_slice(&site.patterns[pid]);
                num += w * f.eval(&site.site, &self.quad.node(q)[..d], &stat);
                den += w;
            }
            if !(den > 0.0) || !den.is_finite() {
                return Err(Error::DegenerateSite { site: site.site.clone() });
            }
            a_sum += f.eval(&site.site, &site.x_obs, &site.s_obs);
            b_sum += num / den;
        }
        Ok((a_sum, b_sum))
    }

    pub fn dlr(&self, theta: &ThetaVector, f: &dyn TestFn) -> Result<f64> {
        let (a, b) = self.dlr_parts(theta, f)?;
        Ok(a - b)
    }

    /// `DLR_n` of every function of the resolved bank.
    pub fn dlr_bank(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        let bank = &self.resolved.bank;
        let fast = bank.iter().all(|f| matches!(f, TestFunction::Statistic { .. } | TestFunction::Constant));
        if fast {
            let m = self.moments(theta, false)?;
            return Ok(bank
                .iter()
                .map(|f| match f {
                    TestFunction::Statistic { index } => m.dlr_score[*index],
                    _ => 0.0,
                })
                .collect());
        }
        bank.iter().map(|f| self.dlr(theta, f)).collect()
    }

    pub fn tf_criterion(&self, theta: &ThetaVector) -> Result<f64> {
        Ok(self.dlr_bank(theta)?.iter().map(|v| v * v).sum())
    }

    /// Minimizes the criterion (simplex) or maximizes the pseudo-likelihood
    /// (gradient) within the resolved bounds.
    pub fn fit(&self, cfg: &EstimatorConfig) -> Result<FitResult> {
        let p = self.gm.p();
        let p1 = self.gm.p1();
        let bank = &self.resolved.bank;
        for f in bank {
            f.check(p, self.gm.dim())?;
        }
        if bank.len() < p {
            return Err(Error::Config(format!("{} test functions for {p} parameters", bank.len())));
        }
        if self.infeasible {
            return Err(Error::Infeasible);
        }
        let bounds = &self.resolved.bounds;
        let x0 = self.resolved.init.to_flat();
        let outcome = match cfg.optimizer {
            OptimizerKind::Simplex => nelder_mead(
                |x| self.tf_criterion(&ThetaVector::from_flat(p1, x)).unwrap_or(f64::INFINITY),
                &x0,
                bounds,
                cfg.ftol,
                cfg.max_iter,
            ),
            OptimizerKind::Gradient => {
                if bank.iter().any(|f| !matches!(f, TestFunction::Statistic { .. })) {
                    return Err(Error::Config("the gradient optimizer needs the score bank".into()));
                }
                newton_ascent(
                    |x| -> Option<Curvature> {
                        let m = self.moments(&ThetaVector::from_flat(p1, x), true).ok()?;
                        Some((m.lpl, m.gradient, m.hessian.unwrap()))
                    },
                    &x0,
                    bounds,
                    cfg.ftol,
                    cfg.max_iter,
                )
            }
        };
        let theta_hat = ThetaVector::from_flat(p1, &outcome.x);
        let dlr = self.dlr_bank(&theta_hat)?;
        let criterion: f64 = dlr.iter().map(|v| v * v).sum();
        if !criterion.is_finite() {
            return Err(Error::Numerical("criterion is not finite at the estimate".into()));
        }
        Ok(FitResult {
            estimator: "takacs_fiksel".into(),
            at_bound: bounds.touches(&outcome.x, 1e-6),
            theta_hat,
            criterion,
            converged: outcome.converged,
            n_sites_used: self.n_sites(),
            residuals: dlr.iter().map(|v| v / self.volume).collect(),
            iterations: outcome.iterations,
            evaluations: outcome.evaluations,
            config: cfg.clone(),
            resolved: Some(self.resolved.clone()),
        })
    }
}
