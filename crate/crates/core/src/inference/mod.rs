//! Border-corrected estimating equations and the estimators built on them.
//!
//! Framework-1 data (site, displacement pairs) feed the Takacs-Fiksel
//! criterion and the pseudo-likelihood; Framework-2 data (bare points)
//! feed the variational estimator.

mod context;
pub mod optimize;
mod variational;

use serde::{Deserialize, Serialize};

pub use context::{EstimationContext, Moments};
pub use optimize::Bounds;
pub use variational::{default_psi, fit_variational, variational_system, BoxBump, PeriodicSine, Psi, VariationalSystem};

use crate::error::{Error, Result};
use crate::geometry::{GlobalShift, Window};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::moves::MoveModel;
use crate::points::PointSet;
use crate::sampler::{clip_points, clip_sites, LatticeConfiguration, PointPattern, SitePattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    F1,
    F2,
}

/// An observed realization in a window.
///
/// `points` holds every observed perturbed point; for Framework 1 it
/// always contains each `site + displacement`, and may contain more points
/// whose sites fall outside the window.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub framework: Framework,
    pub sites: PointSet,
    pub displacements: PointSet,
    pub points: PointSet,
    pub shift: GlobalShift,
    pub window: Window,
}

impl Observation {
    /// Framework-1 observation; `extra` adds bare points seen in the same
    /// window (duplicates of the pairs' points are merged).
    pub fn framework1(pairs: &SitePattern, extra: Option<&PointPattern>, shift: GlobalShift) -> Result<Self> {
        let d = pairs.window.dim();
        let mut points = match extra {
            Some(p) => p.points.clone(),
            None => PointSet::new(d),
        };
        for (s, x) in pairs.sites.iter().zip(pairs.displacements.iter()) {
            let y: Vec<f64> = s.iter().zip(x).map(|(a, b)| a + b).collect();
            if find_point(&points, &y).is_none() {
                points.push(&y);
            }
        }
        let obs = Observation {
            framework: Framework::F1,
            sites: pairs.sites.clone(),
            displacements: pairs.displacements.clone(),
            points,
            shift,
            window: pairs.window.clone(),
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn framework2(pattern: &PointPattern, shift: GlobalShift) -> Result<Self> {
        let d = pattern.window.dim();
        let obs = Observation {
            framework: Framework::F2,
            sites: PointSet::new(d),
            displacements: PointSet::new(d),
            points: pattern.points.clone(),
            shift,
            window: pattern.window.clone(),
        };
        obs.validate()?;
        Ok(obs)
    }

    /// Clips a simulated configuration to `w` under either framework.
    pub fn from_configuration(cfg: &LatticeConfiguration, w: &Window, framework: Framework) -> Result<Self> {
        let f2 = clip_points(cfg, w);
        match framework {
            Framework::F1 => Observation::framework1(&clip_sites(cfg, w), Some(&f2), cfg.shift.clone()),
            Framework::F2 => Observation::framework2(&f2, cfg.shift.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn n_pairs(&self) -> usize {
        self.sites.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for set in [&self.sites, &self.displacements, &self.points] {
            if !set.is_empty() && set.dim() != d {
                return Err(Error::Dimension { expected: d, got: set.dim() });
            }
        }
        if self.sites.len() != self.displacements.len() {
            return Err(Error::Data("sites and displacements differ in length".into()));
        }
        for (s, x) in self.sites.iter().zip(self.displacements.iter()) {
            let y: Vec<f64> = s.iter().zip(x).map(|(a, b)| a + b).collect();
            if !self.window.contains(s) || !self.window.contains(&y) {
                return Err(Error::Domain { point: y });
            }
        }
        if let Some(p) = self.points.iter().find(|p| !self.window.contains(p)) {
            return Err(Error::Domain { point: p.to_vec() });
        }
        Ok(())
    }

    /// Index of the observed point produced by pair `k`.
    pub(crate) fn own_point(&self, k: usize) -> Option<usize> {
        let y: Vec<f64> = self.sites.get(k).iter().zip(self.displacements.get(k)).map(|(a, b)| a + b).collect();
        find_point(&self.points, &y)
    }
}

fn find_point(points: &PointSet, y: &[f64]) -> Option<usize> {
    points
        .iter()
        .position(|p| p.iter().zip(y).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs())))
}

/// Test functions `f(i, x, S)` of the site, the move and the joint statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TestFunction {
    /// The score bank: one function per component of `S`.
    Score,
    Constant,
    Statistic { index: usize },
    StatisticProduct { a: usize, b: usize },
    Displacement { axis: usize },
}

impl TestFunction {
    /// Expands `Score` into its `p` components.
    pub fn expand(bank: &[TestFunction], p: usize) -> Vec<TestFunction> {
        let mut out = Vec::new();
        for f in bank {
            match f {
                TestFunction::Score => out.extend((0..p).map(|index| TestFunction::Statistic { index })),
                other => out.push(other.clone()),
            }
        }
        out
    }

    pub fn eval(&self, _site: &[f64], x: &[f64], stat: &[f64]) -> f64 {
        match self {
            TestFunction::Score => panic!("expand the score bank before evaluation"),
            TestFunction::Constant => 1.0,
            TestFunction::Statistic { index } => stat[*index],
            TestFunction::StatisticProduct { a, b } => stat[*a] * stat[*b],
            TestFunction::Displacement { axis } => x[*axis],
        }
    }

    fn check(&self, p: usize, d: usize) -> Result<()> {
        let ok = match self {
            TestFunction::Statistic { index } => *index < p,
            TestFunction::StatisticProduct { a, b } => *a < p && *b < p,
            TestFunction::Displacement { axis } => *axis < d,
            _ => true,
        };
        if ok { Ok(()) } else { Err(Error::Config(format!("test function {self:?} is out of range"))) }
    }
}

/// A user-supplied test function.
pub trait TestFn: Sync {
    fn eval(&self, site: &[f64], x: &[f64], stat: &[f64]) -> f64;
}

impl TestFn for TestFunction {
    fn eval(&self, site: &[f64], x: &[f64], stat: &[f64]) -> f64 {
        TestFunction::eval(self, site, x, stat)
    }
}

impl<F: Fn(&[f64], &[f64], &[f64]) -> f64 + Sync> TestFn for F {
    fn eval(&self, site: &[f64], x: &[f64], stat: &[f64]) -> f64 {
        self(site, x, stat)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Simplex,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Sets `m_n = beta log|W_n|` for unbounded move laws.
    pub beta: f64,
    /// Overrides `m_n`; defaults to the support radius for compact moves.
    pub fixed_m: Option<f64>,
    /// Quadrature nodes per axis; family default when absent.
    pub quad_resolution: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Bounds on the flat vector `(theta1, theta2)`.
    pub theta_bounds: Option<Bounds>,
    pub theta_init: Option<ThetaVector>,
    pub test_functions: Vec<TestFunction>,
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            beta: 1.0,
            fixed_m: None,
            quad_resolution: None,
            optimizer: OptimizerKind::Simplex,
            theta_bounds: None,
            theta_init: None,
            test_functions: vec![TestFunction::Score],
            ftol: 1e-8,
            max_iter: 2000,
        }
    }
}

/// Default half-range of the interaction parameters.
pub const THETA2_BOUNDS: (f64, f64) = (-5.0, 10.0);

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fixed_m.is_none() && !(self.beta > 0.5) {
            return Err(Error::Config(format!("beta must exceed 1/2, got {}", self.beta)));
        }
        if let Some(m) = self.fixed_m {
            if !(m >= 0.0) {
                return Err(Error::Config("fixed_m must be non-negative".into()));
            }
        }
        if let Some(r) = self.quad_resolution {
            if r < 2 {
                return Err(Error::Config("quad_resolution must be at least 2".into()));
            }
        }
        if !(self.ftol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("ftol and max_iter must be positive".into()));
        }
        if self.test_functions.is_empty() {
            return Err(Error::Config("empty test-function bank".into()));
        }
        Ok(())
    }

    /// Border depth `m_n` for a window of volume `volume`.
    pub fn border_depth(&self, moves: &MoveModel, volume: f64) -> f64 {
        if let Some(m) = self.fixed_m {
            return m;
        }
        match moves.support_radius() {
            Some(r) => r,
            None => (self.beta * volume.max(1.0).ln()).max(0.0),
        }
    }

    /// Fills bounds and the starting point from moment estimates of the
    /// move parameter.
    pub fn resolve(&self, obs: &Observation, gm: &GibbsModel) -> Result<ResolvedConfig> {
        self.validate()?;
        let p1 = gm.p1();
        let p2 = gm.p2();
        let pilot = pilot_theta1(obs, &gm.moves)?;
        let bounds = match &self.theta_bounds {
            Some(b) => b.clone(),
            None => {
                let mut lower = Vec::new();
                let mut upper = Vec::new();
                for &t in &pilot {
                    lower.push(t / 2.0);
                    upper.push(t * 2.0);
                }
                lower.extend(std::iter::repeat_n(THETA2_BOUNDS.0, p2));
                upper.extend(std::iter::repeat_n(THETA2_BOUNDS.1, p2));
                Bounds::new(lower, upper)
            }
        };
        if bounds.len() != p1 + p2 || bounds.lower.iter().zip(&bounds.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("theta bounds do not match the model".into()));
        }
        if bounds.lower[..p1].iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("move parameter bounds must be positive".into()));
        }
        let init = match &self.theta_init {
            Some(t) => t.clone(),
            None => ThetaVector::new(pilot.clone(), vec![0.0; p2]),
        };
        let mut init_flat = init.to_flat();
        if init_flat.len() != p1 + p2 {
            return Err(Error::Config("theta_init does not match the model".into()));
        }
        if !bounds.contains(&init_flat) {
            if self.theta_init.is_some() {
                return Err(Error::Config("theta_init lies outside the bounds".into()));
            }
            bounds.clamp(&mut init_flat);
        }
        let m = self.border_depth(&gm.moves, obs.window.volume());
        let resolution = self.quad_resolution.unwrap_or_else(|| gm.moves.default_resolution());
        Ok(ResolvedConfig {
            bounds,
            init: ThetaVector::from_flat(p1, &init_flat),
            m,
            resolution,
            bank: TestFunction::expand(&self.test_functions, p1 + p2),
        })
    }
}

/// Estimator settings after defaults have been filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub bounds: Bounds,
    pub init: ThetaVector,
    pub m: f64,
    pub resolution: usize,
    pub bank: Vec<TestFunction>,
}

/// Moment estimate of the move parameter from the observed displacements;
/// empty for parameter-free families.
pub fn pilot_theta1(obs: &Observation, moves: &MoveModel) -> Result<Vec<f64>> {
    let d = obs.dim() as f64;
    if moves.p1() == 0 {
        return Ok(Vec::new());
    }
    if obs.displacements.is_empty() {
        return Err(Error::InsufficientData { usable: 0 });
    }
    let n = obs.displacements.len() as f64;
    let t = match moves {
        MoveModel::GaussianIsotropic { .. } => {
            let m2: f64 = obs.displacements.iter().map(|x| x.iter().map(|c| c * c).sum::<f64>()).sum::<f64>() / n;
            d / (2.0 * m2)
        }
        MoveModel::ExponentialOrthant { .. } => {
            let m1: f64 = obs.displacements.iter().map(|x| x.iter().sum::<f64>()).sum::<f64>() / n;
            d / m1
        }
        MoveModel::Uniform { .. } => unreachable!(),
    };
    if t.is_finite() && t > 0.0 {
        Ok(vec![t])
    } else {
        Err(Error::Data("displacements do not determine the move parameter".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: String,
    pub theta_hat: ThetaVector,
    pub criterion: f64,
    pub converged: bool,
    pub at_bound: bool,
    pub n_sites_used: usize,
    /// Estimating-equation values at the estimate divided by `|W_n|`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub config: EstimatorConfig,
    pub resolved: Option<ResolvedConfig>,
}

/// `DLR_n(f)` at `theta`.
pub fn dlr_statistic(obs: &Observation, gm: &GibbsModel, theta: &ThetaVector, f: &dyn TestFn, cfg: &EstimatorConfig) -> Result<f64> {
    let ctx = EstimationContext::new(obs, gm, cfg)?;
    ctx.dlr(theta, f)
}

/// Sum of squared `DLR_n` values over the configured bank.
pub fn tf_criterion(obs: &Observation, gm: &GibbsModel, theta: &ThetaVector, cfg: &EstimatorConfig) -> Result<f64> {
    let ctx = EstimationContext::new(obs, gm, cfg)?;
    Ok(ctx.dlr_bank(theta)?.iter().map(|v| v * v).sum())
}

/// Pseudo-likelihood value and gradient; the value is `-inf` and
/// `infeasible` is set when an observed point breaches the hard core.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub infeasible: bool,
}

pub fn lpl_and_gradient(obs: &Observation, gm: &GibbsModel, theta: &ThetaVector, cfg: &EstimatorConfig) -> Result<PseudoLikelihood> {
    let ctx = EstimationContext::new(obs, gm, cfg)?;
    if ctx.infeasible() {
        return Ok(PseudoLikelihood {
            value: f64::NEG_INFINITY,
            gradient: vec![f64::NAN; gm.p()],
            infeasible: true,
        });
    }
    let m = ctx.moments(theta, false)?;
    Ok(PseudoLikelihood {
        value: m.lpl,
        gradient: m.gradient,
        infeasible: false,
    })
}

/// Takacs-Fiksel estimate over the configured bank (the score by default).
pub fn fit_takacs_fiksel(obs: &Observation, family: &GibbsModel, cfg: &EstimatorConfig) -> Result<FitResult> {
    let ctx = EstimationContext::new(obs, family, cfg)?;
    ctx.fit(cfg)
}

#[cfg(test)]
mod tests;
