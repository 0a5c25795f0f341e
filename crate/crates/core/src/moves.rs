//! Move (mark) distributions: densities `exp(-theta1 . S1(x) - c(theta1))`,
//! sampling, and tensor midpoint quadrature over the support.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neglected mass of a truncated unbounded support.
pub const TAIL_MASS: f64 = 1e-8;

/// Target accuracy of `sum w * density` at the default resolution.
pub const EPS_QUAD: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MoveModel {
    /// Uniform on the box `[lower, upper]`; no parameter.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// Density proportional to `exp(-theta1 |x|^2)` on `R^d`.
    GaussianIsotropic { dim: usize, theta1: f64 },
    /// Density proportional to `exp(-theta1 sum x_k)` on the positive orthant.
    ExponentialOrthant { dim: usize, theta1: f64 },
}

impl MoveModel {
    pub fn uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let m = MoveModel::Uniform { lower, upper };
        m.validate()?;
        Ok(m)
    }

    /// Uniform on `[-half, half]^dim`.
    pub fn uniform_cube(dim: usize, half: f64) -> Result<Self> {
        MoveModel::uniform(vec![-half; dim], vec![half; dim])
    }

    pub fn gaussian(dim: usize, theta1: f64) -> Result<Self> {
        let m = MoveModel::GaussianIsotropic { dim, theta1 };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(dim: usize, theta1: f64) -> Result<Self> {
        let m = MoveModel::ExponentialOrthant { dim, theta1 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MoveModel::Uniform { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Config("uniform support bounds must match".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::Config("uniform support must be a nondegenerate box".into()));
                }
            }
            MoveModel::GaussianIsotropic { dim, theta1 } | MoveModel::ExponentialOrthant { dim, theta1 } => {
                if *dim == 0 {
                    return Err(Error::Config("move dimension must be positive".into()));
                }
                if !(*theta1 > 0.0 && theta1.is_finite()) {
                    return Err(Error::Config(format!("theta1 must be positive, got {theta1}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            MoveModel::Uniform { lower, .. } => lower.len(),
            MoveModel::GaussianIsotropic { dim, .. } | MoveModel::ExponentialOrthant { dim, .. } => *dim,
        }
    }

    /// Number of move parameters.
    pub fn p1(&self) -> usize {
        match self {
            MoveModel::Uniform { .. } => 0,
            _ => 1,
        }
    }

    pub fn theta1(&self) -> Vec<f64> {
        match self {
            MoveModel::Uniform { .. } => Vec::new(),
            MoveModel::GaussianIsotropic { theta1, .. } | MoveModel::ExponentialOrthant { theta1, .. } => {
                vec![*theta1]
            }
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            MoveModel::Uniform { .. } => "uniform",
            MoveModel::GaussianIsotropic { .. } => "gaussian_isotropic",
            MoveModel::ExponentialOrthant { .. } => "exponential_orthant",
        }
    }

    /// Same family with a different parameter.
    pub fn with_theta1(&self, theta1: &[f64]) -> Result<Self> {
        if theta1.len() != self.p1() {
            return Err(Error::Dimension {
                expected: self.p1(),
                got: theta1.len(),
            });
        }
        let mut m = self.clone();
        match &mut m {
            MoveModel::Uniform { .. } => {}
            MoveModel::GaussianIsotropic { theta1: t, .. } | MoveModel::ExponentialOrthant { theta1: t, .. } => {
                *t = theta1[0]
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, MoveModel::Uniform { .. })
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            MoveModel::Uniform { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(c, (l, u))| c >= l && c <= u),
            MoveModel::GaussianIsotropic { .. } => x.iter().all(|c| c.is_finite()),
            MoveModel::ExponentialOrthant { .. } => x.iter().all(|&c| c >= 0.0 && c.is_finite()),
        }
    }

    /// Sufficient statistic `S1(x)`.
    pub fn s1(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.in_support(x) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(self.s1_unchecked(x))
    }

    pub(crate) fn s1_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MoveModel::Uniform { .. } => Vec::new(),
            MoveModel::GaussianIsotropic { .. } => vec![x.iter().map(|c| c * c).sum()],
            MoveModel::ExponentialOrthant { .. } => vec![x.iter().sum()],
        }
    }

    /// `c(theta1)`, the log-partition constant making the density integrate to 1.
    pub fn log_normalizer(&self) -> f64 {
        match self {
            MoveModel::Uniform { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| (u - l).ln()).sum()
            }
            MoveModel::GaussianIsotropic { dim, theta1 } => {
                0.5 * *dim as f64 * (std::f64::consts::PI / theta1).ln()
            }
            MoveModel::ExponentialOrthant { dim, theta1 } => -(*dim as f64) * theta1.ln(),
        }
    }

    /// `log lambda1(x)`; `-inf` off the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        let s1 = self.s1_unchecked(x);
        let dot: f64 = self.theta1().iter().zip(&s1).map(|(a, b)| a * b).sum();
        -dot - self.log_normalizer()
    }

    /// Gradient of `S1` at `x`, one `d`-vector per component.
    pub fn grad_s1(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match self {
            MoveModel::Uniform { .. } => Vec::new(),
            MoveModel::GaussianIsotropic { .. } => vec![x.iter().map(|c| 2.0 * c).collect()],
            MoveModel::ExponentialOrthant { dim, .. } => vec![vec![1.0; *dim]],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            MoveModel::Uniform { lower, upper } => {
                for (o, (l, u)) in out.iter_mut().zip(lower.iter().zip(upper)) {
                    *o = l + (u - l) * rng.random::<f64>();
                }
            }
            MoveModel::GaussianIsotropic { theta1, .. } => {
                // exp(-theta1 x^2) has per-coordinate variance 1 / (2 theta1).
                let sd = (0.5 / theta1).sqrt();
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = sd * z;
                }
            }
            MoveModel::ExponentialOrthant { theta1, .. } => {
                let e = Exp::new(*theta1).expect("positive rate");
                for o in out.iter_mut() {
                    *o = e.sample(rng);
                }
            }
        }
    }

    /// Starting displacement of a chain: the mode for Uniform and Gaussian
    /// (taken as the box centre for Uniform), the mean for Exponential.
    pub fn initial_move(&self) -> Vec<f64> {
        match self {
            MoveModel::Uniform { lower, upper } => {
                let c: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
                if lower.iter().zip(upper).all(|(l, u)| *l <= 0.0 && *u >= 0.0) {
                    vec![0.0; c.len()]
                } else {
                    c
                }
            }
            MoveModel::GaussianIsotropic { dim, .. } => vec![0.0; *dim],
            MoveModel::ExponentialOrthant { dim, theta1 } => vec![1.0 / theta1; *dim],
        }
    }

    /// Sup-norm radius of the support for compact families.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            MoveModel::Uniform { lower, upper } => Some(
                lower
                    .iter()
                    .chain(upper)
                    .map(|c| c.abs())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        }
    }

    /// Half-width `rho` of the truncation box so that the mass outside is
    /// below [`TAIL_MASS`] for every parameter at least `min_theta1`.
    pub fn tail_radius(&self, min_theta1: f64) -> f64 {
        match self {
            MoveModel::Uniform { .. } => self.support_radius().unwrap(),
            MoveModel::GaussianIsotropic { dim, .. } => {
                // Mass outside [-rho, rho]^d <= d * erfc(rho sqrt(theta)).
                let target = TAIL_MASS / *dim as f64;
                let (mut lo, mut hi) = (0.0, 40.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if libm::erfc(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi / min_theta1.sqrt()
            }
            MoveModel::ExponentialOrthant { dim, .. } => {
                (*dim as f64 / TAIL_MASS).ln() / min_theta1
            }
        }
    }

    /// Default per-axis resolution for which `sum w * density` is within
    /// [`EPS_QUAD`] of one.
    pub fn default_resolution(&self) -> usize {
        match self {
            // Midpoint error on a one-sided exponential is h^2/24 per axis,
            // with h measured in units of 1/theta1.
            MoveModel::ExponentialOrthant { dim: 1, .. } => 400,
            MoveModel::ExponentialOrthant { dim, .. } => {
                let span = (*dim as f64 / TAIL_MASS).ln();
                (span * (*dim as f64 / (12.0 * EPS_QUAD)).sqrt()).ceil() as usize
            }
            _ => 60,
        }
    }

    pub fn quadrature(&self, resolution: usize) -> QuadratureRule {
        self.quadrature_with(resolution, &QuadratureOptions::default())
    }

    pub fn quadrature_with(&self, resolution: usize, opts: &QuadratureOptions) -> QuadratureRule {
        assert!(resolution >= 2, "quadrature resolution must be at least 2");
        let d = self.dim();
        let (lower, upper, radius) = match self {
            MoveModel::Uniform { lower, upper } => {
                (lower.clone(), upper.clone(), self.support_radius().unwrap())
            }
            MoveModel::GaussianIsotropic { theta1, .. } => {
                let t = opts.min_theta1.unwrap_or(*theta1).min(*theta1);
                let rho = self.tail_radius(t).max(opts.m_hint.unwrap_or(0.0));
                (vec![-rho; d], vec![rho; d], rho)
            }
            MoveModel::ExponentialOrthant { theta1, .. } => {
                let t = opts.min_theta1.unwrap_or(*theta1).min(*theta1);
                let rho = self.tail_radius(t).max(opts.m_hint.unwrap_or(0.0));
                (vec![0.0; d], vec![rho; d], rho)
            }
        };
        QuadratureRule::tensor_midpoint(&lower, &upper, resolution, radius)
    }
}

/// Controls the truncation box of unbounded supports.
#[derive(Clone, Debug, Default)]
pub struct QuadratureOptions {
    /// Smallest move parameter the rule must cover (wider tails).
    pub min_theta1: Option<f64>,
    /// Lower bound on the truncation radius.
    pub m_hint: Option<f64>,
}

/// Tensor-product midpoint rule on a box.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Half side lengths of one cell.
    half_steps: Vec<f64>,
    pub truncation_radius: f64,
}

/// Subdivision levels of a cell straddling a jump of the integrand.
pub const REFINE_DEPTH: u32 = 6;

/// Cells whose largest value times volume is below this fraction of the
/// coarse integral are never subdivided.
const REFINE_CUTOFF: f64 = 1e-10;

impl QuadratureRule {
    pub fn tensor_midpoint(lower: &[f64], upper: &[f64], resolution: usize, radius: f64) -> Self {
        let dim = lower.len();
        let steps: Vec<f64> = lower
            .iter()
            .zip(upper)
            .map(|(l, u)| (u - l) / resolution as f64)
            .collect();
        let cell: f64 = steps.iter().product();
        let count = resolution.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            for k in 0..dim {
                nodes.push(lower[k] + (idx[k] as f64 + 0.5) * steps[k]);
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < resolution {
                    break;
                }
                idx[k] = 0;
            }
        }
        QuadratureRule {
            dim,
            nodes,
            weights: vec![cell; count],
            half_steps: steps.iter().map(|h| 0.5 * h).collect(),
            truncation_radius: radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.nodes.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// `sum_k w_k exp(log_f(node_k))`.
    pub fn integrate_log<F: FnMut(&[f64]) -> f64>(&self, mut log_f: F) -> f64 {
        self.iter()
            .map(|(x, w)| {
                let l = log_f(x);
                if l == f64::NEG_INFINITY { 0.0 } else { w * l.exp() }
            })
            .sum()
    }

    /// Like [`integrate_log`](Self::integrate_log) for integrands that are
    /// smooth except across the level sets of a piecewise-constant `key`.
    /// `eval` returns `(log f, key)`.
    ///
    /// A cell whose corners and centre share one key is integrated by the
    /// centre-and-corners rule (weight 2/3 on the centre, the rest spread
    /// over the corners), exact for cubics. Any other cell is split in two
    /// along every axis, down to `depth` levels, and the cut cells left at
    /// the bottom take the midpoint value.
    pub fn integrate_log_adaptive<K, F>(&self, mut eval: F, depth: u32) -> f64
    where
        K: PartialEq,
        F: FnMut(&[f64]) -> (f64, K),
    {
        let d = self.dim;
        let centre: Vec<(f64, K)> = self.nodes.chunks_exact(d).map(&mut eval).collect();
        let coarse: f64 = centre.iter().zip(&self.weights).map(|((l, _), w)| w * exp_or_zero(*l)).sum();
        let mut total = 0.0;
        for (q, (x, w)) in self.iter().enumerate() {
            let (lc, kc) = &centre[q];
            let fc = exp_or_zero(*lc);
            let (corner_sum, peak, uniform) = self.corners(x, &self.half_steps, kc, &mut eval);
            total += if uniform {
                w * cubic_rule(fc, corner_sum, d)
            } else if depth == 0 || w * peak.max(fc) <= REFINE_CUTOFF * coarse {
                w * fc
            } else {
                self.split(x, &self.half_steps, w, depth, &mut eval)
            };
        }
        total
    }

    /// Sum and maximum of `f` over the corners of a cell, and whether every
    /// corner carries `key`.
    fn corners<K: PartialEq, F: FnMut(&[f64]) -> (f64, K)>(
        &self,
        centre: &[f64],
        half: &[f64],
        key: &K,
        eval: &mut F,
    ) -> (f64, f64, bool) {
        let d = self.dim;
        let mut corner = vec![0.0; d];
        let (mut sum, mut peak, mut uniform) = (0.0, 0.0f64, true);
        for mask in 0..1usize << d {
            for a in 0..d {
                corner[a] = if mask >> a & 1 == 1 { centre[a] + half[a] } else { centre[a] - half[a] };
            }
            let (l, k) = eval(&corner);
            let f = exp_or_zero(l);
            sum += f;
            peak = peak.max(f);
            uniform &= k == *key;
        }
        (sum, peak, uniform)
    }

    fn split<K: PartialEq, F: FnMut(&[f64]) -> (f64, K)>(
        &self,
        centre: &[f64],
        half: &[f64],
        volume: f64,
        depth: u32,
        eval: &mut F,
    ) -> f64 {
        let d = self.dim;
        let quarter: Vec<f64> = half.iter().map(|h| 0.5 * h).collect();
        let child_volume = volume / (1usize << d) as f64;
        let mut child = vec![0.0; d];
        let mut sum = 0.0;
        for mask in 0..1usize << d {
            for a in 0..d {
                child[a] = if mask >> a & 1 == 1 { centre[a] + quarter[a] } else { centre[a] - quarter[a] };
            }
            let (lc, kc) = eval(&child);
            let fc = exp_or_zero(lc);
            let (corner_sum, _, uniform) = self.corners(&child, &quarter, &kc, eval);
            sum += if uniform {
                child_volume * cubic_rule(fc, corner_sum, d)
            } else if depth <= 1 {
                child_volume * fc
            } else {
                self.split(&child, &quarter, child_volume, depth - 1, eval)
            };
        }
        sum
    }
}

fn exp_or_zero(l: f64) -> f64 {
    if l == f64::NEG_INFINITY { 0.0 } else { l.exp() }
}

/// Mean of `f` over a cell from its centre value and corner sum; exact for
/// polynomials of degree three.
fn cubic_rule(centre: f64, corner_sum: f64, d: usize) -> f64 {
    (2.0 * centre + corner_sum / (1usize << d) as f64) / 3.0
}
