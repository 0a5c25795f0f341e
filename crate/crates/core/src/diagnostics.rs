//! Number-variance curves across replicates and DLR residual reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::unit_ball_volume;
use crate::inference::{EstimationContext, EstimatorConfig, Observation, TestFn, TestFunction};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::sampler::PointPattern;

/// Fewest replicates accepted by [`variance_curve`].
pub const MIN_REPLICATES: usize = 10;

/// `Var[N(B(0, r))] / |B(0, r)|` estimated across replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub n_replicates: usize,
    pub standard_errors: Vec<f64>,
}

impl VarianceCurve {
    /// Columns `r,ratio,se`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,ratio,se\n");
        for ((r, v), se) in self.radii.iter().zip(&self.ratios).zip(&self.standard_errors) {
            writeln!(out, "{r},{v},{se}").unwrap();
        }
        out
    }
}

pub fn variance_curve(patterns: &[PointPattern], radii: &[f64]) -> Result<VarianceCurve> {
    let k = patterns.len();
    if k < MIN_REPLICATES {
        return Err(Error::Config(format!("variance curve needs at least {MIN_REPLICATES} replicates, got {k}")));
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("radii must be positive and increasing".into()));
    }
    let d = patterns[0].window.dim();
    let r_max = *radii.last().unwrap();
    let origin = vec![0.0; d];
    for p in patterns {
        if p.window.dim() != d {
            return Err(Error::Dimension { expected: d, got: p.window.dim() });
        }
        if !p.window.contains_ball(&origin, r_max) {
            return Err(Error::BallOutsideWindow { radius: r_max });
        }
    }
    let counts: Vec<Vec<f64>> = patterns
        .par_iter()
        .map(|p| {
            let mut norms: Vec<f64> = p.points.iter().map(|y| y.iter().map(|c| c * c).sum::<f64>().sqrt()).collect();
            norms.sort_by(|a, b| a.total_cmp(b));
            radii.iter().map(|r| norms.partition_point(|v| v <= r) as f64).collect()
        })
        .collect();
    let n = k as f64;
    let mut ratios = Vec::with_capacity(radii.len());
    let mut ses = Vec::with_capacity(radii.len());
    for (j, r) in radii.iter().enumerate() {
        let mean = counts.iter().map(|c| c[j]).sum::<f64>() / n;
        let var = counts.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ratio = var / (unit_ball_volume(d) * r.powi(d as i32));
        // Var(s^2) = 2 sigma^4 / (K - 1) for normal counts.
        ratios.push(ratio);
        ses.push(ratio * (2.0 / (n - 1.0)).sqrt());
    }
    Ok(VarianceCurve { radii: radii.to_vec(), ratios, n_replicates: k, standard_errors: ses })
}

/// `(|W|^-1 A, |W|^-1 B)`: the observed term and the compensator of the
/// summed DLR equation.
pub fn ergodic_averages(
    obs: &Observation,
    gm: &GibbsModel,
    theta: &ThetaVector,
    f: &dyn TestFn,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64)> {
    let ctx = EstimationContext::new(obs, gm, cfg)?;
    let (a, b) = ctx.dlr_parts(theta, f)?;
    Ok((a / ctx.volume(), b / ctx.volume()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub function: TestFunction,
    /// `|W|^-1 DLR_n(f)`.
    pub residual: f64,
    pub a_avg: f64,
    pub b_avg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub theta: ThetaVector,
    pub n_sites_used: usize,
    pub entries: Vec<ResidualEntry>,
}

impl ResidualReport {
    /// Columns `function,residual,a_avg,b_avg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("function,residual,a_avg,b_avg\n");
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", function_label(&e.function), e.residual, e.a_avg, e.b_avg).unwrap();
        }
        out
    }
}

pub fn function_label(f: &TestFunction) -> String {
    match f {
        TestFunction::Score => "score".into(),
        TestFunction::Constant => "constant".into(),
        TestFunction::Statistic { index } => format!("statistic_{index}"),
        TestFunction::StatisticProduct { a, b } => format!("statistic_{a}_x_{b}"),
        TestFunction::Displacement { axis } => format!("displacement_{axis}"),
    }
}

/// Scaled residuals of every bank member at `theta`.
pub fn residual_report(
    obs: &Observation,
    gm: &GibbsModel,
    theta: &ThetaVector,
    bank: &[TestFunction],
    cfg: &EstimatorConfig,
) -> Result<ResidualReport> {
    let ctx = EstimationContext::new(obs, gm, cfg)?;
    let vol = ctx.volume();
    let entries = TestFunction::expand(bank, gm.p())
        .into_par_iter()
        .map(|f| {
            let (a, b) = ctx.dlr_parts(theta, &f)?;
            let (a_avg, b_avg) = (a / vol, b / vol);
            Ok(ResidualEntry { function: f, residual: a_avg - b_avg, a_avg, b_avg })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport { theta: theta.clone(), n_sites_used: ctx.n_sites(), entries })
}
