//! Configuration-driven replicate studies: simulate a grid of parameter
//! cells, fit every replicate on every observation window and tabulate
//! mean, standard deviation and RMSE.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LatticeSpec, Window};
use crate::inference::{fit_takacs_fiksel, fit_variational, EstimatorConfig, FitResult, Framework, Observation};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::interactions::InteractionModel;
use crate::moves::MoveModel;
use crate::sampler::{child_seed, simulate, ShiftMode, SimulationOutput, SimulationPlan, DEFAULT_BURN_IN};

pub const SCHEMA: &str = "gibbslat/1";

/// Half-width of the default simulation window `[-30, 30]^d`.
pub const DEFAULT_SIM_HALF: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MoveFamily {
    /// Uniform on `[-half, half]^d`.
    Uniform { half: f64 },
    Gaussian,
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub dim: usize,
    pub moves: MoveFamily,
    #[serde(default)]
    pub hardcore_r: f64,
    /// Interaction ranges `R`; one table block per value.
    pub ranges: Vec<f64>,
    /// Lattice basis; the unit cubic lattice when absent.
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimWindowRule {
    /// `[-half, half]^d`.
    Fixed { half: f64 },
    /// Largest observation window plus the required margin and `extra`.
    Margin {
        #[serde(default)]
        extra: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationBlock {
    pub burn_in: usize,
    pub sweeps: usize,
    pub window: SimWindowRule,
    pub shift: ShiftMode,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        SimulationBlock {
            burn_in: DEFAULT_BURN_IN,
            sweeps: 1,
            window: SimWindowRule::Fixed { half: DEFAULT_SIM_HALF },
            shift: ShiftMode::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Takacs-Fiksel on site data, the variational estimator on bare points.
    Auto,
    TakacsFiksel,
    Variational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsBlock {
    pub radii: Vec<f64>,
    pub bank: Vec<crate::inference::TestFunction>,
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        DiagnosticsBlock {
            radii: vec![1.0, 2.0, 3.0, 5.0, 8.0, 12.0],
            bank: vec![crate::inference::TestFunction::Score],
        }
    }
}

fn default_method() -> Method {
    Method::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub model: ModelBlock,
    /// True parameters; one table block per entry.
    pub theta_true: Vec<ThetaVector>,
    /// Observation half-widths `l` of `[-l, l]^d`.
    pub windows: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub output: Option<String>,
}

/// One `(theta, R)` combination of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub theta: ThetaVector,
    pub range: f64,
    pub model: GibbsModel,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!("schema: expected {SCHEMA:?}, got {:?}", self.schema)));
        }
        if self.model.dim == 0 {
            return Err(Error::Config("model.dim must be positive".into()));
        }
        if self.model.ranges.is_empty() {
            return Err(Error::Config("model.ranges must not be empty".into()));
        }
        if self.theta_true.is_empty() {
            return Err(Error::Config("theta_true must not be empty".into()));
        }
        if self.windows.is_empty() || self.windows.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("windows must be a non-empty list of positive half-widths".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.simulation.sweeps == 0 {
            return Err(Error::Config("simulation.sweeps must be positive".into()));
        }
        self.estimator.validate().map_err(|e| Error::Config(format!("estimator: {e}")))?;
        let cells = self.cells()?;
        for cell in &cells {
            let plan = self.plan(cell, self.max_window())?;
            plan.validate().map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("simulation.window: {m}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn max_window(&self) -> f64 {
        self.windows.iter().copied().fold(0.0, f64::max)
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.model.lattice.clone().unwrap_or_else(|| LatticeSpec::cubic(self.model.dim))
    }

    /// Model family with nominal parameters `theta`.
    pub fn family(&self, theta: &ThetaVector, range: f64) -> Result<GibbsModel> {
        let d = self.model.dim;
        let moves = match &self.model.moves {
            MoveFamily::Uniform { half } => MoveModel::uniform_cube(d, *half)?,
            MoveFamily::Gaussian => MoveModel::gaussian(d, *theta.theta1.first().unwrap_or(&1.0))?,
            MoveFamily::Exponential => MoveModel::exponential(d, *theta.theta1.first().unwrap_or(&1.0))?,
        };
        let theta2 = *theta.theta2.first().unwrap_or(&0.0);
        let interaction = InteractionModel::strauss(self.model.hardcore_r, range, theta2)?;
        GibbsModel::new(moves, interaction, self.lattice())
    }

    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        for theta in &self.theta_true {
            for &range in &self.model.ranges {
                let model = self.family(theta, range)?;
                if theta.theta1.len() != model.p1() || theta.theta2.len() != model.p2() {
                    return Err(Error::Config(format!(
                        "theta_true: expected {} move and {} interaction parameters",
                        model.p1(),
                        model.p2()
                    )));
                }
                model.with_theta(theta).map_err(|e| Error::Config(format!("theta_true: {e}")))?;
                out.push(Cell { theta: theta.clone(), range, model });
            }
        }
        Ok(out)
    }

    /// Simulation plan of a cell observed on `[-ell, ell]^d`.
    pub fn plan(&self, cell: &Cell, ell: f64) -> Result<SimulationPlan> {
        let d = self.model.dim;
        let mut plan = SimulationPlan {
            model: cell.model.clone(),
            theta: cell.theta.clone(),
            sim_window: Window::cube(d, ell),
            obs_window: Window::cube(d, ell),
            sweeps: self.simulation.sweeps,
            burn_in: self.simulation.burn_in,
            seed: self.seed,
            shift_mode: self.simulation.shift.clone(),
        };
        plan.sim_window = match &self.simulation.window {
            SimWindowRule::Fixed { half } => Window::cube(d, *half),
            SimWindowRule::Margin { extra } => {
                Window::cube(d, self.max_window()).dilate(plan.required_margin()? + extra.max(0.0))
            }
        };
        Ok(plan)
    }

    pub fn method_for(&self, framework: Framework) -> Method {
        match (self.method, framework) {
            (Method::Auto, Framework::F1) => Method::TakacsFiksel,
            (Method::Auto, Framework::F2) => Method::Variational,
            (m, _) => m,
        }
    }

    pub fn framework(&self) -> Framework {
        match self.method {
            Method::Variational => Framework::F2,
            _ => Framework::F1,
        }
    }
}

/// Fits `obs` by the configured method; a Takacs-Fiksel fit needs site data.
pub fn estimate(cfg: &ExperimentConfig, family: &GibbsModel, obs: &Observation) -> Result<FitResult> {
    match cfg.method_for(obs.framework) {
        Method::Variational => fit_variational(obs, family, &cfg.estimator, None),
        _ => fit_takacs_fiksel(obs, family, &cfg.estimator),
    }
}

/// Unstable fit: not converged, stopped on the box, or off by more than
/// `max(|theta*_j|, 1)` in some component.
pub fn divergence_flag(fit: &FitResult, truth: &ThetaVector) -> bool {
    !fit.converged
        || fit.at_bound
        || fit
            .theta_hat
            .to_flat()
            .iter()
            .zip(truth.to_flat())
            .any(|(e, t)| !e.is_finite() || (e - t).abs() > t.abs().max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub truth: f64,
    pub mean: f64,
    /// Sample standard deviation (divisor `K - 1`, zero when `K = 1`).
    pub sd: f64,
    pub rmse: f64,
}

impl ParamStats {
    pub fn from_estimates(values: &[f64], truth: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let rmse = (values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / k).sqrt();
        Some(ParamStats { truth, mean, sd, rmse })
    }

    /// `|RMSE^2 - (bias^2 + sd^2 (K - 1) / K)|`.
    pub fn identity_gap(&self, k: usize) -> f64 {
        let k = k as f64;
        let bias = self.mean - self.truth;
        (self.rmse.powi(2) - (bias * bias + self.sd.powi(2) * (k - 1.0) / k)).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub theta_true: ThetaVector,
    pub range: f64,
    pub ell: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_flagged: usize,
    pub mean_sites: f64,
    /// One entry per component of the flat parameter; empty when every
    /// replicate failed.
    pub params: Vec<ParamStats>,
}

impl TableRow {
    pub fn flag_rate(&self) -> f64 {
        let n = self.n_ok + self.n_failed;
        if n == 0 { 0.0 } else { (self.n_flagged + self.n_failed) as f64 / n as f64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<TableRow>,
}

impl ExperimentTable {
    /// Largest RMSE identity gap over all rows.
    pub fn max_identity_gap(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.params.iter().map(move |p| p.identity_gap(r.n_ok)))
            .fold(0.0, f64::max)
    }

    pub fn row(&self, theta: &ThetaVector, range: f64, ell: f64) -> Option<&TableRow> {
        self.rows.iter().find(|r| &r.theta_true == theta && r.range == range && r.ell == ell)
    }

    /// One line per `(theta, R, l)`; per parameter `mean, sd, rmse`.
    pub fn to_csv(&self) -> String {
        let p = self.rows.iter().map(|r| r.theta_true.len()).max().unwrap_or(0);
        let mut out = String::new();
        let mut head: Vec<String> = (0..p).map(|j| format!("true_{j}")).collect();
        head.extend(["range", "ell", "n_ok", "n_failed", "n_flagged", "mean_sites"].map(String::from));
        for j in 0..p {
            head.extend([format!("mean_{j}"), format!("sd_{j}"), format!("rmse_{j}")]);
        }
        writeln!(out, "{}", head.join(",")).unwrap();
        for r in &self.rows {
            let mut cols: Vec<String> = r.theta_true.to_flat().iter().map(|v| v.to_string()).collect();
            cols.extend([
                r.range.to_string(),
                r.ell.to_string(),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
                r.n_flagged.to_string(),
                r.mean_sites.to_string(),
            ]);
            for j in 0..p {
                match r.params.get(j) {
                    Some(s) => cols.extend([s.mean.to_string(), s.sd.to_string(), s.rmse.to_string()]),
                    None => cols.extend(["".into(), "".into(), "".into()]),
                }
            }
            writeln!(out, "{}", cols.join(",")).unwrap();
        }
        out
    }
}

/// Outcome of one replicate on one window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub cell: usize,
    pub replicate: usize,
    pub seed: u64,
    pub ell: f64,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub table: ExperimentTable,
    pub fits: Vec<ReplicateFit>,
}

/// Replicate `k` of every cell uses `child_seed(seed, k)`: cells share
/// random numbers, as do the windows of one replicate.
pub fn simulate_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<SimulationOutput>> {
    let plan = cfg.plan(cell, cfg.max_window())?;
    plan.validate()?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|k| simulate(&plan.with_seed(child_seed(cfg.seed, k as u64))))
        .collect()
}

pub fn fit_cell(cfg: &ExperimentConfig, index: usize, cell: &Cell, outputs: &[SimulationOutput]) -> Vec<ReplicateFit> {
    let d = cfg.model.dim;
    let framework = cfg.framework();
    let jobs: Vec<(usize, f64)> = (0..outputs.len()).flat_map(|k| cfg.windows.iter().map(move |&l| (k, l))).collect();
    jobs.into_par_iter()
        .map(|(k, ell)| {
            let out = &outputs[k];
            let result = Observation::from_configuration(&out.config, &Window::cube(d, ell), framework)
                .and_then(|obs| estimate(cfg, &cell.model, &obs));
            match result {
                Ok(fit) => ReplicateFit {
                    cell: index,
                    replicate: k,
                    seed: out.seed,
                    ell,
                    flagged: divergence_flag(&fit, &cell.theta),
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => ReplicateFit {
                    cell: index,
                    replicate: k,
                    seed: out.seed,
                    ell,
                    fit: None,
                    error: Some(e.to_string()),
                    flagged: true,
                },
            }
        })
        .collect()
}

pub fn tabulate(cfg: &ExperimentConfig, cells: &[Cell], fits: &[ReplicateFit]) -> ExperimentTable {
    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        for &ell in &cfg.windows {
            let here: Vec<&ReplicateFit> = fits.iter().filter(|f| f.cell == c && f.ell == ell).collect();
            let ok: Vec<&FitResult> = here.iter().filter_map(|f| f.fit.as_ref()).collect();
            let truth = cell.theta.to_flat();
            let params = (0..truth.len())
                .filter_map(|j| {
                    let v: Vec<f64> = ok.iter().map(|f| f.theta_hat.to_flat()[j]).collect();
                    ParamStats::from_estimates(&v, truth[j])
                })
                .collect();
            rows.push(TableRow {
                theta_true: cell.theta.clone(),
                range: cell.range,
                ell,
                n_ok: ok.len(),
                n_failed: here.len() - ok.len(),
                n_flagged: here.iter().filter(|f| f.fit.is_some() && f.flagged).count(),
                mean_sites: if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|f| f.n_sites_used as f64).sum::<f64>() / ok.len() as f64
                },
                params,
            });
        }
    }
    ExperimentTable { rows }
}

/// Simulate, fit and tabulate every cell. Failures of single fits are
/// recorded and do not stop the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let mut fits = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let outputs = simulate_cell(cfg, cell)?;
        fits.extend(fit_cell(cfg, c, cell, &outputs));
    }
    let table = tabulate(cfg, &cells, &fits);
    Ok(ExperimentReport { config: cfg.clone(), cells, table, fits })
}
