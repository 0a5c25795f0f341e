//! Interpreter-free layer behind the Python functions.

use serde_json::{json, Value};

use gibbslat::geometry::{GlobalShift, Window};
use gibbslat::harness::{estimate, run_experiment as run, ExperimentConfig};
use gibbslat::inference::Observation;
use gibbslat::points::PointSet;
use gibbslat::sampler::{child_seed, simulate as run_chain, PointPattern, SitePattern};
use gibbslat::{Error, Result};

fn rows(points: &PointSet) -> Vec<Vec<f64>> {
    points.to_vecs()
}

fn point_set(d: usize, value: &Value, key: &str) -> Result<PointSet> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(value.get(key).cloned().unwrap_or(Value::Array(vec![])))
        .map_err(|e| Error::Data(format!("{key}: {e}")))?;
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension { expected: d, got: r.len() });
    }
    Ok(PointSet::from_points(d, rows))
}

fn cell(cfg: &ExperimentConfig, index: usize) -> Result<gibbslat::harness::Cell> {
    let cells = cfg.cells()?;
    let n = cells.len();
    cells.into_iter().nth(index).ok_or_else(|| Error::Config(format!("cell {index} out of range ({n} cells)")))
}

pub fn simulate(config_json: &str, cell_index: usize, replicate: u64, ell: Option<f64>) -> Result<String> {
    let cfg = ExperimentConfig::from_json(config_json)?;
    let c = cell(&cfg, cell_index)?;
    let ell = ell.unwrap_or_else(|| cfg.max_window());
    let mut plan = cfg.plan(&c, cfg.max_window().max(ell))?;
    plan.obs_window = Window::cube(cfg.model.dim, ell);
    plan.seed = child_seed(cfg.seed, replicate);
    let out = run_chain(&plan)?;
    Ok(json!({
        "sites": rows(&out.f1.sites),
        "displacements": rows(&out.f1.displacements),
        "points": rows(&out.f2.points),
        "shift": out.config.shift.0,
        "window": plan.obs_window,
        "seed": out.seed,
        "acceptance": out.acceptance,
    })
    .to_string())
}

pub fn fit(config_json: &str, pattern_json: &str, cell_index: usize) -> Result<String> {
    let cfg = ExperimentConfig::from_json(config_json)?;
    let c = cell(&cfg, cell_index)?;
    let v: Value = serde_json::from_str(pattern_json).map_err(|e| Error::Data(e.to_string()))?;
    let d = cfg.model.dim;
    let window: Window = serde_json::from_value(v.get("window").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Data(format!("window: {e}")))?;
    let shift: Vec<f64> = serde_json::from_value(v.get("shift").cloned().unwrap_or(json!(vec![0.0; d])))
        .map_err(|e| Error::Data(format!("shift: {e}")))?;
    let shift = GlobalShift::new(&c.model.lattice, shift)?;
    let points = PointPattern { points: point_set(d, &v, "points")?, window: window.clone() };
    let sites = point_set(d, &v, "sites")?;
    let obs = if sites.is_empty() {
        Observation::framework2(&points, shift)?
    } else {
        let pairs = SitePattern { sites, displacements: point_set(d, &v, "displacements")?, window };
        Observation::framework1(&pairs, Some(&points), shift)?
    };
    Ok(serde_json::to_string(&estimate(&cfg, &c.model, &obs)?)?)
}

pub fn run_experiment(config_json: &str) -> Result<String> {
    let cfg = ExperimentConfig::from_json(config_json)?;
    Ok(run(&cfg)?.table.to_csv())
}

pub fn variance_curve(patterns: &[Vec<Vec<f64>>], half: f64, radii: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = patterns.iter().flatten().map(|p| p.len()).next().unwrap_or(2);
    let pats = patterns
        .iter()
        .map(|p| {
            if let Some(r) = p.iter().find(|r| r.len() != d) {
                return Err(Error::Dimension { expected: d, got: r.len() });
            }
            Ok(PointPattern { points: PointSet::from_points(d, p), window: Window::cube(d, half) })
        })
        .collect::<Result<Vec<_>>>()?;
    let c = gibbslat::diagnostics::variance_curve(&pats, radii)?;
    Ok((c.ratios, c.standard_errors))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"{
        "schema": "gibbslat/1",
        "model": {"dim": 2, "moves": {"family": "gaussian"}, "ranges": [0.5]},
        "theta_true": [{"theta1": [1.0], "theta2": [0.69]}],
        "windows": [6.0],
        "replicates": 2,
        "seed": 5,
        "simulation": {"burn_in": 30, "window": {"rule": "margin"}},
        "estimator": {"beta": 0.55}
    }"#;

    #[test]
    fn simulate_then_fit() {
        let pat = simulate(CONFIG, 0, 1, None).unwrap();
        let v: Value = serde_json::from_str(&pat).unwrap();
        assert!(v["sites"].as_array().unwrap().len() > 100);
        let fit: Value = serde_json::from_str(&fit(CONFIG, &pat, 0).unwrap()).unwrap();
        assert!(fit["theta_hat"]["theta1"][0].as_f64().unwrap() > 0.0);
        assert_eq!(simulate(CONFIG, 0, 1, None).unwrap(), pat);
    }

    #[test]
    fn errors_carry_their_kind() {
        assert!(matches!(simulate(CONFIG, 3, 0, None), Err(Error::Config(_))));
        assert!(matches!(fit(CONFIG, "{", 0), Err(Error::Data(_))));
        let few = vec![vec![vec![0.0, 0.0]]; 3];
        assert!(matches!(variance_curve(&few, 3.0, &[1.0]), Err(Error::Config(_))));
        let same = vec![vec![vec![0.1, 0.2], vec![1.0, 1.0]]; 10];
        assert_eq!(variance_curve(&same, 3.0, &[1.0, 2.0]).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn table_from_experiment() {
        let csv = run_experiment(CONFIG).unwrap();
        assert_eq!(csv.lines().count(), 2);
    }
}
