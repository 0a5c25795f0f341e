//! Pattern files: CSV coordinates plus a JSON sidecar.
//!
//! A replicate `stem` is stored as `stem_f1.csv` (columns
//! `site_x,site_y,disp_x,disp_y`), `stem_f2.csv` (columns `x,y`) and
//! `stem.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GlobalShift, Window};
use crate::inference::{Framework, Observation};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::points::PointSet;
use crate::sampler::{PointPattern, SimulationOutput, SimulationPlan, SitePattern};

/// Metadata written next to every pattern file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternSidecar {
    pub window: Window,
    pub shift: Vec<f64>,
    pub seed: u64,
    pub theta: ThetaVector,
    pub model: GibbsModel,
    pub sim_window: Window,
    pub burn_in: usize,
    pub sweeps: usize,
    pub acceptance: f64,
    pub n_sites: usize,
    pub n_points: usize,
}

impl PatternSidecar {
    pub fn from_output(out: &SimulationOutput, plan: &SimulationPlan) -> Self {
        PatternSidecar {
            window: plan.obs_window.clone(),
            shift: out.config.shift.0.clone(),
            seed: out.seed,
            theta: plan.theta.clone(),
            model: plan.model.clone(),
            sim_window: plan.sim_window.clone(),
            burn_in: plan.burn_in,
            sweeps: plan.sweeps,
            acceptance: out.acceptance,
            n_sites: out.f1.len(),
            n_points: out.f2.points.len(),
        }
    }
}

/// Coordinate suffixes: `x, y, z`, then `x3, x4, ...`.
pub fn axis_names(d: usize) -> Vec<String> {
    (0..d)
        .map(|k| match k {
            0 => "x".to_string(),
            1 => "y".to_string(),
            2 => "z".to_string(),
            _ => format!("x{k}"),
        })
        .collect()
}

fn f1_header(d: usize) -> Vec<String> {
    let axes = axis_names(d);
    axes.iter().map(|a| format!("site_{a}")).chain(axes.iter().map(|a| format!("disp_{a}"))).collect()
}

fn to_csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        // `{:?}` keeps the shortest round-trip representation.
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Data(format!("line {}: {e}", p.line())),
        None => Error::Data(e.to_string()),
    }
}

pub fn f1_to_csv(pattern: &SitePattern) -> Result<String> {
    let d = pattern.window.dim();
    to_csv(
        &f1_header(d),
        pattern.sites.iter().zip(pattern.displacements.iter()).map(|(s, x)| s.iter().chain(x).copied().collect()),
    )
}

pub fn f2_to_csv(pattern: &PointPattern) -> Result<String> {
    to_csv(&axis_names(pattern.window.dim()), pattern.points.iter().map(|p| p.to_vec()))
}

/// Parsed coordinate table of either framework.
#[derive(Clone, Debug, PartialEq)]
pub enum PatternTable {
    Pairs { sites: PointSet, displacements: PointSet },
    Points(PointSet),
}

impl PatternTable {
    pub fn framework(&self) -> Framework {
        match self {
            PatternTable::Pairs { .. } => Framework::F1,
            PatternTable::Points(_) => Framework::F2,
        }
    }
}

/// Parses a pattern CSV; the header decides the framework. Errors name the
/// offending line.
pub fn parse_pattern_csv(text: &str) -> Result<PatternTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let n = header.len();
    let pairs = n % 2 == 0 && n > 0 && header == f1_header(n / 2);
    let d = if pairs { n / 2 } else { n };
    if d == 0 || (!pairs && header != axis_names(n)) {
        return Err(Error::Data(format!(
            "line 1: unrecognized header {header:?}; expected {:?} or {:?}",
            f1_header(2),
            axis_names(2)
        )));
    }
    let mut flat = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != n {
            return Err(Error::Data(format!("line {line}: expected {n} fields, found {}", rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Data(format!("line {line}: cannot parse {field:?} as a number")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line}: non-finite coordinate {field:?}")));
            }
            flat.push(v);
        }
    }
    if pairs {
        let (mut sites, mut disp) = (Vec::new(), Vec::new());
        for row in flat.chunks(n) {
            sites.extend_from_slice(&row[..d]);
            disp.extend_from_slice(&row[d..]);
        }
        Ok(PatternTable::Pairs { sites: PointSet::from_flat(d, sites), displacements: PointSet::from_flat(d, disp) })
    } else {
        Ok(PatternTable::Points(PointSet::from_flat(d, flat)))
    }
}

/// Paths of the three files of a replicate.
pub fn replicate_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("{stem}_f1.csv")), dir.join(format!("{stem}_f2.csv")), dir.join(format!("{stem}.json")))
}

pub fn write_replicate(dir: &Path, stem: &str, out: &SimulationOutput, plan: &SimulationPlan) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (f1, f2, meta) = replicate_paths(dir, stem);
    fs::write(f1, f1_to_csv(&out.f1)?)?;
    fs::write(f2, f2_to_csv(&out.f2)?)?;
    fs::write(meta, serde_json::to_string_pretty(&PatternSidecar::from_output(out, plan))?)?;
    Ok(())
}

/// `stem_f1.csv` / `stem_f2.csv` -> (directory, stem).
fn split_stem(path: &Path) -> Option<(PathBuf, String)> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix("_f1.csv").or_else(|| name.strip_suffix("_f2.csv"))?;
    Some((path.parent().unwrap_or(Path::new(".")).to_path_buf(), stem.to_string()))
}

pub fn read_sidecar(path: &Path) -> Result<PatternSidecar> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Loads a pattern file and its sidecar. An F1 file is merged with the
/// sibling F2 file when one exists, so that points of sites outside the
/// window still enter the neighbourhoods.
pub fn load_observation(path: &Path) -> Result<(Observation, PatternSidecar)> {
    let (dir, stem) = split_stem(path)
        .ok_or_else(|| Error::Data(format!("{}: pattern files are named <stem>_f1.csv or <stem>_f2.csv", path.display())))?;
    let (_, f2_path, meta_path) = replicate_paths(&dir, &stem);
    let meta = read_sidecar(&meta_path)?;
    let table = parse_pattern_csv(&fs::read_to_string(path)?)?;
    let shift = GlobalShift(meta.shift.clone());
    let window = meta.window.clone();
    let obs = match table {
        PatternTable::Pairs { sites, displacements } => {
            let extra = if f2_path.exists() && f2_path != path {
                match parse_pattern_csv(&fs::read_to_string(&f2_path)?)? {
                    PatternTable::Points(points) => Some(PointPattern { points, window: window.clone() }),
                    _ => return Err(Error::Data(format!("{}: expected point columns", f2_path.display()))),
                }
            } else {
                None
            };
            Observation::framework1(&SitePattern { sites, displacements, window }, extra.as_ref(), shift)?
        }
        PatternTable::Points(points) => Observation::framework2(&PointPattern { points, window }, shift)?,
    };
    Ok((obs, meta))
}
