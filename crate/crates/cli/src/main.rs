use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gibbslat::diagnostics::{residual_report, variance_curve, ResidualReport, VarianceCurve};
use gibbslat::harness::{estimate, run_experiment, simulate_cell, ExperimentConfig};
use gibbslat::inference::{fit_takacs_fiksel, Framework};
use gibbslat::io::{load_observation, write_replicate};
use gibbslat::sampler::{clip_points, clip_sites, PointPattern};
use gibbslat::{Error, Result};

#[derive(Parser)]
#[command(name = "gibbslat", version, about = "Gibbs perturbed lattices: simulate, estimate, diagnose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; the config's `output` or the working directory
    /// when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every replicate of every cell and write pattern files.
    Simulate(Common),
    /// Fit one pattern file.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// `<stem>_f1.csv` or `<stem>_f2.csv` written by `simulate`.
        #[arg(long)]
        pattern: PathBuf,
    },
    /// Variance curve and residual report over a set of pattern files.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Glob of pattern files, e.g. `out/c0_l12_*_f1.csv`.
        #[arg(long)]
        patterns: String,
    },
    /// Full simulate-and-fit study over the configured grid.
    Experiment(Common),
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(&self.config)
            .map_err(|e| Error::Config(format!("{}: {e}", self.config.display())))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.jobs {
            if n == 0 {
                return Err(Error::Config("--jobs must be positive".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn ell_tag(ell: f64) -> String {
    format!("{ell}").replace('.', "p")
}

fn cmd_simulate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let dir = c.out_dir(&cfg).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), &cfg)?;
    let d = cfg.model.dim;
    for (ci, cell) in cfg.cells()?.iter().enumerate() {
        let outputs = c.pool()?.install(|| simulate_cell(&cfg, cell))?;
        for &ell in &cfg.windows {
            let mut plan = cfg.plan(cell, ell)?;
            plan.obs_window = gibbslat::geometry::Window::cube(d, ell);
            for (k, out) in outputs.iter().enumerate() {
                let mut clipped = out.clone();
                clipped.f1 = clip_sites(&out.config, &plan.obs_window);
                clipped.f2 = clip_points(&out.config, &plan.obs_window);
                plan.seed = out.seed;
                write_replicate(&dir, &format!("c{ci}_l{}_r{k:04}", ell_tag(ell)), &clipped, &plan)?;
            }
            eprintln!("cell {ci} l={ell}: {} replicates written", outputs.len());
        }
    }
    Ok(())
}

fn cmd_estimate(c: &Common, pattern: &Path) -> Result<()> {
    let cfg = c.load()?;
    let (obs, meta) = load_observation(pattern)?;
    let expected = match obs.framework {
        Framework::F1 => meta.n_sites,
        Framework::F2 => meta.n_points,
    };
    let got = match obs.framework {
        Framework::F1 => obs.n_pairs(),
        Framework::F2 => obs.points.len(),
    };
    eprintln!("{}: {got} records read, sidecar lists {expected}", pattern.display());
    if got != expected {
        return Err(Error::Data(format!("{}: {got} records but the sidecar lists {expected}", pattern.display())));
    }
    let cell = cfg
        .cells()?
        .into_iter()
        .find(|cell| cell.range == meta.model.range())
        .ok_or_else(|| Error::Config(format!("model.ranges: no entry matches the pattern's range {}", meta.model.range())))?;
    let fit = c.pool()?.install(|| estimate(&cfg, &cell.model, &obs))?;
    eprintln!("usable sites: {}", fit.n_sites_used);
    let text = serde_json::to_string_pretty(&fit)? + "\n";
    match c.out_dir(&cfg) {
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("fit.json"), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseSummary {
    files: Vec<String>,
    variance_curve: VarianceCurve,
    residuals: Vec<(String, ResidualReport)>,
    residual_failures: Vec<(String, String)>,
}

fn cmd_diagnose(c: &Common, patterns: &str) -> Result<()> {
    let cfg = c.load()?;
    let mut files: Vec<PathBuf> = glob::glob(patterns)
        .map_err(|e| Error::Config(format!("--patterns: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(e.to_string()))?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no files match {patterns}")));
    }
    let loaded = files.iter().map(|f| load_observation(f)).collect::<Result<Vec<_>>>()?;
    let pats: Vec<PointPattern> =
        loaded.iter().map(|(o, _)| PointPattern { points: o.points.clone(), window: o.window.clone() }).collect();
    let pool = c.pool()?;
    let curve = pool.install(|| variance_curve(&pats, &cfg.diagnostics.radii))?;
    let mut residuals = Vec::new();
    let mut failures = Vec::new();
    for (f, (obs, meta)) in files.iter().zip(&loaded) {
        if obs.framework != Framework::F1 {
            continue;
        }
        let name = f.display().to_string();
        let family = meta.model.clone();
        let result = pool.install(|| {
            let fit = fit_takacs_fiksel(obs, &family, &cfg.estimator)?;
            residual_report(obs, &family, &fit.theta_hat, &cfg.diagnostics.bank, &cfg.estimator)
        });
        match result {
            Ok(r) => residuals.push((name, r)),
            Err(e) => failures.push((name, e.to_string())),
        }
    }
    let dir = c.out_dir(&cfg).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("variance_curve.csv"), curve.to_csv())?;
    let mut csv = String::from("file,function,residual,a_avg,b_avg\n");
    for (name, r) in &residuals {
        for line in r.to_csv().lines().skip(1) {
            csv.push_str(&format!("{name},{line}\n"));
        }
    }
    fs::write(dir.join("residuals.csv"), csv)?;
    let summary = DiagnoseSummary {
        files: files.iter().map(|f| f.display().to_string()).collect(),
        variance_curve: curve,
        residuals,
        residual_failures: failures,
    };
    write_json(&dir.join("diagnose.json"), &serde_json::json!({ "config": cfg, "summary": summary }))?;
    print!("{}", summary.variance_curve.to_csv());
    Ok(())
}

fn cmd_experiment(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let report = c.pool()?.install(|| run_experiment(&cfg))?;
    let csv = report.table.to_csv();
    if let Some(dir) = c.out_dir(&cfg) {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("table.csv"), &csv)?;
        write_json(&dir.join("experiment.json"), &report)?;
    }
    for row in &report.table.rows {
        if row.flag_rate() >= 0.5 {
            eprintln!(
                "unstable cell: theta {:?} R={} l={}: {} of {} fits flagged or failed",
                row.theta_true.to_flat(),
                row.range,
                row.ell,
                row.n_flagged + row.n_failed,
                row.n_ok + row.n_failed
            );
        }
    }
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Estimate { common, pattern } => cmd_estimate(common, pattern),
        Command::Diagnose { common, patterns } => cmd_diagnose(common, patterns),
        Command::Experiment(c) => cmd_experiment(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
