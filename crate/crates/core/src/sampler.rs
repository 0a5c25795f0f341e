//! Metropolis-Hastings simulation of Gibbs perturbed lattices.
//!
//! Each site update proposes a fresh displacement from the move law and
//! accepts it with probability `min(1, exp(h_old - h_new))`, where `h` is
//! the local pair energy against every other point. Sites are visited in
//! lexicographic order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_shift, shifted_sites, GlobalShift, LatticeSite, Window};
use crate::intensity::{GibbsModel, ThetaVector};
use crate::interactions::{total_energy, InteractionModel};
use crate::moves::MoveModel;
use crate::points::{CellList, NeighborSearch, PointSet};

pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_SWEEPS: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "u")]
pub enum ShiftMode {
    Random,
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub model: GibbsModel,
    pub theta: ThetaVector,
    pub sim_window: Window,
    pub obs_window: Window,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub shift_mode: ShiftMode,
}

impl SimulationPlan {
    /// Distance the simulation window must extend past the observation
    /// window on every side.
    pub fn required_margin(&self) -> Result<f64> {
        let moves = self.model.moves.with_theta1(&self.theta.theta1)?;
        let reach = moves.tail_radius(self.theta.theta1.first().copied().unwrap_or(1.0));
        Ok(self.model.range() + reach + 5.0 * self.model.lattice.delta())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        self.model.with_theta(&self.theta)?;
        for w in [&self.sim_window, &self.obs_window] {
            if w.dim() != d {
                return Err(Error::Dimension { expected: d, got: w.dim() });
            }
            if w.is_empty() {
                return Err(Error::Config("simulation and observation windows must be non-empty".into()));
            }
        }
        if self.sweeps == 0 {
            return Err(Error::Config("sweeps must be positive".into()));
        }
        if !self.sim_window.contains_window(&self.obs_window) {
            return Err(Error::Config("observation window is not inside the simulation window".into()));
        }
        let margin = self.required_margin()?;
        let slack = (0..d)
            .map(|k| {
                (self.obs_window.lower[k] - self.sim_window.lower[k])
                    .min(self.sim_window.upper[k] - self.obs_window.upper[k])
            })
            .fold(f64::INFINITY, f64::min);
        if slack < margin {
            return Err(Error::Config(format!(
                "simulation window margin {slack} is below the required {margin}"
            )));
        }
        if let ShiftMode::Fixed(u) = &self.shift_mode {
            GlobalShift::new(&self.model.lattice, u.clone())?;
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimulationPlan { seed, ..self.clone() }
    }
}

/// Shift, sites and displacements of a finite lattice configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeConfiguration {
    pub shift: GlobalShift,
    pub sites: Vec<LatticeSite>,
    pub displacements: PointSet,
}

impl LatticeConfiguration {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        self.sites[k]
            .position
            .iter()
            .zip(self.displacements.get(k))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// The perturbed points `i + u + x_i`.
    pub fn points(&self) -> PointSet {
        PointSet::from_points(self.displacements.dim(), (0..self.len()).map(|k| self.point(k)))
    }

    pub fn total_energy(&self, interaction: &InteractionModel) -> f64 {
        total_energy(interaction, &self.points())
    }
}

/// Bare points observed in a window.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern {
    pub points: PointSet,
    pub window: Window,
}

/// Observed (site, displacement) pairs: the site and its displaced point
/// both lie in the window.
#[derive(Clone, Debug, PartialEq)]
pub struct SitePattern {
    pub sites: PointSet,
    pub displacements: PointSet,
    pub window: Window,
}

impl SitePattern {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

pub fn clip_sites(cfg: &LatticeConfiguration, w: &Window) -> SitePattern {
    let d = cfg.displacements.dim();
    let mut sites = PointSet::new(d);
    let mut disp = PointSet::new(d);
    for k in 0..cfg.len() {
        if w.contains(&cfg.sites[k].position) && w.contains(&cfg.point(k)) {
            sites.push(&cfg.sites[k].position);
            disp.push(cfg.displacements.get(k));
        }
    }
    SitePattern {
        sites,
        displacements: disp,
        window: w.clone(),
    }
}

pub fn clip_points(cfg: &LatticeConfiguration, w: &Window) -> PointPattern {
    let d = cfg.displacements.dim();
    let points = PointSet::from_points(d, (0..cfg.len()).map(|k| cfg.point(k)).filter(|p| w.contains(p)));
    PointPattern {
        points,
        window: w.clone(),
    }
}

/// Result of one chain.
#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub seed: u64,
    pub config: LatticeConfiguration,
    pub f1: SitePattern,
    pub f2: PointPattern,
    /// Mean acceptance rate over the post-burn-in sweeps.
    pub acceptance: f64,
}

/// Single-site Metropolis-Hastings chain over a fixed set of sites.
pub struct Chain {
    moves: MoveModel,
    r2: f64,
    edges2: Vec<f64>,
    theta2: Vec<f64>,
    range: f64,
    sites: PointSet,
    displacements: PointSet,
    cells: CellList,
    rng: ChaCha8Rng,
    proposal: Vec<f64>,
    candidate: Vec<f64>,
}

impl Chain {
    /// `model` must already carry the target parameters. `grid` bounds the
    /// neighbour grid; points outside it are still handled.
    pub fn new(model: &GibbsModel, sites: PointSet, displacements: PointSet, grid: &Window, rng: ChaCha8Rng) -> Result<Self> {
        let d = model.dim();
        if sites.dim() != d || displacements.dim() != d || sites.len() != displacements.len() {
            return Err(Error::Config("sites and displacements disagree in shape".into()));
        }
        let points = PointSet::from_points(
            d,
            sites
                .iter()
                .zip(displacements.iter())
                .map(|(s, x)| s.iter().zip(x).map(|(a, b)| a + b).collect::<Vec<_>>()),
        );
        let range = model.range();
        let cells = CellList::new(&grid.dilate(range), range, points);
        let (r2, edges2) = model.interaction.squared_edges();
        Ok(Chain {
            moves: model.moves.clone(),
            r2,
            edges2,
            theta2: model.interaction.theta2(),
            range,
            sites,
            displacements,
            cells,
            rng,
            proposal: vec![0.0; d],
            candidate: vec![0.0; d],
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn displacement(&self, k: usize) -> &[f64] {
        self.displacements.get(k)
    }

    pub fn point(&self, k: usize) -> &[f64] {
        self.cells.get(k)
    }

    pub fn points(&self) -> &PointSet {
        self.cells.points()
    }

    pub fn into_displacements(self) -> PointSet {
        self.displacements
    }

    /// `h(y, others)` with point `k` removed; `+inf` on a hard-core breach.
    pub fn local_energy(&self, k: usize, y: &[f64]) -> f64 {
        let mut e = 0.0;
        let mut hard = false;
        self.cells.for_each_within(y, self.range, Some(k), |_, d2| {
            if d2 < self.r2 {
                hard = true;
            } else if let Some(b) = self.edges2.iter().position(|&edge| d2 <= edge) {
                e += self.theta2[b];
            }
        });
        if hard { f64::INFINITY } else { e }
    }

    /// True when no pair of points breaches the hard core.
    pub fn is_valid(&self) -> bool {
        (0..self.len()).all(|k| self.local_energy(k, self.cells.get(k)).is_finite())
    }

    /// One independence-proposal update of site `k`; returns acceptance.
    pub fn mh_site_update(&mut self, k: usize) -> bool {
        self.moves.sample_into(&mut self.rng, &mut self.proposal);
        for ((c, s), x) in self.candidate.iter_mut().zip(self.sites.get(k)).zip(&self.proposal) {
            *c = s + x;
        }
        let h_new = self.local_energy(k, &self.candidate);
        if !h_new.is_finite() {
            return false;
        }
        let h_old = self.local_energy(k, self.cells.get(k));
        let accept = h_new <= h_old || self.rng.random::<f64>() < (h_old - h_new).exp();
        if accept {
            self.displacements.set(k, &self.proposal);
            let y = std::mem::take(&mut self.candidate);
            self.cells.relocate(k, &y);
            self.candidate = y;
        }
        accept
    }

    /// Updates every site once in order; returns the acceptance rate.
    pub fn mh_sweep(&mut self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        let accepted = (0..self.len()).filter(|&k| self.mh_site_update(k)).count();
        accepted as f64 / self.len() as f64
    }
}

/// Child seed of replicate `k`: a bijective mix of `seed + k * gamma`.
pub fn child_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one chain from the plan's seed.
pub fn simulate(plan: &SimulationPlan) -> Result<SimulationOutput> {
    plan.validate()?;
    let model = plan.model.with_theta(&plan.theta)?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let shift = match &plan.shift_mode {
        ShiftMode::Random => sample_shift(&model.lattice, &mut rng),
        ShiftMode::Fixed(u) => GlobalShift::new(&model.lattice, u.clone())?,
    };
    let lattice_sites = shifted_sites(&model.lattice, &shift, &plan.sim_window);
    let x0 = model.moves.initial_move();
    let sites = PointSet::from_points(d, lattice_sites.iter().map(|s| &s.position));
    let displacements = PointSet::from_points(d, lattice_sites.iter().map(|_| &x0));
    let mut chain = Chain::new(&model, sites, displacements, &plan.sim_window, rng)?;
    if !chain.is_valid() {
        return Err(Error::Config("initial configuration violates the hard core".into()));
    }
    for _ in 0..plan.burn_in {
        chain.mh_sweep();
    }
    let mut rate = 0.0;
    for _ in 0..plan.sweeps {
        rate += chain.mh_sweep();
    }
    let config = LatticeConfiguration {
        shift,
        sites: lattice_sites,
        displacements: chain.into_displacements(),
    };
    Ok(SimulationOutput {
        seed: plan.seed,
        f1: clip_sites(&config, &plan.obs_window),
        f2: clip_points(&config, &plan.obs_window),
        config,
        acceptance: rate / plan.sweeps as f64,
    })
}

/// `k` independent chains; replicate `j` runs with `child_seed(seed, j)`.
///
/// Runs on the current rayon pool.
pub fn replicate(plan: &SimulationPlan, k: usize) -> Result<Vec<SimulationOutput>> {
    if k == 0 {
        return Err(Error::Config("replicate count must be positive".into()));
    }
    plan.validate()?;
    (0..k as u64)
        .into_par_iter()
        .map(|j| simulate(&plan.with_seed(child_seed(plan.seed, j))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatticeSpec;
    use crate::interactions::InteractionModel;

    fn gibbs(moves: MoveModel, r: f64, range: f64, t2: f64) -> GibbsModel {
        let d = moves.dim();
        GibbsModel::new(moves, InteractionModel::strauss(r, range, t2).unwrap(), LatticeSpec::cubic(d)).unwrap()
    }

    fn plan(model: GibbsModel, sim: f64, obs: f64, burn: usize, seed: u64) -> SimulationPlan {
        let d = model.dim();
        SimulationPlan {
            theta: model.theta(),
            model,
            sim_window: Window::cube(d, sim),
            obs_window: Window::cube(d, obs),
            sweeps: 1,
            burn_in: burn,
            seed,
            shift_mode: ShiftMode::Random,
        }
    }

    fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
        a.sort_by(|x, y| x.total_cmp(y));
        b.sort_by(|x, y| x.total_cmp(y));
        let (mut i, mut j, mut best) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let t = a[i].min(b[j]);
            while i < a.len() && a[i] <= t {
                i += 1;
            }
            while j < b.len() && b[j] <= t {
                j += 1;
            }
            best = best.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        best
    }

    #[test]
    fn child_seeds_are_distinct_and_deterministic() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|k| child_seed(42, k)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_eq!(child_seed(7, 3), child_seed(7, 3));
        assert_ne!(child_seed(7, 3), child_seed(8, 3));
    }

    #[test]
    fn interaction_off_accepts_everything() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.0);
        let out = simulate(&plan(m, 14.0, 4.0, 3, 1)).unwrap();
        assert_eq!(out.acceptance, 1.0);
    }

    #[test]
    fn hardcore_proposals_rejected_and_never_entered() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.4, 0.5, 3.0);
        let p = plan(m.clone(), 14.0, 4.0, 0, 5);
        let sites = PointSet::from_points(2, [[0.0, 0.0], [1.0, 0.0]]);
        let disp = PointSet::from_points(2, [[0.0, 0.0], [0.0, 0.0]]);
        let mut chain = Chain::new(&m, sites, disp, &p.sim_window, ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(chain.local_energy(0, &[0.8, 0.0]), f64::INFINITY);
        for _ in 0..2000 {
            chain.mh_sweep();
            assert!(chain.points().min_pair_distance() >= 0.4);
        }
        let out = simulate(&PlanExt::sweeps(p, 50)).unwrap();
        assert!(out.config.points().min_pair_distance() >= 0.4);
        assert!(out.f2.points.min_pair_distance() >= 0.4);
    }

    trait PlanExt {
        fn sweeps(self, n: usize) -> Self;
    }

    impl PlanExt for SimulationPlan {
        fn sweeps(mut self, n: usize) -> Self {
            self.sweeps = n;
            self
        }
    }

    #[test]
    fn extreme_interaction_rate_is_positive_and_finite() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.45, 0.9, 50.0);
        let out = simulate(&plan(m, 15.0, 4.0, 5, 2).sweeps(20)).unwrap();
        assert!(out.acceptance.is_finite());
        assert!(out.acceptance > 0.0 && out.acceptance < 0.5, "{}", out.acceptance);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.69);
        let p = plan(m, 14.0, 4.0, 20, 99);
        let a = simulate(&p).unwrap();
        let b = simulate(&p).unwrap();
        assert_eq!(a.config, b.config);
        assert_eq!(a.f1, b.f1);
        assert_eq!(a.f2, b.f2);
        assert_eq!(a.acceptance.to_bits(), b.acceptance.to_bits());
        let c = simulate(&p.with_seed(100)).unwrap();
        assert_ne!(a.config.displacements, c.config.displacements);
    }

    #[test]
    fn replicate_one_equals_child_zero() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.69);
        let p = plan(m, 14.0, 4.0, 5, 1234);
        let reps = replicate(&p, 1).unwrap();
        let direct = simulate(&p.with_seed(child_seed(1234, 0))).unwrap();
        assert_eq!(reps[0].config, direct.config);
    }

    #[test]
    fn plan_validation() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.69);
        assert!(plan(m.clone(), 14.0, 4.0, 0, 1).validate().is_ok());
        assert!(matches!(plan(m.clone(), 8.0, 4.0, 0, 1).validate(), Err(Error::Config(_))));
        assert!(matches!(plan(m.clone(), 4.0, 8.0, 0, 1).validate(), Err(Error::Config(_))));
        assert!(matches!(plan(m.clone(), 14.0, 4.0, 0, 1).sweeps(0).validate(), Err(Error::Config(_))));
        let mut bad = plan(m, 14.0, 4.0, 0, 1);
        bad.shift_mode = ShiftMode::Fixed(vec![1.5, 0.0]);
        assert!(bad.validate().is_err());
        let crowded = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 1.2, 1.5, 0.69);
        assert!(matches!(simulate(&plan(crowded, 20.0, 4.0, 0, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn clipping_follows_observation_rules() {
        let m = gibbs(MoveModel::gaussian(2, 0.5).unwrap(), 0.0, 0.5, 0.3);
        let p = plan(m, 20.0, 5.0, 10, 8);
        let out = simulate(&p).unwrap();
        let w = &p.obs_window;
        let mut expected_f1 = 0;
        let mut expected_f2 = 0;
        for k in 0..out.config.len() {
            let y = out.config.point(k);
            expected_f2 += w.contains(&y) as usize;
            expected_f1 += (w.contains(&y) && w.contains(&out.config.sites[k].position)) as usize;
        }
        assert_eq!(out.f1.len(), expected_f1);
        assert_eq!(out.f2.points.len(), expected_f2);
        for (s, x) in out.f1.sites.iter().zip(out.f1.displacements.iter()) {
            assert!(w.contains(s));
            let y: Vec<f64> = s.iter().zip(x).map(|(a, b)| a + b).collect();
            assert!(w.contains(&y));
        }
        assert!(out.f2.points.iter().all(|p| w.contains(p)));
        // Some points have sites outside the window, so F2 is strictly larger.
        assert!(out.f2.points.len() > out.f1.len());
    }

    #[test]
    fn energy_telescopes_over_accepted_updates() {
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.1, 0.7, 0.8);
        let w = Window::cube(2, 3.0);
        let sites: Vec<LatticeSite> = shifted_sites(&m.lattice, &GlobalShift(vec![0.3, 0.6]), &w);
        let sp = PointSet::from_points(2, sites.iter().map(|s| &s.position));
        let disp = PointSet::from_points(2, sites.iter().map(|_| [0.0, 0.0]));
        let mut chain = Chain::new(&m, sp, disp, &w, ChaCha8Rng::seed_from_u64(17)).unwrap();
        let mut energy = total_energy(&m.interaction, chain.points());
        let mut accepted = 0;
        for step in 0..3000 {
            let k = step % chain.len();
            let h_old = chain.local_energy(k, &chain.point(k).to_vec());
            if chain.mh_site_update(k) {
                accepted += 1;
                let h_new = chain.local_energy(k, &chain.point(k).to_vec());
                let now = total_energy(&m.interaction, chain.points());
                assert!(((now - energy) - (h_new - h_old)).abs() < 1e-9);
                energy = now;
            }
        }
        assert!(accepted > 100);
    }

    #[test]
    fn lone_site_samples_the_move_law() {
        let m = gibbs(MoveModel::gaussian(1, 1.5).unwrap(), 0.0, 0.5, 2.0);
        let w = Window::cube(1, 1.0);
        let mut chain = Chain::new(
            &m,
            PointSet::from_points(1, [[0.0]]),
            PointSet::from_points(1, [[0.0]]),
            &w,
            ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut chain_draws = Vec::with_capacity(100_000);
        let mut direct = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            chain.mh_site_update(0);
            chain_draws.push(chain.displacement(0)[0]);
            direct.push(m.moves.sample(&mut rng)[0]);
        }
        assert!(ks_two_sample(&mut chain_draws, &mut direct) < 0.02);
    }

    #[test]
    fn two_site_conditional_law_matches_quadrature() {
        // Site 1 frozen at displacement -0.3, so its point sits at 0.7.
        let m = gibbs(MoveModel::uniform_cube(1, 0.4).unwrap(), 0.0, 0.6, 1.0);
        let w = Window::cube(1, 2.0);
        let mut chain = Chain::new(
            &m,
            PointSet::from_points(1, [[0.0], [1.0]]),
            PointSet::from_points(1, [[0.0], [-0.3]]),
            &w,
            ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                chain.mh_site_update(0);
                chain.displacement(0)[0]
            })
            .collect();
        assert_eq!(chain.displacement(1), &[-0.3]);
        draws.sort_by(|a, b| a.total_cmp(b));

        // Oracle: density proportional to exp(-h) on [-0.4, 0.4], 10^4 nodes.
        let nodes = 10_000;
        let h = 0.8 / nodes as f64;
        let dens: Vec<f64> = (0..nodes)
            .map(|j| {
                let x = -0.4 + (j as f64 + 0.5) * h;
                if (0.7 - x).abs() <= 0.6 { (-1.0f64).exp() } else { 1.0 }
            })
            .collect();
        let z: f64 = dens.iter().sum::<f64>() * h;
        let mut cdf = Vec::with_capacity(nodes + 1);
        cdf.push(0.0);
        for v in &dens {
            cdf.push(cdf.last().unwrap() + v * h / z);
        }
        let oracle = |x: f64| {
            let t = ((x + 0.4) / h).clamp(0.0, nodes as f64);
            let j = (t.floor() as usize).min(nodes - 1);
            cdf[j] + (cdf[j + 1] - cdf[j]) * (t - j as f64)
        };
        let mut ks = 0.0f64;
        for (k, x) in draws.iter().enumerate() {
            let f = oracle(*x);
            ks = ks.max((f - k as f64 / n as f64).abs()).max((f - (k + 1) as f64 / n as f64).abs());
        }
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn interaction_off_count_matches_binomial_thinning() {
        // With no interaction each point is i + u + x, x uniform on the box.
        let a = 0.45;
        let m = gibbs(MoveModel::uniform_cube(2, a).unwrap(), 0.0, 0.5, 0.0);
        let mut p = plan(m, 14.0, 4.3, 2, 21);
        p.shift_mode = ShiftMode::Fixed(vec![0.25, 0.7]);
        let out = simulate(&p).unwrap();
        let overlap = |c: f64, lo: f64, hi: f64| ((c + a).min(hi) - (c - a).max(lo)).max(0.0) / (2.0 * a);
        let (mut mean, mut var) = (0.0, 0.0);
        for s in &out.config.sites {
            let q: f64 = (0..2).map(|k| overlap(s.position[k], -4.3, 4.3)).product();
            mean += q;
            var += q * (1.0 - q);
        }
        let n = out.f2.points.len() as f64;
        assert!((n - mean).abs() <= 4.0 * var.sqrt(), "{n} vs {mean} +- {}", var.sqrt());
    }

    #[test]
    fn replicate_counts_pass_shuffle_test() {
        // Lag-one autocorrelation of per-replicate counts against its
        // permutation distribution.
        let m = gibbs(MoveModel::gaussian(2, 1.0).unwrap(), 0.0, 0.5, 0.69);
        let p = plan(m, 13.0, 3.0, 3, 77);
        let counts: Vec<f64> = replicate(&p, 200).unwrap().iter().map(|r| r.f2.points.len() as f64).collect();
        let lag1 = |v: &[f64]| {
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            let num: f64 = v.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum();
            let den: f64 = v.iter().map(|x| (x - mu).powi(2)).sum();
            num / den
        };
        let observed = lag1(&counts).abs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut shuffled = counts.clone();
        let mut exceed = 0;
        let perms = 2000;
        for _ in 0..perms {
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            exceed += (lag1(&shuffled).abs() >= observed) as usize;
        }
        let p_value = (exceed + 1) as f64 / (perms + 1) as f64;
        assert!(p_value > 0.01, "p {p_value}");
        // Counts actually vary.
        assert!(counts.iter().any(|&c| c != counts[0]));
    }
}
