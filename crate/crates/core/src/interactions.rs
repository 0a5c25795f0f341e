//! Finite-range pairwise interactions: Strauss with optional hard core and
//! its piecewise (multi-band) generalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{NeighborSearch, PointSet};

/// Pairwise potential `sum_b theta2[b] * 1{|y - y'| in band b}` plus an
/// infinite penalty below the hard-core radius.
///
/// Band 0 is `[hardcore_r, breakpoints[0]]`, band `b` is
/// `(breakpoints[b-1], breakpoints[b]]`. Distances exactly equal to the
/// hard-core radius are allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionModel {
    StraussHardcore {
        hardcore_r: f64,
        range: f64,
        theta2: f64,
    },
    PiecewiseStrauss {
        hardcore_r: f64,
        breakpoints: Vec<f64>,
        theta2: Vec<f64>,
    },
}

impl InteractionModel {
    pub fn strauss(hardcore_r: f64, range: f64, theta2: f64) -> Result<Self> {
        let m = InteractionModel::StraussHardcore {
            hardcore_r,
            range,
            theta2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn piecewise(hardcore_r: f64, breakpoints: Vec<f64>, theta2: Vec<f64>) -> Result<Self> {
        let m = InteractionModel::PiecewiseStrauss {
            hardcore_r,
            breakpoints,
            theta2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.hardcore_r();
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config("hard-core radius must be finite and nonnegative".into()));
        }
        let bp = self.breakpoints();
        if bp.is_empty() {
            return Err(Error::Config("interaction needs at least one band".into()));
        }
        let mut prev = r;
        for &b in &bp {
            if !(b > prev) || !b.is_finite() {
                return Err(Error::Config(format!(
                    "band edges must increase strictly above the hard-core radius {r}: {bp:?}"
                )));
            }
            prev = b;
        }
        if self.theta2().len() != bp.len() {
            return Err(Error::Config("theta2 must have one entry per band".into()));
        }
        if self.theta2().iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("theta2 must be finite".into()));
        }
        Ok(())
    }

    pub fn hardcore_r(&self) -> f64 {
        match self {
            InteractionModel::StraussHardcore { hardcore_r, .. }
            | InteractionModel::PiecewiseStrauss { hardcore_r, .. } => *hardcore_r,
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            InteractionModel::StraussHardcore { range, .. } => vec![*range],
            InteractionModel::PiecewiseStrauss { breakpoints, .. } => breakpoints.clone(),
        }
    }

    /// Interaction range `R`.
    pub fn range(&self) -> f64 {
        match self {
            InteractionModel::StraussHardcore { range, .. } => *range,
            InteractionModel::PiecewiseStrauss { breakpoints, .. } => *breakpoints.last().unwrap(),
        }
    }

    /// Number of interaction parameters.
    pub fn p2(&self) -> usize {
        match self {
            InteractionModel::StraussHardcore { .. } => 1,
            InteractionModel::PiecewiseStrauss { breakpoints, .. } => breakpoints.len(),
        }
    }

    pub fn theta2(&self) -> Vec<f64> {
        match self {
            InteractionModel::StraussHardcore { theta2, .. } => vec![*theta2],
            InteractionModel::PiecewiseStrauss { theta2, .. } => theta2.clone(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            InteractionModel::StraussHardcore { .. } => "strauss_hardcore",
            InteractionModel::PiecewiseStrauss { .. } => "piecewise_strauss",
        }
    }

    pub fn with_theta2(&self, theta2: &[f64]) -> Result<Self> {
        if theta2.len() != self.p2() {
            return Err(Error::Dimension {
                expected: self.p2(),
                got: theta2.len(),
            });
        }
        let mut m = self.clone();
        match &mut m {
            InteractionModel::StraussHardcore { theta2: t, .. } => *t = theta2[0],
            InteractionModel::PiecewiseStrauss { theta2: t, .. } => *t = theta2.to_vec(),
        }
        m.validate()?;
        Ok(m)
    }

    /// Band of a pair at squared distance `d2`, `Err(())` for a hard-core breach.
    #[inline]
    pub(crate) fn classify(&self, d2: f64, r2: f64, edges2: &[f64]) -> std::result::Result<Option<usize>, ()> {
        if d2 < r2 {
            return Err(());
        }
        Ok(edges2.iter().position(|&e| d2 <= e))
    }

    pub(crate) fn squared_edges(&self) -> (f64, Vec<f64>) {
        let r = self.hardcore_r();
        (r * r, self.breakpoints().iter().map(|b| b * b).collect())
    }
}

/// Band counts of a location against a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairStatistic {
    pub counts: Vec<u32>,
    pub hardcore_violated: bool,
}

impl PairStatistic {
    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// `S2(y, others)`; only points within the range of `y` are inspected.
pub fn pair_statistic<N: NeighborSearch>(m: &InteractionModel, y: &[f64], others: &N) -> PairStatistic {
    pair_statistic_excluding(m, y, others, None)
}

pub fn pair_statistic_excluding<N: NeighborSearch>(
    m: &InteractionModel,
    y: &[f64],
    others: &N,
    exclude: Option<usize>,
) -> PairStatistic {
    let (r2, edges2) = m.squared_edges();
    let mut stat = PairStatistic {
        counts: vec![0; edges2.len()],
        hardcore_violated: false,
    };
    others.for_each_within(y, m.range(), exclude, |_, d2| match m.classify(d2, r2, &edges2) {
        Err(()) => stat.hardcore_violated = true,
        Ok(Some(b)) => stat.counts[b] += 1,
        Ok(None) => {}
    });
    stat
}

/// `theta2 . S2`, or `+inf` on a hard-core breach.
pub fn energy_of(m: &InteractionModel, stat: &PairStatistic) -> f64 {
    if stat.hardcore_violated {
        return f64::INFINITY;
    }
    m.theta2()
        .iter()
        .zip(&stat.counts)
        .map(|(t, &c)| if c == 0 { 0.0 } else { t * c as f64 })
        .sum()
}

/// Local energy `h(y, others)`.
pub fn local_energy<N: NeighborSearch>(m: &InteractionModel, y: &[f64], others: &N) -> f64 {
    energy_of(m, &pair_statistic(m, y, others))
}

/// Hamiltonian of a finite configuration.
pub fn total_energy(m: &InteractionModel, gamma: &PointSet) -> f64 {
    let (r2, edges2) = m.squared_edges();
    let theta = m.theta2();
    let mut total = 0.0;
    for a in 0..gamma.len() {
        for b in a + 1..gamma.len() {
            let d2 = crate::geometry::dist2(gamma.get(a), gamma.get(b));
            match m.classify(d2, r2, &edges2) {
                Err(()) => return f64::INFINITY,
                Ok(Some(band)) => total += theta[band],
                Ok(None) => {}
            }
        }
    }
    total
}
