//! Exponential-family Papangelou conditional intensities of a single site.
//!
//! For a site `i`, a move `x` and the configuration `others` of every
//! other perturbed point,
//!
//! ```text
//! log lambda(i, x, others; theta) = -theta1 . S1(x) - c(theta1) - theta2 . S2(i + x, others)
//! Lambda(i, x, others; theta)     = lambda / Z_i,   Z_i = integral of lambda over the support
//! ```
//!
//! The border-corrected variant multiplies numerator and denominator by
//! the indicator `b_n(i, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BorderCorrection, LatticeSpec};
use crate::interactions::{pair_statistic_excluding, InteractionModel};
use crate::moves::{MoveModel, QuadratureRule, REFINE_DEPTH};
use crate::points::NeighborSearch;

/// Move family, interaction and lattice of a Gibbs perturbed lattice.
///
/// The parameters stored in `moves` and `interaction` are the model's own;
/// estimation code passes candidate values separately as [`ThetaVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsModel {
    pub moves: MoveModel,
    pub interaction: InteractionModel,
    pub lattice: LatticeSpec,
}

impl GibbsModel {
    pub fn new(moves: MoveModel, interaction: InteractionModel, lattice: LatticeSpec) -> Result<Self> {
        if moves.dim() != lattice.dim() {
            return Err(Error::Dimension {
                expected: lattice.dim(),
                got: moves.dim(),
            });
        }
        moves.validate()?;
        interaction.validate()?;
        Ok(GibbsModel {
            moves,
            interaction,
            lattice,
        })
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn p1(&self) -> usize {
        self.moves.p1()
    }

    pub fn p2(&self) -> usize {
        self.interaction.p2()
    }

    /// Total number of parameters.
    pub fn p(&self) -> usize {
        self.p1() + self.p2()
    }

    /// The parameter vector the model currently carries.
    pub fn theta(&self) -> ThetaVector {
        ThetaVector {
            theta1: self.moves.theta1(),
            theta2: self.interaction.theta2(),
        }
    }

    /// Copy of the model carrying `theta`.
    pub fn with_theta(&self, theta: &ThetaVector) -> Result<Self> {
        Ok(GibbsModel {
            moves: self.moves.with_theta1(&theta.theta1)?,
            interaction: self.interaction.with_theta2(&theta.theta2)?,
            lattice: self.lattice.clone(),
        })
    }

    pub fn range(&self) -> f64 {
        self.interaction.range()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl ThetaVector {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>) -> Self {
        ThetaVector { theta1, theta2 }
    }

    pub fn from_flat(p1: usize, flat: &[f64]) -> Self {
        ThetaVector {
            theta1: flat[..p1].to_vec(),
            theta2: flat[p1..].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.theta1.iter().chain(&self.theta2).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.theta1.len() + self.theta2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `S(i, x, others) = (S1(x), S2(i + x, others))` and the hard-core flag.
///
/// `exclude` removes the site's own point when `others` holds the full
/// configuration.
pub fn joint_statistic<N: NeighborSearch>(
    gm: &GibbsModel,
    i: &[f64],
    x: &[f64],
    others: &N,
    exclude: Option<usize>,
) -> Result<(Vec<f64>, bool)> {
    let mut s = gm.moves.s1(x)?;
    let y: Vec<f64> = i.iter().zip(x).map(|(a, b)| a + b).collect();
    let s2 = pair_statistic_excluding(&gm.interaction, &y, others, exclude);
    s.extend(s2.counts_f64());
    Ok((s, s2.hardcore_violated))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| if *y == 0.0 { 0.0 } else { x * y }).sum()
}

/// `log lambda(i, x, others; theta)`, `-inf` on a hard-core breach or off
/// the support.
pub fn log_lambda<N: NeighborSearch>(
    gm: &GibbsModel,
    theta: &ThetaVector,
    i: &[f64],
    x: &[f64],
    others: &N,
    exclude: Option<usize>,
) -> f64 {
    let Ok((s, hard)) = joint_statistic(gm, i, x, others, exclude) else {
        return f64::NEG_INFINITY;
    };
    if hard {
        return f64::NEG_INFINITY;
    }
    let moves = match gm.moves.with_theta1(&theta.theta1) {
        Ok(m) => m,
        Err(_) => return f64::NEG_INFINITY,
    };
    -dot(&theta.to_flat(), &s) - moves.log_normalizer()
}

fn site_error(i: &[f64]) -> Error {
    Error::DegenerateSite { site: i.to_vec() }
}

/// `log lambda` together with the set of `(neighbour, band)` pairs, which
/// is constant between the jumps of the integrand. Counts alone would not
/// do: two cells inside different single discs share a count. `None` marks
/// zero mass.
fn keyed_log_lambda<N: NeighborSearch>(
    gm: &GibbsModel,
    moves: &MoveModel,
    theta: &ThetaVector,
    i: &[f64],
    x: &[f64],
    others: &N,
    exclude: Option<usize>,
) -> (f64, Option<Vec<(usize, usize)>>) {
    if !moves.in_support(x) {
        return (f64::NEG_INFINITY, None);
    }
    let y: Vec<f64> = i.iter().zip(x).map(|(a, b)| a + b).collect();
    let m = &gm.interaction;
    let (r2, edges2) = m.squared_edges();
    let mut members = Vec::new();
    let mut hard = false;
    others.for_each_within(&y, m.range(), exclude, |k, d2| match m.classify(d2, r2, &edges2) {
        Err(()) => hard = true,
        Ok(Some(band)) => members.push((k, band)),
        Ok(None) => {}
    });
    if hard {
        return (f64::NEG_INFINITY, None);
    }
    members.sort_unstable();
    let theta2 = &theta.theta2;
    let pair: f64 = members.iter().map(|&(_, band)| theta2[band]).sum();
    let l = -dot(&theta.theta1, &moves.s1_unchecked(x)) - pair - moves.log_normalizer();
    (l, Some(members))
}

/// Site partition function `Z_i = integral of lambda(i, x, others) dx`.
///
/// Cells of `quad` cut by an interaction band edge are subdivided, so the
/// jumps of the pair term do not limit the accuracy to first order in the
/// node spacing.
pub fn partition_z<N: NeighborSearch>(
    gm: &GibbsModel,
    theta: &ThetaVector,
    i: &[f64],
    others: &N,
    exclude: Option<usize>,
    quad: &QuadratureRule,
) -> Result<f64> {
    let moves = gm.moves.with_theta1(&theta.theta1)?;
    let z = quad.integrate_log_adaptive(|x| keyed_log_lambda(gm, &moves, theta, i, x, others, exclude), REFINE_DEPTH);
    if z > 0.0 { Ok(z) } else { Err(site_error(i)) }
}

/// Normalized conditional intensity `Lambda = lambda / Z_i`.
pub fn papangelou<N: NeighborSearch>(
    gm: &GibbsModel,
    theta: &ThetaVector,
    i: &[f64],
    x: &[f64],
    others: &N,
    exclude: Option<usize>,
    quad: &QuadratureRule,
) -> Result<f64> {
    let z = partition_z(gm, theta, i, others, exclude, quad)?;
    let l = log_lambda(gm, theta, i, x, others, exclude);
    Ok(if l == f64::NEG_INFINITY { 0.0 } else { l.exp() / z })
}

/// Border-corrected conditional intensity `Lambda_n`.
///
/// Zero when the site is outside the doubly eroded window; otherwise the
/// denominator integrates only over moves landing in the singly eroded
/// window.
#[allow(clippy::too_many_arguments)]
pub fn papangelou_bordered<N: NeighborSearch>(
    gm: &GibbsModel,
    theta: &ThetaVector,
    i: &[f64],
    x: &[f64],
    others: &N,
    exclude: Option<usize>,
    quad: &QuadratureRule,
    border: &BorderCorrection,
) -> Result<f64> {
    if !border.site_ok(i) {
        return Ok(0.0);
    }
    let kept = |x: &[f64]| {
        let y: Vec<f64> = i.iter().zip(x).map(|(a, b)| a + b).collect();
        border.location_ok(&y)
    };
    let moves = gm.moves.with_theta1(&theta.theta1)?;
    let z = quad.integrate_log_adaptive(
        |node| {
            if kept(node) {
                keyed_log_lambda(gm, &moves, theta, i, node, others, exclude)
            } else {
                (f64::NEG_INFINITY, None)
            }
        },
        REFINE_DEPTH,
    );
    if !(z > 0.0) {
        return Err(site_error(i));
    }
    if !kept(x) {
        return Ok(0.0);
    }
    let l = log_lambda(gm, theta, i, x, others, exclude);
    Ok(if l == f64::NEG_INFINITY { 0.0 } else { l.exp() / z })
}
