//! Lattices, fundamental domains, box windows and shifted-lattice enumeration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A full-rank lattice given by `d` basis vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRepr", into = "LatticeRepr")]
pub struct LatticeSpec {
    basis: Vec<Vec<f64>>,
    /// Inverse of the matrix whose columns are the basis vectors.
    inverse: Vec<Vec<f64>>,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct LatticeRepr {
    basis: Vec<Vec<f64>>,
}

impl TryFrom<LatticeRepr> for LatticeSpec {
    type Error = Error;
    fn try_from(r: LatticeRepr) -> Result<Self> {
        LatticeSpec::new(r.basis)
    }
}

impl From<LatticeSpec> for LatticeRepr {
    fn from(l: LatticeSpec) -> Self {
        LatticeRepr { basis: l.basis }
    }
}

impl LatticeSpec {
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = basis.len();
        if d == 0 {
            return Err(Error::Config("lattice basis is empty".into()));
        }
        if basis.iter().any(|v| v.len() != d) {
            return Err(Error::Config(format!(
                "lattice basis must hold {d} vectors of length {d}"
            )));
        }
        if basis.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Config("lattice basis has non-finite entries".into()));
        }
        // Columns are basis vectors.
        let mut columns = vec![vec![0.0; d]; d];
        for (k, v) in basis.iter().enumerate() {
            for (row, &c) in v.iter().enumerate() {
                columns[row][k] = c;
            }
        }
        let inverse = invert(&columns)
            .ok_or_else(|| Error::Config("lattice basis is not full rank".into()))?;
        let mut lat = LatticeSpec {
            basis,
            inverse,
            delta: 0.0,
        };
        lat.delta = lat.shortest_vector_norm();
        if !(lat.delta > 0.0) {
            return Err(Error::Config("lattice size parameter must be positive".into()));
        }
        Ok(lat)
    }

    /// The integer lattice `Z^d`.
    pub fn cubic(dim: usize) -> Self {
        let basis = (0..dim)
            .map(|k| (0..dim).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        LatticeSpec::new(basis).expect("identity basis is valid")
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Minimal norm of a nonzero lattice vector.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Volume of the fundamental domain.
    pub fn cell_volume(&self) -> f64 {
        let d = self.dim();
        let mut columns = vec![vec![0.0; d]; d];
        for (k, v) in self.basis.iter().enumerate() {
            for (row, &c) in v.iter().enumerate() {
                columns[row][k] = c;
            }
        }
        determinant(&columns).abs()
    }

    /// `sum_k coeffs[k] * a_k`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (k, &t) in coeffs.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(&self.basis[k]) {
                *o += t * a;
            }
        }
        out
    }

    /// Coordinates of `y` in the lattice basis.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        self.inverse
            .iter()
            .map(|row| row.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.basis
            .iter()
            .enumerate()
            .all(|(k, v)| v.iter().enumerate().all(|(j, &c)| j == k || c == 0.0))
    }

    fn shortest_vector_norm(&self) -> f64 {
        let d = self.dim();
        let shortest_basis = self
            .basis
            .iter()
            .map(|v| norm(v))
            .fold(f64::INFINITY, f64::min);
        // |k_j| <= |row_j(B^-1)| * |v| for any v = B k with |v| <= shortest_basis.
        let bounds: Vec<i64> = self
            .inverse
            .iter()
            .map(|row| (norm(row) * shortest_basis).ceil() as i64)
            .collect();
        let mut best = shortest_basis;
        let mut k: Vec<i64> = bounds.iter().map(|b| -b).collect();
        loop {
            if k.iter().any(|&c| c != 0) {
                let coeffs: Vec<f64> = k.iter().map(|&c| c as f64).collect();
                let n = norm(&self.combine(&coeffs));
                if n < best {
                    best = n;
                }
            }
            let mut axis = 0;
            loop {
                if axis == d {
                    return best;
                }
                if k[axis] < bounds[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = -bounds[axis];
                axis += 1;
            }
        }
    }
}

/// Axis-aligned box `[lower, upper]`, or the empty set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("window bounds must have equal nonzero length".into()));
        }
        if lower.iter().chain(&upper).any(|c| !c.is_finite()) {
            return Err(Error::Config("window bounds must be finite".into()));
        }
        let empty = lower.iter().zip(&upper).any(|(l, u)| l > u);
        Ok(Window { lower, upper, empty })
    }

    /// `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Self {
        Window::new(vec![-half; dim], vec![half; dim]).expect("cube window")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn volume(&self) -> f64 {
        if self.empty {
            return 0.0;
        }
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        !self.empty
            && y
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(c, (l, u))| *c >= *l && *c <= *u)
    }

    /// True when `other` lies inside `self`.
    pub fn contains_window(&self, other: &Window) -> bool {
        other.empty
            || (!self.empty
                && self
                    .lower
                    .iter()
                    .zip(&other.lower)
                    .all(|(a, b)| a <= b)
                && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b))
    }

    /// Smallest distance from `y` (inside the window) to the window boundary.
    pub fn depth(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(c, (l, u))| (c - l).min(u - c))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dilate(&self, r: f64) -> Window {
        if self.empty {
            return self.clone();
        }
        Window {
            lower: self.lower.iter().map(|l| l - r).collect(),
            upper: self.upper.iter().map(|u| u + r).collect(),
            empty: false,
        }
    }

    /// Ball centred at `centre` with radius `r` lies in the window.
    pub fn contains_ball(&self, centre: &[f64], r: f64) -> bool {
        self.contains(centre) && self.depth(centre) >= r
    }
}

/// Points whose `r`-ball lies in `w`: each side shrinks by `r`.
pub fn erode(w: &Window, r: f64) -> Window {
    assert!(r >= 0.0, "erosion radius must be nonnegative");
    if w.empty {
        return w.clone();
    }
    let lower: Vec<f64> = w.lower.iter().map(|l| l + r).collect();
    let upper: Vec<f64> = w.upper.iter().map(|u| u - r).collect();
    let empty = lower.iter().zip(&upper).any(|(l, u)| l > u);
    Window { lower, upper, empty }
}

/// Common shift `u` of the lattice, an element of the fundamental domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalShift(pub Vec<f64>);

impl GlobalShift {
    pub fn zero(dim: usize) -> Self {
        GlobalShift(vec![0.0; dim])
    }

    /// Validates that `u` lies in the fundamental domain of `lat`.
    pub fn new(lat: &LatticeSpec, u: Vec<f64>) -> Result<Self> {
        if u.len() != lat.dim() {
            return Err(Error::Dimension {
                expected: lat.dim(),
                got: u.len(),
            });
        }
        let t = lat.coefficients(&u);
        // Tolerate round-off in the change of basis.
        if t.iter().any(|&c| !(c >= -1e-12 && c < 1.0)) {
            return Err(Error::Config(format!(
                "shift {u:?} is outside the fundamental domain"
            )));
        }
        Ok(GlobalShift(u))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Draws `u = sum t_k a_k` with `t ~ U[0,1)^d`.
pub fn sample_shift<R: Rng + ?Sized>(lat: &LatticeSpec, rng: &mut R) -> GlobalShift {
    let t: Vec<f64> = (0..lat.dim()).map(|_| rng.random::<f64>()).collect();
    GlobalShift(lat.combine(&t))
}

/// A site of the shifted lattice: integer coordinates and position `i + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSite {
    pub index: Vec<i64>,
    pub position: Vec<f64>,
}

/// All `i + u` with `i` in the lattice that fall in `w`, lexicographic in
/// the integer coordinates.
pub fn shifted_sites(lat: &LatticeSpec, u: &GlobalShift, w: &Window) -> Vec<LatticeSite> {
    let d = lat.dim();
    if w.empty {
        return Vec::new();
    }
    // Range of basis coefficients over the corners of w - u.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for corner in 0..(1usize << d) {
        let y: Vec<f64> = (0..d)
            .map(|k| {
                let c = if corner >> k & 1 == 1 { w.upper[k] } else { w.lower[k] };
                c - u.0[k]
            })
            .collect();
        for (k, t) in lat.coefficients(&y).into_iter().enumerate() {
            lo[k] = lo[k].min(t);
            hi[k] = hi[k].max(t);
        }
    }
    let lo: Vec<i64> = lo.iter().map(|t| t.floor() as i64 - 1).collect();
    let hi: Vec<i64> = hi.iter().map(|t| t.ceil() as i64 + 1).collect();

    let mut out = Vec::new();
    let mut k = lo.clone();
    loop {
        let coeffs: Vec<f64> = k.iter().map(|&c| c as f64).collect();
        let mut p = lat.combine(&coeffs);
        for (c, s) in p.iter_mut().zip(&u.0) {
            *c += s;
        }
        if w.contains(&p) {
            out.push(LatticeSite {
                index: k.clone(),
                position: p,
            });
        }
        // Last axis varies fastest: lexicographic order.
        let mut axis = d;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            if k[axis] < hi[axis] {
                k[axis] += 1;
                break;
            }
            k[axis] = lo[axis];
        }
    }
}

/// Border correction factor: 1 iff `i` lies in `w` eroded by `m + range`
/// and `i + x` lies in `w` eroded by `range`.
pub fn border_indicator(i: &[f64], x: &[f64], w: &Window, m: f64, range: f64) -> bool {
    let inner = erode(w, m + range);
    if !inner.contains(i) {
        return false;
    }
    let y: Vec<f64> = i.iter().zip(x).map(|(a, b)| a + b).collect();
    erode(w, range).contains(&y)
}

/// Precomputed eroded windows of the border correction.
#[derive(Clone, Debug)]
pub struct BorderCorrection {
    /// `W eroded by (m + R)`: admissible sites.
    pub sites: Window,
    /// `W eroded by R`: admissible displaced locations.
    pub locations: Window,
    pub m: f64,
    pub range: f64,
}

impl BorderCorrection {
    pub fn new(w: &Window, m: f64, range: f64) -> Self {
        BorderCorrection {
            sites: erode(w, m + range),
            locations: erode(w, range),
            m,
            range,
        }
    }

    pub fn site_ok(&self, i: &[f64]) -> bool {
        self.sites.contains(i)
    }

    pub fn location_ok(&self, y: &[f64]) -> bool {
        self.locations.contains(y)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Volume of the unit ball in dimension `d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    // V_d = pi^{d/2} / Gamma(d/2 + 1), via V_d = 2 pi / d * V_{d-2}.
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = m
        .iter()
        .flatten()
        .map(|c| c.abs())
        .fold(0.0_f64, f64::max);
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for c in a[col].iter_mut() {
            *c /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

fn determinant(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let Some(pivot) = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
        else {
            return 0.0;
        };
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    det
}
