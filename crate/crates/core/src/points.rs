//! Flat point storage and fixed-radius neighbor search.

use crate::geometry::{dist2, Window};

/// Points of `R^d` stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        PointSet {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "flat coordinates do not match dimension");
        PointSet { dim, coords }
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: impl IntoIterator<Item = P>) -> Self {
        let mut s = PointSet::new(dim);
        for p in points {
            s.push(p.as_ref());
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.coords.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim, "point dimension");
        self.coords.extend_from_slice(p);
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn set(&mut self, k: usize, p: &[f64]) {
        self.coords[k * self.dim..(k + 1) * self.dim].copy_from_slice(p);
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn translated(&self, v: &[f64]) -> PointSet {
        let mut out = self.clone();
        for p in out.coords.chunks_exact_mut(self.dim) {
            for (c, s) in p.iter_mut().zip(v) {
                *c += s;
            }
        }
        out
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    /// Smallest pairwise distance (infinite for fewer than two points).
    pub fn min_pair_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                best = best.min(dist2(self.get(a), self.get(b)));
            }
        }
        best.sqrt()
    }
}

/// Enumerates points within a radius of a query location.
pub trait NeighborSearch {
    /// Calls `f(index, squared distance)` for every stored point within
    /// `radius` of `y`, skipping `exclude`.
    fn for_each_within<F: FnMut(usize, f64)>(&self, y: &[f64], radius: f64, exclude: Option<usize>, f: F);
}

impl NeighborSearch for PointSet {
    fn for_each_within<F: FnMut(usize, f64)>(&self, y: &[f64], radius: f64, exclude: Option<usize>, mut f: F) {
        let r2 = radius * radius;
        for (k, p) in self.iter().enumerate() {
            if Some(k) == exclude {
                continue;
            }
            let d2 = dist2(p, y);
            if d2 <= r2 {
                f(k, d2);
            }
        }
    }
}

/// Uniform grid of buckets with side at least the query radius.
///
/// Points outside the grid are clamped into the border cells; clamping is
/// monotone and 1-Lipschitz in cell coordinates, so two points within one
/// cell side of each other always land in adjacent cells.
#[derive(Clone, Debug)]
pub struct CellList {
    points: PointSet,
    origin: Vec<f64>,
    side: f64,
    shape: Vec<usize>,
    cells: Vec<Vec<u32>>,
    cell_of: Vec<usize>,
}

impl CellList {
    /// Grid over `window` with cell side `max(radius, min_side)`.
    pub fn new(window: &Window, radius: f64, points: PointSet) -> Self {
        let dim = window.dim();
        assert_eq!(points.dim(), dim, "point dimension");
        let extent = window
            .lower
            .iter()
            .zip(&window.upper)
            .map(|(l, u)| (u - l).max(0.0))
            .fold(0.0, f64::max);
        // Cap the cell count so tiny ranges on big windows stay bounded.
        let max_per_axis = match dim {
            1 => 1 << 20,
            2 => 2048,
            3 => 160,
            _ => 24,
        };
        let side = radius
            .max(extent / max_per_axis as f64)
            .max(1e-9);
        let shape: Vec<usize> = window
            .lower
            .iter()
            .zip(&window.upper)
            .map(|(l, u)| (((u - l).max(0.0) / side).floor() as usize).max(1))
            .collect();
        let total: usize = shape.iter().product();
        let mut list = CellList {
            points: PointSet::new(dim),
            origin: window.lower.clone(),
            side,
            shape,
            cells: vec![Vec::new(); total],
            cell_of: Vec::new(),
        };
        for p in points.iter() {
            list.insert(p);
        }
        list
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        self.points.get(k)
    }

    pub fn insert(&mut self, p: &[f64]) -> usize {
        let k = self.points.len();
        self.points.push(p);
        let c = self.cell_index(p);
        self.cells[c].push(k as u32);
        self.cell_of.push(c);
        k
    }

    /// Moves point `k` to `p`.
    pub fn relocate(&mut self, k: usize, p: &[f64]) {
        let old = self.cell_of[k];
        let new = self.cell_index(p);
        if old != new {
            let bucket = &mut self.cells[old];
            let pos = bucket.iter().position(|&j| j as usize == k).expect("bucket membership");
            bucket.swap_remove(pos);
            self.cells[new].push(k as u32);
            self.cell_of[k] = new;
        }
        self.points.set(k, p);
    }

    fn axis_cell(&self, axis: usize, c: f64) -> usize {
        let t = ((c - self.origin[axis]) / self.side).floor();
        if t < 0.0 {
            0
        } else {
            (t as usize).min(self.shape[axis] - 1)
        }
    }

    fn cell_index(&self, p: &[f64]) -> usize {
        let mut idx = 0;
        for axis in 0..p.len() {
            idx = idx * self.shape[axis] + self.axis_cell(axis, p[axis]);
        }
        idx
    }

    /// Largest radius the grid can answer exactly.
    pub fn max_radius(&self) -> f64 {
        self.side
    }
}

impl NeighborSearch for CellList {
    fn for_each_within<F: FnMut(usize, f64)>(&self, y: &[f64], radius: f64, exclude: Option<usize>, mut f: F) {
        assert!(radius <= self.side * (1.0 + 1e-12), "query radius exceeds cell side");
        let dim = y.len();
        let r2 = radius * radius;
        let centre: Vec<usize> = (0..dim).map(|a| self.axis_cell(a, y[a])).collect();
        let mut offset = vec![-1i64; dim];
        'cells: loop {
            let mut idx = 0usize;
            let mut valid = true;
            for a in 0..dim {
                let c = centre[a] as i64 + offset[a];
                if c < 0 || c >= self.shape[a] as i64 {
                    valid = false;
                    break;
                }
                idx = idx * self.shape[a] + c as usize;
            }
            if valid {
                for &j in &self.cells[idx] {
                    let j = j as usize;
                    if Some(j) == exclude {
                        continue;
                    }
                    let d2 = dist2(self.points.get(j), y);
                    if d2 <= r2 {
                        f(j, d2);
                    }
                }
            }
            for a in (0..dim).rev() {
                offset[a] += 1;
                if offset[a] <= 1 {
                    continue 'cells;
                }
                offset[a] = -1;
            }
            break;
        }
    }
}
