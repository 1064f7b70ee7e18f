//! Rectangular node grid, region masks, and the Neumann five-point Laplacian.
//!
//! Fields are `ny × nx` arrays; row 0 is the southernmost row and node `(i, j)`
//! sits at `x = i·hx`, `y = j·hy`. Flattened vectors use `p = j·nx + i`.
//!
//! Homogeneous Neumann closure copies the boundary value into the ghost node
//! (`u[-1] = u[0]`), so the discrete operator is a weighted graph Laplacian:
//! symmetric with zero row and column sums.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

pub const DEFAULT_MAX_CELLS: usize = 1_000_000;

/// Upper tolerance on normalized fields.
pub const CLIP_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Domain width in km.
    pub lx: f64,
    /// Domain height in km.
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::with_max_cells(nx, ny, lx, ly, DEFAULT_MAX_CELLS)
    }

    pub fn with_max_cells(nx: usize, ny: usize, lx: f64, ly: f64, max_cells: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Grid(format!("need at least 3x3 nodes, got {nx}x{ny}")));
        }
        if nx.saturating_mul(ny) > max_cells {
            return Err(Error::Grid(format!("{nx}x{ny} nodes exceeds the limit of {max_cells}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Grid(format!("extent must be positive, got {lx} x {ly}")));
        }
        Ok(GridSpec {
            nx,
            ny,
            lx,
            ly,
            hx: lx / (nx - 1) as f64,
            hy: ly / (ny - 1) as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// Quadrature weight of one node.
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_position(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn zeros(&self) -> Array2<f64> {
        Array2::zeros(self.shape())
    }

    pub fn check_shape(&self, field: &Array2<f64>) -> Result<()> {
        if field.dim() != self.shape() {
            return Err(Error::Dimension(format!(
                "field is {:?}, grid is {:?}",
                field.dim(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// True when the stored spacings agree with `L/(n-1)`.
    pub fn spacing_consistent(&self) -> bool {
        let rel = |a: f64, b: f64| ((a - b) / b).abs() <= 1e-12;
        rel(self.lx / (self.nx - 1) as f64, self.hx) && rel(self.ly / (self.ny - 1) as f64, self.hy)
    }

    /// The Neumann Laplacian as a sparse matrix over flattened fields.
    pub fn laplacian_matrix(&self) -> CsrMatrix {
        let (nx, ny) = (self.nx, self.ny);
        let (cx, cy) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let mut t = Vec::with_capacity(5 * self.len());
        for j in 0..ny {
            for i in 0..nx {
                let p = self.index(i, j);
                let mut diag = 0.0;
                let mut link = |q: usize, c: f64| {
                    t.push((p, q, c));
                    diag -= c;
                };
                if i > 0 {
                    link(p - 1, cx);
                }
                if i + 1 < nx {
                    link(p + 1, cx);
                }
                if j > 0 {
                    link(p - nx, cy);
                }
                if j + 1 < ny {
                    link(p + nx, cy);
                }
                t.push((p, p, diag));
            }
        }
        CsrMatrix::from_triplets(self.len(), t)
    }
}

/// Five-point Laplacian with mirrored-ghost Neumann boundaries.
pub fn laplacian(field: &Array2<f64>, grid: &GridSpec) -> Result<Array2<f64>> {
    grid.check_shape(field)?;
    let (ny, nx) = grid.shape();
    let (cx, cy) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    let mut out = grid.zeros();
    for j in 0..ny {
        for i in 0..nx {
            let c = field[[j, i]];
            let west = if i > 0 { field[[j, i - 1]] } else { c };
            let east = if i + 1 < nx { field[[j, i + 1]] } else { c };
            let south = if j > 0 { field[[j - 1, i]] } else { c };
            let north = if j + 1 < ny { field[[j + 1, i]] } else { c };
            out[[j, i]] = cx * (west - 2.0 * c + east) + cy * (south - 2.0 * c + north);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub name: String,
    pub cells: Array2<bool>,
    pub cell_count: usize,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, cells: Array2<bool>) -> Self {
        let cell_count = cells.iter().filter(|&&c| c).count();
        RegionMask {
            name: name.into(),
            cells,
            cell_count,
        }
    }

    /// Mask covering every node of the grid.
    pub fn full(name: impl Into<String>, grid: &GridSpec) -> Self {
        Self::new(name, Array2::from_elem(grid.shape(), true))
    }

    /// Nodes with `i0 <= i < i1` and `j0 <= j < j1`.
    pub fn rectangle(
        name: impl Into<String>,
        grid: &GridSpec,
        (i0, i1): (usize, usize),
        (j0, j1): (usize, usize),
    ) -> Self {
        let cells = Array2::from_shape_fn(grid.shape(), |(j, i)| i >= i0 && i < i1 && j >= j0 && j < j1);
        Self::new(name, cells)
    }

    pub fn union(name: impl Into<String>, masks: &[RegionMask]) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Dimension("union of zero masks".into()))?;
        let mut cells = Array2::from_elem(first.cells.dim(), false);
        for m in masks {
            if m.cells.dim() != cells.dim() {
                return Err(Error::Dimension(format!("mask `{}` has a different shape", m.name)));
            }
            cells.zip_mut_with(&m.cells, |a, &b| *a |= b);
        }
        Ok(Self::new(name, cells))
    }

    pub fn intersection(&self, name: impl Into<String>, other: &RegionMask) -> Result<Self> {
        if self.cells.dim() != other.cells.dim() {
            return Err(Error::Dimension(format!(
                "masks `{}` and `{}` differ in shape",
                self.name, other.name
            )));
        }
        let mut cells = self.cells.clone();
        cells.zip_mut_with(&other.cells, |a, &b| *a &= b);
        Ok(Self::new(name, cells))
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.cells.dim() == other.cells.dim() && self.cells.iter().zip(other.cells.iter()).all(|(&a, &b)| !a || b)
    }

    pub fn overlaps(&self, other: &RegionMask) -> bool {
        self.cells.iter().zip(other.cells.iter()).any(|(&a, &b)| a && b)
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.cells.dim() != grid.shape() {
            return Err(Error::Dimension(format!(
                "mask `{}` is {:?}, grid is {:?}",
                self.name,
                self.cells.dim(),
                grid.shape()
            )));
        }
        Ok(())
    }

    /// Flat indices of the occupied nodes.
    pub fn indices(&self) -> Vec<usize> {
        let nx = self.cells.ncols();
        self.cells
            .indexed_iter()
            .filter(|(_, &c)| c)
            .map(|((j, i), _)| j * nx + i)
            .collect()
    }
}

/// Midpoint quadrature of `field` over the region, in persons when `field` is a density.
pub fn region_total(field: &Array2<f64>, mask: &RegionMask, grid: &GridSpec) -> Result<f64> {
    grid.check_shape(field)?;
    mask.check_grid(grid)?;
    let s: f64 = field
        .iter()
        .zip(mask.cells.iter())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum();
    Ok(s * grid.cell_area())
}

/// Spreads `total` evenly as a density over the masked nodes.
pub fn distribute_uniform(total: f64, mask: &RegionMask, grid: &GridSpec) -> Result<Array2<f64>> {
    mask.check_grid(grid)?;
    if mask.cell_count == 0 {
        return Err(Error::DegenerateRegion(mask.name.clone()));
    }
    if !(total >= 0.0) || !total.is_finite() {
        return Err(Error::Domain(format!(
            "total for `{}` must be >= 0, got {total}",
            mask.name
        )));
    }
    let density = total / (mask.cell_count as f64 * grid.cell_area());
    Ok(mask.cells.mapv(|m| if m { density } else { 0.0 }))
}

/// Per-compartment fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub names: Vec<String>,
    pub fields: Vec<Array2<f64>>,
    /// Days since the start of the simulation.
    pub time: f64,
}

impl FieldSet {
    pub fn new(names: Vec<String>, fields: Vec<Array2<f64>>, time: f64) -> Result<Self> {
        if names.len() != fields.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} fields",
                names.len(),
                fields.len()
            )));
        }
        if let Some(first) = fields.first() {
            if let Some(bad) = fields.iter().position(|f| f.dim() != first.dim()) {
                return Err(Error::Dimension(format!(
                    "field `{}` is {:?}, expected {:?}",
                    names[bad],
                    fields[bad].dim(),
                    first.dim()
                )));
            }
        }
        Ok(FieldSet { names, fields, time })
    }

    pub fn zeros_like(&self) -> Self {
        FieldSet {
            names: self.names.clone(),
            fields: self.fields.iter().map(|f| Array2::zeros(f.dim())).collect(),
            time: self.time,
        }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|k| &self.fields[k])
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.fields.first().map(|f| f.dim())
    }

    /// Checks `0 <= u <= 1 + CLIP_EPS` on the occupied nodes (all nodes when `occupied` is `None`).
    pub fn check_normalized(&self, occupied: Option<&RegionMask>) -> Result<()> {
        for (name, f) in self.names.iter().zip(&self.fields) {
            for (idx, &v) in f.indexed_iter() {
                if occupied.is_some_and(|m| !m.cells[idx]) {
                    continue;
                }
                if !(0.0..=1.0 + CLIP_EPS).contains(&v) {
                    return Err(Error::Domain(format!("{name} = {v} at node {idx:?} is not a fraction")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mask_intersection() {
        let g = GridSpec::new(6, 4, 5.0, 3.0).unwrap();
        let a = RegionMask::rectangle("a", &g, (0, 4), (0, 4));
        let b = RegionMask::rectangle("b", &g, (2, 6), (1, 3));
        let c = a.intersection("c", &b).unwrap();
        assert_eq!(c, RegionMask::rectangle("c", &g, (2, 4), (1, 3)));
        assert!(c.is_subset_of(&a) && c.is_subset_of(&b));
        let other = RegionMask::full("o", &GridSpec::new(3, 3, 1.0, 1.0).unwrap());
        assert!(a.intersection("x", &other).is_err());
    }

    fn unit_grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, (n - 1) as f64, (n - 1) as f64).unwrap()
    }

    /// Dense Neumann Laplacian built from the stencil definition, independent of `laplacian`.
    fn dense_neumann(grid: &GridSpec) -> Vec<Vec<f64>> {
        let n = grid.len();
        let mut a = vec![vec![0.0; n]; n];
        for j in 0..grid.ny as i64 {
            for i in 0..grid.nx as i64 {
                let p = (j * grid.nx as i64 + i) as usize;
                for (di, dj, h) in [(-1, 0, grid.hx), (1, 0, grid.hx), (0, -1, grid.hy), (0, 1, grid.hy)] {
                    let (ii, jj) = (i + di, j + dj);
                    // ghost outside the grid takes the boundary node's own value
                    let q = if ii < 0 || jj < 0 || ii >= grid.nx as i64 || jj >= grid.ny as i64 {
                        p
                    } else {
                        (jj * grid.nx as i64 + ii) as usize
                    };
                    a[p][q] += 1.0 / (h * h);
                    a[p][p] -= 1.0 / (h * h);
                }
            }
        }
        a
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(2, 5, 1.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 0.0, 1.0).is_err());
        assert!(GridSpec::with_max_cells(100, 100, 1.0, 1.0, 9_999).is_err());
        let g = GridSpec::new(101, 101, 39.23, 56.05).unwrap();
        assert_relative_eq!(g.hx, 39.23 / 100.0, max_relative = 1e-15);
        assert!(g.spacing_consistent());
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = GridSpec::new(7, 5, 3.0, 2.0).unwrap();
        let f = Array2::from_elem(g.shape(), 3.7);
        assert!(laplacian(&f, &g).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn laplacian_of_spike() {
        let g = unit_grid(5);
        let mut f = g.zeros();
        f[[2, 2]] = 1.0;
        let l = laplacian(&f, &g).unwrap();
        for ((j, i), &v) in l.indexed_iter() {
            let expected = match (j, i) {
                (2, 2) => -4.0,
                (1, 2) | (3, 2) | (2, 1) | (2, 3) => 1.0,
                _ => 0.0,
            };
            assert_eq!(v, expected, "node ({j},{i})");
        }
    }

    #[test]
    fn laplacian_matches_dense_assembly() {
        let g = GridSpec::new(5, 5, 2.0, 3.0).unwrap();
        let f = Array2::from_shape_fn(g.shape(), |(j, i)| {
            ((7 * i + 3 * j) % 5) as f64 * 0.3 - (i as f64).cos()
        });
        let dense = dense_neumann(&g);
        let flat: Vec<f64> = f.iter().copied().collect();
        let got = laplacian(&f, &g).unwrap();
        let matrix = g.laplacian_matrix();
        let via_csr = matrix.mul_vec(&flat);
        for p in 0..g.len() {
            let expected: f64 = dense[p].iter().zip(&flat).map(|(a, b)| a * b).sum();
            assert_relative_eq!(got.as_slice().unwrap()[p], expected, epsilon = 1e-12);
            assert_relative_eq!(via_csr[p], expected, epsilon = 1e-12);
        }
        assert!(matrix.is_symmetric(0.0));
    }

    #[test]
    fn laplacian_rejects_wrong_shape() {
        let g = unit_grid(4);
        assert!(matches!(
            laplacian(&Array2::zeros((3, 4)), &g),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn region_total_examples() {
        let g = unit_grid(6);
        let mask = RegionMask::rectangle("r", &g, (0, 5), (0, 2));
        assert_eq!(mask.cell_count, 10);
        assert_eq!(region_total(&Array2::ones(g.shape()), &mask, &g).unwrap(), 10.0);
        assert_eq!(region_total(&g.zeros(), &mask, &g).unwrap(), 0.0);
    }

    #[test]
    fn region_total_matches_direct_summation() {
        let g = GridSpec::new(7, 7, 1.5, 2.5).unwrap();
        let f = Array2::from_shape_fn(g.shape(), |(j, i)| ((i * 13 + j * 7) % 17) as f64 / 3.0);
        let m = RegionMask::new("odd", Array2::from_shape_fn(g.shape(), |(j, i)| (i + 2 * j) % 3 != 0));
        let mut expected = 0.0;
        for j in 0..7 {
            for i in 0..7 {
                if m.cells[[j, i]] {
                    expected += f[[j, i]] * g.hx * g.hy;
                }
            }
        }
        assert_relative_eq!(region_total(&f, &m, &g).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn distribute_uniform_examples() {
        let g = unit_grid(8);
        let m = RegionMask::rectangle("sq", &g, (1, 6), (2, 7));
        assert_eq!(m.cell_count, 25);
        let f = distribute_uniform(100.0, &m, &g).unwrap();
        for ((j, i), &v) in f.indexed_iter() {
            assert_eq!(v, if m.cells[[j, i]] { 4.0 } else { 0.0 });
        }
        assert!(distribute_uniform(0.0, &m, &g).unwrap().iter().all(|&v| v == 0.0));
        let empty = RegionMask::new("none", Array2::from_elem(g.shape(), false));
        assert!(matches!(
            distribute_uniform(1.0, &empty, &g),
            Err(Error::DegenerateRegion(_))
        ));
        assert!(distribute_uniform(-1.0, &m, &g).is_err());
    }

    #[test]
    fn field_set_checks() {
        let a = Array2::from_elem((3, 3), 0.5);
        assert!(FieldSet::new(
            vec!["S".into(), "I".into()],
            vec![a.clone(), Array2::zeros((3, 4))],
            0.0
        )
        .is_err());
        let mut fs = FieldSet::new(vec!["S".into(), "I".into()], vec![a.clone(), a], 0.0).unwrap();
        assert!(fs.check_normalized(None).is_ok());
        fs.fields[1][[0, 0]] = 1.0 + 1e-9;
        assert!(fs.check_normalized(None).is_err());
        let mut occ = Array2::from_elem((3, 3), true);
        occ[[0, 0]] = false;
        assert!(fs.check_normalized(Some(&RegionMask::new("m", occ))).is_ok());
    }

    #[test]
    fn union_and_subset() {
        let g = unit_grid(5);
        let a = RegionMask::rectangle("a", &g, (0, 2), (0, 5));
        let b = RegionMask::rectangle("b", &g, (2, 4), (0, 5));
        let u = RegionMask::union("d", &[a.clone(), b.clone()]).unwrap();
        assert_eq!(u.cell_count, 20);
        assert!(a.is_subset_of(&u) && b.is_subset_of(&u));
        assert!(!u.is_subset_of(&a));
        assert!(!a.overlaps(&b));
    }

    proptest! {
        #[test]
        fn neumann_laplacian_integrates_to_zero(
            nx in 3usize..9, ny in 3usize..9, lx in 0.5f64..20.0, ly in 0.5f64..20.0,
            seed in 0u64..1000,
        ) {
            let g = GridSpec::new(nx, ny, lx, ly).unwrap();
            let f = Array2::from_shape_fn(g.shape(), |(j, i)| {
                (((i as u64 * 31 + j as u64 * 17 + seed) * 2654435761) % 1000) as f64 / 100.0
            });
            let l = laplacian(&f, &g).unwrap();
            let integral: f64 = l.sum() * g.cell_area();
            let l1: f64 = f.iter().map(|v| v.abs()).sum();
            prop_assert!(integral.abs() <= 1e-9 * l1.max(1.0));
        }

        #[test]
        fn laplacian_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0usize..500) {
            let g = GridSpec::new(6, 5, 2.0, 1.0).unwrap();
            let f = Array2::from_shape_fn(g.shape(), |(j, i)| ((i * 7 + j * 3 + seed) % 11) as f64);
            let h = Array2::from_shape_fn(g.shape(), |(j, i)| ((i * 5 + j * 9 + seed) % 13) as f64 - 6.0);
            let lhs = laplacian(&(&f * a + &h * b), &g).unwrap();
            let rhs = laplacian(&f, &g).unwrap() * a + laplacian(&h, &g).unwrap() * b;
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn distribute_then_total_is_identity(total in 0.0f64..1e6, i1 in 1usize..7, j1 in 1usize..7) {
            let g = GridSpec::new(7, 7, 3.3, 4.4).unwrap();
            let m = RegionMask::rectangle("r", &g, (0, i1), (0, j1));
            let back = region_total(&distribute_uniform(total, &m, &g).unwrap(), &m, &g).unwrap();
            prop_assert!((back - total).abs() <= 1e-12 * total.max(1e-300));
        }
    }
}
