//! Uniform periodic grids on flat tori and the discrete field types that live on them.
//!
//! Points are stored in lexicographic order with axis 0 fastest. Every reduction in
//! this crate walks points in that order, so results are bit-reproducible.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smallest number of points allowed along any axis.
pub const MIN_POINTS_PER_AXIS: usize = 8;

/// A uniform periodic grid on the torus `[0, L_0) x ... x [0, L_{n-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicGrid {
    points: Vec<usize>,
    periods: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
}

impl PeriodicGrid {
    /// Builds a grid with `points[a]` samples over period `periods[a]` on axis `a`.
    pub fn new(points: &[usize], periods: &[f64]) -> Result<Self> {
        let dim = points.len();
        if !(1..=2).contains(&dim) || periods.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2 with one period per axis (got {dim} axes, {} periods)",
                periods.len()
            )));
        }
        if let Some(&n) = points.iter().find(|&&n| n < MIN_POINTS_PER_AXIS) {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_POINTS_PER_AXIS} points per axis, got {n}"
            )));
        }
        if let Some(&l) = periods.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidGrid(format!("period must be positive, got {l}")));
        }
        let spacing: Vec<f64> = points.iter().zip(periods).map(|(&n, &l)| l / n as f64).collect();
        let mut strides = Vec::with_capacity(dim);
        let mut len = 1;
        for &n in points {
            strides.push(len);
            len *= n;
        }
        let mut grid = PeriodicGrid {
            points: points.to_vec(),
            periods: periods.to_vec(),
            spacing,
            strides,
            len,
            plus: Vec::new(),
            minus: Vec::new(),
        };
        grid.plus = (0..dim).map(|a| (0..len).map(|p| grid.shift(p, a, 1)).collect()).collect();
        grid.minus = (0..dim).map(|a| (0..len).map(|p| grid.shift(p, a, -1)).collect()).collect();
        Ok(grid)
    }

    /// Square grid with `n` points and period `period` on every one of `dim` axes.
    pub fn uniform(dim: usize, n: usize, period: f64) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![period; dim])
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Smallest spacing over all axes.
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Multi-index of point `p`.
    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        self.points.iter().zip(&self.strides).map(|(&n, &s)| (p / s) % n).collect()
    }

    /// Flat index of a multi-index; each component is wrapped modulo its axis length.
    pub fn flat_index(&self, idx: &[isize]) -> usize {
        idx.iter()
            .zip(&self.points)
            .zip(&self.strides)
            .map(|((&i, &n), &s)| (i.rem_euclid(n as isize) as usize) * s)
            .sum()
    }

    /// Coordinates of point `p`.
    pub fn coords(&self, p: usize) -> Vec<f64> {
        self.multi_index(p).iter().zip(&self.spacing).map(|(&i, &h)| i as f64 * h).collect()
    }

    /// Point reached from `p` by `steps` moves along `axis`, wrapping periodically.
    pub fn shift(&self, p: usize, axis: usize, steps: isize) -> usize {
        let n = self.points[axis] as isize;
        let s = self.strides[axis];
        let i = ((p / s) as isize) % n;
        let j = (i + steps).rem_euclid(n);
        (p as isize + (j - i) * s as isize) as usize
    }

    /// Centered second-order difference along `axis`.
    pub fn diff(&self, axis: usize, s: &ScalarField) -> ScalarField {
        let inv = 0.5 / self.spacing[axis];
        let (plus, minus) = (&self.plus[axis], &self.minus[axis]);
        let v = s.values();
        ScalarField((0..self.len).map(|p| (v[plus[p]] - v[minus[p]]) * inv).collect())
    }

    /// Centered differences along every axis.
    pub fn diff_all(&self, s: &ScalarField) -> Vec<ScalarField> {
        (0..self.dim()).map(|a| self.diff(a, s)).collect()
    }

    /// Discrete integral `sum_p s(p) * cell volume`.
    pub fn integrate(&self, s: &ScalarField) -> f64 {
        let vol: f64 = self.spacing.iter().product();
        s.sum() * vol
    }

    /// Periodic multilinear interpolation of `s` at an arbitrary coordinate.
    pub fn interpolate(&self, s: &ScalarField, x: &[f64]) -> f64 {
        let dim = self.dim();
        let mut base = vec![0isize; dim];
        let mut frac = vec![0.0; dim];
        for a in 0..dim {
            let xi = x[a] / self.spacing[a];
            let fl = xi.floor();
            base[a] = fl as isize;
            frac[a] = xi - fl;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for a in 0..dim {
                if corner >> a & 1 == 1 {
                    idx[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            acc += w * s[self.flat_index(&idx)];
        }
        acc
    }
}

/// Number of independent components of a symmetric `n x n` tensor.
pub fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Storage slot of component `(i, j)` of a symmetric tensor; `(i, j)` and `(j, i)` share a slot.
pub fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// One real value per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField(pub(crate) Vec<f64>);

impl ScalarField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        ScalarField(vec![0.0; grid.len()])
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        ScalarField(vec![c; grid.len()])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ScalarField(values)
    }

    /// Samples `f` at every grid point's coordinates.
    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        ScalarField((0..grid.len()).map(|p| f(&grid.coords(p))).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField(self.0.iter().zip(&other.0).map(|(&x, &y)| f(x, y)).collect())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += c * y;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest value and the first point (in lexicographic order) attaining it.
    pub fn argmin(&self) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (p, &x) in self.0.iter().enumerate() {
            if x < best.1 {
                best = (p, x);
            }
        }
        best
    }

    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (p, &x) in self.0.iter().enumerate() {
            if x > best.1 {
                best = (p, x);
            }
        }
        best
    }

    /// Largest absolute value (L-infinity norm).
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Root-mean-square value.
    pub fn rms(&self) -> f64 {
        (self.0.iter().map(|x| x * x).sum::<f64>() / self.0.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// First point holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|x| !x.is_finite())
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, p: usize) -> &f64 {
        &self.0[p]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, p: usize) -> &mut f64 {
        &mut self.0[p]
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<&ScalarField> for f64 {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        rhs.scale(self)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|x| -x)
    }
}

/// Whether a vector or tensor field carries lower (covariant) or raised (contravariant) indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variance {
    Lower,
    Raised,
}

/// `n` components per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub components: Vec<ScalarField>,
    pub variance: Variance,
}

impl VectorField {
    pub fn zeros(grid: &PeriodicGrid, variance: Variance) -> Self {
        VectorField { components: vec![ScalarField::zeros(grid); grid.dim()], variance }
    }

    pub fn new(components: Vec<ScalarField>, variance: Variance) -> Self {
        VectorField { components, variance }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Components at point `p`.
    pub fn at(&self, p: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c[p];
        }
        out
    }

    pub fn scale(&self, c: f64) -> Self {
        VectorField {
            components: self.components.iter().map(|f| f.scale(c)).collect(),
            variance: self.variance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }
}

/// A symmetric 2-tensor stored as its `n(n+1)/2` independent components, so symmetry is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    n: usize,
    components: Vec<ScalarField>,
    pub variance: Variance,
}

impl SymTensorField {
    pub fn zeros(grid: &PeriodicGrid, variance: Variance) -> Self {
        let n = grid.dim();
        SymTensorField { n, components: vec![ScalarField::zeros(grid); sym_len(n)], variance }
    }

    /// The identity `delta_ij` at every point.
    pub fn identity(grid: &PeriodicGrid, variance: Variance) -> Self {
        let mut t = Self::zeros(grid, variance);
        for i in 0..t.n {
            *t.component_mut(i, i) = ScalarField::constant(grid, 1.0);
        }
        t
    }

    /// Builds a tensor from its components; `f(i, j)` is only called with `i <= j`.
    pub fn from_components(n: usize, variance: Variance, mut f: impl FnMut(usize, usize) -> ScalarField) -> Self {
        let mut components = Vec::with_capacity(sym_len(n));
        for i in 0..n {
            for j in i..n {
                components.push(f(i, j));
            }
        }
        SymTensorField { n, components, variance }
    }

    /// Pointwise construction from a closure returning the full matrix at each point.
    pub fn from_pointwise(
        grid: &PeriodicGrid,
        variance: Variance,
        f: impl Fn(usize) -> [[f64; 2]; 2],
    ) -> Self {
        let n = grid.dim();
        let mut t = Self::zeros(grid, variance);
        for p in 0..grid.len() {
            let m = f(p);
            for i in 0..n {
                for j in i..n {
                    t.component_mut(i, j)[p] = m[i][j];
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn component(&self, i: usize, j: usize) -> &ScalarField {
        &self.components[sym_index(self.n, i, j)]
    }

    pub fn component_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.components[sym_index(self.n, i, j)]
    }

    /// Independent components in storage order.
    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.components
    }

    /// Full matrix at point `p` (unused entries are zero).
    pub fn at(&self, p: usize) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for i in 0..self.n {
            for j in 0..self.n {
                m[i][j] = self.component(i, j)[p];
            }
        }
        m
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        SymTensorField { n: self.n, components: self.components.iter().map(f).collect(), variance: self.variance }
    }

    pub fn zip_components(&self, other: &SymTensorField, f: impl Fn(&ScalarField, &ScalarField) -> ScalarField) -> Self {
        SymTensorField {
            n: self.n,
            components: self.components.iter().zip(&other.components).map(|(a, b)| f(a, b)).collect(),
            variance: self.variance,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_components(|f| f.scale(c))
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &SymTensorField) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.axpy(c, b);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(ScalarField::is_finite)
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.components.iter().filter_map(ScalarField::first_non_finite).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_index_layout() {
        assert_eq!(sym_index(1, 0, 0), 0);
        assert_eq!(sym_index(2, 0, 0), 0);
        assert_eq!(sym_index(2, 0, 1), 1);
        assert_eq!(sym_index(2, 1, 0), 1);
        assert_eq!(sym_index(2, 1, 1), 2);
        let mut seen = vec![];
        for i in 0..3 {
            for j in i..3 {
                seen.push(sym_index(3, i, j));
            }
        }
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(PeriodicGrid::uniform(2, 4, 1.0).is_err());
        assert!(PeriodicGrid::uniform(3, 8, 1.0).is_err());
        assert!(PeriodicGrid::uniform(2, 8, 0.0).is_err());
        assert!(PeriodicGrid::new(&[8, 8], &[1.0]).is_err());
    }

    #[test]
    fn wrapping_is_exact() {
        let g = PeriodicGrid::new(&[8, 10], &[1.0, 2.0]).unwrap();
        assert_eq!(g.len(), 80);
        for p in 0..g.len() {
            assert_eq!(g.shift(g.shift(p, 0, 1), 0, -1), p);
            assert_eq!(g.shift(p, 1, 10), p);
            assert_eq!(g.shift(p, 0, -8), p);
            let mi = g.multi_index(p);
            assert_eq!(g.flat_index(&[mi[0] as isize + 8, mi[1] as isize - 10]), p);
        }
        assert_eq!(g.multi_index(g.shift(0, 0, -1)), vec![7, 0]);
    }

    #[test]
    fn diff_of_constant_is_exactly_zero() {
        let g = PeriodicGrid::uniform(2, 16, 1.0).unwrap();
        let c = ScalarField::constant(&g, 3.7);
        assert!(g.diff(0, &c).values().iter().all(|&x| x == 0.0));
        assert!(g.diff(1, &c).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diff_is_second_order() {
        let err = |n: usize| {
            let g = PeriodicGrid::uniform(1, n, 1.0).unwrap();
            let s = ScalarField::from_fn(&g, |x| (std::f64::consts::TAU * x[0]).sin());
            let exact = ScalarField::from_fn(&g, |x| std::f64::consts::TAU * (std::f64::consts::TAU * x[0]).cos());
            (&g.diff(0, &s) - &exact).max_abs()
        };
        let ratio = err(32) / err(64);
        assert!((3.9..4.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn interpolation_reproduces_grid_values_and_linear_functions() {
        let g = PeriodicGrid::uniform(2, 8, 1.0).unwrap();
        let s = ScalarField::from_fn(&g, |x| (std::f64::consts::TAU * x[0]).sin() + x[1]);
        for p in 0..g.len() {
            assert!((g.interpolate(&s, &g.coords(p)) - s[p]).abs() < 1e-14);
        }
        let lin = ScalarField::from_fn(&g, |x| x[0]);
        assert!((g.interpolate(&lin, &[0.3, 0.55]) - 0.3).abs() < 1e-14);
        // wraps across the periodic seam
        let v = g.interpolate(&s, &[1.0 + 0.125, 0.25]);
        assert!((v - g.interpolate(&s, &[0.125, 0.25])).abs() < 1e-14);
    }
}
