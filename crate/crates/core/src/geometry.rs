//! Discrete Riemannian calculus on a periodic grid.
//!
//! All first derivatives are centered second-order differences and mixed or repeated
//! derivatives are compositions of them, so every operator commutes with grid
//! translations and constant fields are annihilated exactly.
//!
//! The Laplace-Beltrami operator is the conservative form
//! `(1/sqrt|g|) D_i (sqrt|g| g^ij D_j s)`. The covariant Hessian is
//! `D_i D_j s - Gamma^k_ij D_k s` plus a pure-trace correction `g_ij c / n` that makes its
//! g-trace equal to that Laplacian to roundoff. The correction is `O(h^2)` and vanishes
//! identically on flat metrics.

use crate::error::{Error, Result};
use crate::grid::{sym_index, sym_len, PeriodicGrid, ScalarField, SymTensorField, Variance, VectorField};

/// Pointwise positive-definiteness threshold on the determinant.
pub const SPD_DET_MIN: f64 = 1e-12;

/// Inverse of a symmetric `n x n` matrix (`n <= 2`), or the failing test value if it is not SPD.
pub(crate) fn spd_inverse(n: usize, m: &[[f64; 2]; 2]) -> std::result::Result<([[f64; 2]; 2], f64), f64> {
    match n {
        1 => {
            let d = m[0][0];
            if d > SPD_DET_MIN {
                Ok(([[1.0 / d, 0.0], [0.0, 0.0]], d))
            } else {
                Err(d)
            }
        }
        _ => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if m[0][0] <= 0.0 {
                return Err(m[0][0]);
            }
            if det <= SPD_DET_MIN {
                return Err(det);
            }
            let inv = 1.0 / det;
            Ok(([[m[1][1] * inv, -m[0][1] * inv], [-m[1][0] * inv, m[0][0] * inv]], det))
        }
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a symmetric 2x2 matrix.
pub(crate) fn sym_eigen2(m: &[[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = half.hypot(b);
    let (lo, hi) = (mean - r, mean + r);
    if r == 0.0 {
        return ([lo, hi], [[1.0, 0.0], [0.0, 1.0]]);
    }
    // eigenvector of the larger eigenvalue, built from the better-conditioned row
    let (vx, vy) = if half >= 0.0 { (half + r, b) } else { (b, r - half) };
    let norm = vx.hypot(vy);
    let (vx, vy) = (vx / norm, vy / norm);
    ([lo, hi], [[-vy, vx], [vx, vy]])
}

/// Christoffel symbols `Gamma^k_ij`, symmetric in `(i, j)` by storage.
#[derive(Clone, Debug)]
pub struct Christoffel {
    n: usize,
    comps: Vec<ScalarField>,
}

impl Christoffel {
    /// `Gamma^k_ij`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> &ScalarField {
        &self.comps[k * sym_len(self.n) + sym_index(self.n, i, j)]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }
}

/// Christoffel symbols together with the Ricci tensor and scalar curvature of one metric.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub christoffel: Christoffel,
    /// `R_ij`.
    pub ricci: SymTensorField,
    /// `R = g^ij R_ij`.
    pub scalar: ScalarField,
    /// `R^ij = g^ik g^jl R_kl`.
    pub ricci_raised: SymTensorField,
}

/// A metric with its inverse, volume density and connection, ready to evaluate operators.
#[derive(Clone, Debug)]
pub struct MetricGeometry<'a> {
    grid: &'a PeriodicGrid,
    g: SymTensorField,
    ginv: SymTensorField,
    sqrt_det: ScalarField,
    christoffel: Christoffel,
}

impl<'a> MetricGeometry<'a> {
    /// Validates `g` (SPD at every point) and precomputes its inverse and connection.
    pub fn new(grid: &'a PeriodicGrid, g: &SymTensorField) -> Result<Self> {
        let n = grid.dim();
        let (ginv, sqrt_det) = invert(grid, g)?;
        let dg: Vec<Vec<ScalarField>> = (0..n)
            .map(|a| g.components().iter().map(|c| grid.diff(a, c)).collect())
            .collect();
        let ns = sym_len(n);
        let mut comps = vec![ScalarField::zeros(grid); n * ns];
        for i in 0..n {
            for j in i..n {
                // first-kind symbols Gamma_{l,ij}
                let lower: Vec<ScalarField> = (0..n)
                    .map(|l| {
                        let a = &dg[i][sym_index(n, j, l)];
                        let b = &dg[j][sym_index(n, i, l)];
                        let c = &dg[l][sym_index(n, i, j)];
                        ScalarField((0..grid.len()).map(|p| 0.5 * (a[p] + b[p] - c[p])).collect())
                    })
                    .collect();
                for k in 0..n {
                    let out = &mut comps[k * ns + sym_index(n, i, j)];
                    for (l, low) in lower.iter().enumerate() {
                        let gi = ginv.component(k, l);
                        for p in 0..grid.len() {
                            out[p] += gi[p] * low[p];
                        }
                    }
                }
            }
        }
        Ok(MetricGeometry { grid, g: g.clone(), ginv, sqrt_det, christoffel: Christoffel { n, comps } })
    }

    pub fn grid(&self) -> &'a PeriodicGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn metric(&self) -> &SymTensorField {
        &self.g
    }

    pub fn inverse(&self) -> &SymTensorField {
        &self.ginv
    }

    pub fn sqrt_det(&self) -> &ScalarField {
        &self.sqrt_det
    }

    pub fn christoffel(&self) -> &Christoffel {
        &self.christoffel
    }

    /// `Gamma^k_kj`, the trace over the upper and first lower index.
    fn gamma_trace(&self) -> Vec<ScalarField> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut acc = ScalarField::zeros(self.grid);
                for k in 0..n {
                    acc.axpy(1.0, self.christoffel.get(k, k, j));
                }
                acc
            })
            .collect()
    }

    /// Ricci tensor, scalar curvature and raised Ricci tensor.
    pub fn curvature(&self) -> CurvatureBundle {
        let n = self.dim();
        let grid = self.grid;
        let len = grid.len();
        let gt = self.gamma_trace();
        let dgt: Vec<Vec<ScalarField>> = (0..n).map(|i| gt.iter().map(|c| grid.diff(i, c)).collect()).collect();
        let ricci = SymTensorField::from_components(n, Variance::Lower, |i, j| {
            let mut r = ScalarField::zeros(grid);
            for k in 0..n {
                r.axpy(1.0, &grid.diff(k, self.christoffel.get(k, i, j)));
            }
            // -D_i Gamma^k_kj, symmetrized
            for p in 0..len {
                r[p] -= 0.5 * (dgt[i][j][p] + dgt[j][i][p]);
            }
            for l in 0..n {
                let gl = &gt[l];
                let gij = self.christoffel.get(l, i, j);
                for p in 0..len {
                    r[p] += gl[p] * gij[p];
                }
                for k in 0..n {
                    let a = self.christoffel.get(k, i, l);
                    let b = self.christoffel.get(l, k, j);
                    for p in 0..len {
                        r[p] -= a[p] * b[p];
                    }
                }
            }
            r
        });
        let scalar = self.trace(&ricci);
        // a surface's Ricci tensor is R/2 g; drop the O(h^2) trace-free part of the stencil
        let ricci = if n == 2 {
            self.metric().map_components(|c| c * &scalar).scale(0.5)
        } else {
            ricci
        };
        let ricci_raised = self.raise(&ricci);
        CurvatureBundle { christoffel: self.christoffel.clone(), ricci, scalar, ricci_raised }
    }

    /// `g^ij T_ij` for a lower tensor.
    pub fn trace(&self, t: &SymTensorField) -> ScalarField {
        let n = self.dim();
        let mut out = ScalarField::zeros(self.grid);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (self.ginv.component(i, j), t.component(i, j));
                for p in 0..self.grid.len() {
                    out[p] += a[p] * b[p];
                }
            }
        }
        out
    }

    /// `T^ij = g^ik g^jl T_kl`.
    pub fn raise(&self, t: &SymTensorField) -> SymTensorField {
        let n = self.dim();
        let mut out = SymTensorField::zeros(self.grid, Variance::Raised);
        for p in 0..self.grid.len() {
            let gi = self.ginv.at(p);
            let m = t.at(p);
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            acc += gi[i][k] * gi[j][l] * m[k][l];
                        }
                    }
                    out.component_mut(i, j)[p] = acc;
                }
            }
        }
        out
    }

    /// `g^ik g^jl S_ij T_kl` for two lower tensors.
    pub fn tensor_inner(&self, s: &SymTensorField, t: &SymTensorField) -> ScalarField {
        let n = self.dim();
        ScalarField(
            (0..self.grid.len())
                .map(|p| {
                    let (gi, a, b) = (self.ginv.at(p), s.at(p), t.at(p));
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                for l in 0..n {
                                    acc += gi[i][k] * gi[j][l] * a[i][j] * b[k][l];
                                }
                            }
                        }
                    }
                    acc
                })
                .collect(),
        )
    }

    /// `|T|^2 = g^ik g^jl T_ij T_kl`.
    pub fn tensor_norm2(&self, t: &SymTensorField) -> ScalarField {
        self.tensor_inner(t, t)
    }

    /// Raises a covector: `v^i = g^ij v_j`. Raised input is returned unchanged.
    pub fn raise_vector(&self, v: &VectorField) -> VectorField {
        if v.variance == Variance::Raised {
            return v.clone();
        }
        let n = self.dim();
        let comps = (0..n)
            .map(|i| {
                let mut c = ScalarField::zeros(self.grid);
                for j in 0..n {
                    let gi = self.ginv.component(i, j);
                    for p in 0..self.grid.len() {
                        c[p] += gi[p] * v.components[j][p];
                    }
                }
                c
            })
            .collect();
        VectorField::new(comps, Variance::Raised)
    }

    /// Lowers a vector: `v_i = g_ij v^j`. Lower input is returned unchanged.
    pub fn lower_vector(&self, v: &VectorField) -> VectorField {
        if v.variance == Variance::Lower {
            return v.clone();
        }
        let n = self.dim();
        let comps = (0..n)
            .map(|i| {
                let mut c = ScalarField::zeros(self.grid);
                for j in 0..n {
                    let gc = self.g.component(i, j);
                    for p in 0..self.grid.len() {
                        c[p] += gc[p] * v.components[j][p];
                    }
                }
                c
            })
            .collect();
        VectorField::new(comps, Variance::Lower)
    }

    /// `g(v, w)` for vectors of any variance.
    pub fn inner(&self, v: &VectorField, w: &VectorField) -> ScalarField {
        let n = self.dim();
        let (v_lo, w_up) = (self.lower_vector(v), self.raise_vector(w));
        let mut out = ScalarField::zeros(self.grid);
        for i in 0..n {
            for p in 0..self.grid.len() {
                out[p] += v_lo.components[i][p] * w_up.components[i][p];
            }
        }
        out
    }

    /// `T(v, w) = T_ij v^i w^j` for a lower tensor and vectors of any variance.
    pub fn contract(&self, t: &SymTensorField, v: &VectorField, w: &VectorField) -> ScalarField {
        let n = self.dim();
        let (v, w) = (self.raise_vector(v), self.raise_vector(w));
        let mut out = ScalarField::zeros(self.grid);
        for i in 0..n {
            for j in 0..n {
                let tc = t.component(i, j);
                for p in 0..self.grid.len() {
                    out[p] += tc[p] * v.components[i][p] * w.components[j][p];
                }
            }
        }
        out
    }

    /// Covariant gradient `D_i s` (lower).
    pub fn gradient(&self, s: &ScalarField) -> VectorField {
        VectorField::new(self.grid.diff_all(s), Variance::Lower)
    }

    /// `|grad s|^2 = g^ij D_i s D_j s`.
    pub fn grad_norm2(&self, s: &ScalarField) -> ScalarField {
        let ds = self.gradient(s);
        self.inner(&ds, &ds)
    }

    /// `g(grad a, grad b)`.
    pub fn grad_dot(&self, a: &ScalarField, b: &ScalarField) -> ScalarField {
        self.inner(&self.gradient(a), &self.gradient(b))
    }

    /// Conservative Laplace-Beltrami operator.
    pub fn laplacian(&self, s: &ScalarField) -> ScalarField {
        let n = self.dim();
        let len = self.grid.len();
        let ds = self.grid.diff_all(s);
        let mut out = ScalarField::zeros(self.grid);
        for i in 0..n {
            let mut flux = ScalarField::zeros(self.grid);
            for j in 0..n {
                let gi = self.ginv.component(i, j);
                for p in 0..len {
                    flux[p] += self.sqrt_det[p] * gi[p] * ds[j][p];
                }
            }
            out.axpy(1.0, &self.grid.diff(i, &flux));
        }
        for p in 0..len {
            out[p] /= self.sqrt_det[p];
        }
        out
    }

    /// Covariant Hessian `nabla_i nabla_j s` whose g-trace is [`Self::laplacian`].
    pub fn hessian(&self, s: &ScalarField) -> SymTensorField {
        let n = self.dim();
        let len = self.grid.len();
        let ds = self.grid.diff_all(s);
        let mut h = SymTensorField::from_components(n, Variance::Lower, |i, j| {
            let mut c = self.grid.diff(i, &ds[j]);
            for (k, dk) in ds.iter().enumerate() {
                let gam = self.christoffel.get(k, i, j);
                for p in 0..len {
                    c[p] -= gam[p] * dk[p];
                }
            }
            c
        });
        let defect = &self.laplacian(s) - &self.trace(&h);
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for j in i..n {
                let gc = self.g.component(i, j);
                let hc = h.component_mut(i, j);
                for p in 0..len {
                    hc[p] += inv_n * gc[p] * defect[p];
                }
            }
        }
        h
    }

    /// Covariant divergence `nabla^i S_il` of a lower symmetric tensor (a covector in `l`).
    pub fn divergence(&self, s: &SymTensorField) -> VectorField {
        let n = self.dim();
        let len = self.grid.len();
        // D_k S_il for every k and storage slot
        let ds: Vec<Vec<ScalarField>> = (0..n)
            .map(|k| s.components().iter().map(|c| self.grid.diff(k, c)).collect())
            .collect();
        let comps = (0..n)
            .map(|l| {
                let mut out = ScalarField::zeros(self.grid);
                for i in 0..n {
                    for k in 0..n {
                        let gik = self.ginv.component(i, k);
                        let d = &ds[k][sym_index(n, i, l)];
                        for p in 0..len {
                            let mut cov = d[p];
                            for m in 0..n {
                                cov -= self.christoffel.get(m, k, i)[p] * s.component(m, l)[p]
                                    + self.christoffel.get(m, k, l)[p] * s.component(i, m)[p];
                            }
                            out[p] += gik[p] * cov;
                        }
                    }
                }
                out
            })
            .collect();
        VectorField::new(comps, Variance::Lower)
    }

    /// `2 nabla^i S_il - nabla_l S`, computed as `2 div(S - S g/n) + (2/n - 1) grad S` so the
    /// pure-trace part cancels exactly instead of through the discrete product rule.
    pub fn bianchi_defect(&self, s: &SymTensorField) -> VectorField {
        let n = self.dim();
        let tr = self.trace(s);
        let mut free = s.clone();
        free.axpy(-1.0 / n as f64, &self.metric().map_components(|c| c * &tr));
        let div = self.divergence(&free);
        let grad = self.gradient(&tr);
        let k = 2.0 / n as f64 - 1.0;
        VectorField::new(
            div.components.iter().zip(&grad.components).map(|(d, g)| d.zip_map(g, |d, g| 2.0 * d + k * g)).collect(),
            Variance::Lower,
        )
    }

    /// Smallest eigenvalue of `T` relative to `g`, i.e. of `g^-1 T`, pointwise.
    pub fn min_relative_eigenvalue(&self, t: &SymTensorField) -> ScalarField {
        ScalarField((0..self.grid.len()).map(|p| relative_eigen(self.dim(), &self.g.at(p), &t.at(p)).0[0]).collect())
    }

    /// `2 <grad Lap u, grad u> - Lap |grad u|^2 + 2 Ric(grad u, grad u) + 2 |Hess u|^2`.
    pub fn bochner_residual(&self, u: &ScalarField, ricci: &SymTensorField) -> ScalarField {
        let lap = self.laplacian(u);
        let du = self.gradient(u);
        let cross = self.grad_dot(&lap, u);
        let lap_grad = self.laplacian(&self.grad_norm2(u));
        let ric = self.contract(ricci, &du, &du);
        let hess2 = self.tensor_norm2(&self.hessian(u));
        ScalarField(
            (0..self.grid.len())
                .map(|p| 2.0 * cross[p] - lap_grad[p] + 2.0 * ric[p] + 2.0 * hess2[p])
                .collect(),
        )
    }
}

/// Cholesky factor `L` (lower, `L L^T = g`) of a 2x2 SPD matrix, or 1x1.
pub(crate) fn cholesky2(n: usize, g: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l00 = g[0][0].sqrt();
    if n == 1 {
        return [[l00, 0.0], [0.0, 0.0]];
    }
    let l10 = g[1][0] / l00;
    let l11 = (g[1][1] - l10 * l10).sqrt();
    [[l00, 0.0], [l10, l11]]
}

/// Eigen-decomposition of `T` relative to `g`: eigenvalues ascending, eigenvectors as columns
/// in the g-orthonormal frame `Y = L^T X`. Returns the transformed matrix too.
pub(crate) fn relative_eigen(n: usize, g: &[[f64; 2]; 2], t: &[[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    if n == 1 {
        return ([t[0][0] / g[0][0], f64::INFINITY], [[1.0, 0.0], [0.0, 1.0]]);
    }
    let tt = to_orthonormal(g, t);
    sym_eigen2(&tt)
}

/// `L^-1 T L^-T` for the Cholesky factor of `g` (2x2).
pub(crate) fn to_orthonormal(g: &[[f64; 2]; 2], t: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l = cholesky2(2, g);
    // L^-1 for lower-triangular L
    let li = [[1.0 / l[0][0], 0.0], [-l[1][0] / (l[0][0] * l[1][1]), 1.0 / l[1][1]]];
    let mut a = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for m in 0..2 {
                    a[i][j] += li[i][k] * t[k][m] * li[j][m];
                }
            }
        }
    }
    a[0][1] = 0.5 * (a[0][1] + a[1][0]);
    a[1][0] = a[0][1];
    a
}

fn invert(grid: &PeriodicGrid, g: &SymTensorField) -> Result<(SymTensorField, ScalarField)> {
    let n = grid.dim();
    if g.dim() != n {
        return Err(Error::InvalidGrid(format!("metric has dimension {} on a {n}-dimensional grid", g.dim())));
    }
    let mut ginv = SymTensorField::zeros(grid, Variance::Raised);
    let mut sqrt_det = ScalarField::zeros(grid);
    for p in 0..grid.len() {
        let m = g.at(p);
        let (inv, det) = spd_inverse(n, &m).map_err(|value| Error::NonSpdMetric { point: p, value })?;
        for i in 0..n {
            for j in i..n {
                ginv.component_mut(i, j)[p] = inv[i][j];
            }
        }
        sqrt_det[p] = det.sqrt();
    }
    Ok((ginv, sqrt_det))
}

/// Pointwise inverse metric `g^ij`.
pub fn inverse_metric(grid: &PeriodicGrid, g: &SymTensorField) -> Result<SymTensorField> {
    invert(grid, g).map(|(inv, _)| inv)
}

/// Christoffel symbols of the second kind.
pub fn christoffel(grid: &PeriodicGrid, g: &SymTensorField) -> Result<Christoffel> {
    Ok(MetricGeometry::new(grid, g)?.christoffel)
}

/// Full curvature bundle of `g`.
pub fn ricci(grid: &PeriodicGrid, g: &SymTensorField) -> Result<CurvatureBundle> {
    Ok(MetricGeometry::new(grid, g)?.curvature())
}

pub fn laplace_beltrami(grid: &PeriodicGrid, g: &SymTensorField, s: &ScalarField) -> Result<ScalarField> {
    Ok(MetricGeometry::new(grid, g)?.laplacian(s))
}

pub fn gradient(grid: &PeriodicGrid, g: &SymTensorField, s: &ScalarField) -> Result<VectorField> {
    Ok(MetricGeometry::new(grid, g)?.gradient(s))
}

pub fn hessian(grid: &PeriodicGrid, g: &SymTensorField, s: &ScalarField) -> Result<SymTensorField> {
    Ok(MetricGeometry::new(grid, g)?.hessian(s))
}

pub fn grad_norm2(grid: &PeriodicGrid, g: &SymTensorField, s: &ScalarField) -> Result<ScalarField> {
    Ok(MetricGeometry::new(grid, g)?.grad_norm2(s))
}

pub fn div_2tensor(grid: &PeriodicGrid, g: &SymTensorField, s: &SymTensorField) -> Result<VectorField> {
    Ok(MetricGeometry::new(grid, g)?.divergence(s))
}

pub fn tensor_norm2(grid: &PeriodicGrid, g: &SymTensorField, s: &SymTensorField) -> Result<ScalarField> {
    Ok(MetricGeometry::new(grid, g)?.tensor_norm2(s))
}

pub fn bochner_residual(grid: &PeriodicGrid, g: &SymTensorField, u: &ScalarField) -> Result<ScalarField> {
    let geo = MetricGeometry::new(grid, g)?;
    let curv = geo.curvature();
    Ok(geo.bochner_residual(u, &curv.ricci))
}

/// Conformal metric `e^{2 phi} delta`.
pub fn conformal_metric(grid: &PeriodicGrid, phi: &ScalarField) -> SymTensorField {
    let n = grid.dim();
    SymTensorField::from_components(n, Variance::Lower, |i, j| {
        if i == j {
            phi.map(|x| (2.0 * x).exp())
        } else {
            ScalarField::zeros(grid)
        }
    })
}
