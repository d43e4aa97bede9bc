//! Error terms, Harnack quantities and numerical checks of the differential Harnack theorems.
//!
//! `tau_j` refers to heat index `j` (snapshot `K - j` of the flow). Time derivatives of `S`
//! are centered differences of stored snapshots; `d/dtau = -d/dt`.

use std::fmt;
use std::str::FromStr;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flows::{FlowTrajectory, Snapshot, Variant};
use crate::geometry::{cholesky2, relative_eigen, sym_eigen2, to_orthonormal, MetricGeometry};
use crate::grid::{PeriodicGrid, ScalarField, SymTensorField, VectorField};
use crate::heat::{HeatParams, HeatSolution};

/// Default multiplier of the discretization slack `kappa (h^2 + dt) scale`.
pub const DEFAULT_KAPPA: f64 = 10.0;

/// First checked `tau` in units of `dt`.
pub const DEFAULT_TAU_MIN_STEPS: usize = 5;

/// Constants of the general Harnack quantities and error terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarnackParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub lambda: f64,
}

impl HarnackParams {
    /// `(alpha, beta, a, b, d)` with `c = -a` and `lambda = 2`.
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64, d: f64) -> Self {
        HarnackParams { alpha, beta, a, b, c: -a, d, lambda: 2.0 }
    }

    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.alpha == self.beta {
            return Err(Error::DegenerateParams(format!("alpha = beta = {}", self.alpha)));
        }
        Ok(())
    }
}

/// Pointwise data of an error term `E(X) = C - B_l X^l - 2 Q(X, X)`.
#[derive(Clone, Debug)]
pub struct ErrorTerm {
    pub constant: ScalarField,
    /// Lower-index coefficient `B_l` of `X^l`.
    pub linear: VectorField,
    /// Lower-index quadratic form `Q_kl`.
    pub quadratic: SymTensorField,
    metric: SymTensorField,
}

/// Supremum of an error term over all vectors at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSup {
    pub value: f64,
    pub bounded: bool,
    /// Contravariant maximizer when bounded.
    pub argmax: Option<[f64; 2]>,
}

/// Tolerances of the pointwise supremum: eigenvalues of the g-normalized form with
/// `|mu| <= eig` count as null, and linear components with `|b| <= lin` are treated as
/// discretization noise and dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupTolerance {
    pub eig: f64,
    pub lin: f64,
}

impl Default for SupTolerance {
    fn default() -> Self {
        SupTolerance { eig: 1e-12, lin: 0.0 }
    }
}

/// `sup_X c + b.X - X^T q X` over contravariant `X`, with norms taken in `g`.
pub fn quadratic_sup(n: usize, g: &[[f64; 2]; 2], c: f64, b: [f64; 2], q: &[[f64; 2]; 2], tol: SupTolerance) -> PointSup {
    let l = cholesky2(n, g);
    // b~ = L^-1 b, q~ = L^-1 q L^-T
    let (bt, eig, vecs) = if n == 1 {
        let b0 = b[0] / l[0][0];
        ([b0, 0.0], [q[0][0] / g[0][0], f64::INFINITY], [[1.0, 0.0], [0.0, 1.0]])
    } else {
        let b0 = b[0] / l[0][0];
        let b1 = (b[1] - l[1][0] * b0) / l[1][1];
        let (mu, v) = sym_eigen2(&to_orthonormal(g, q));
        ([b0, b1], mu, v)
    };
    let mut value = c;
    let mut y = [0.0; 2];
    for k in 0..n {
        let e = [vecs[0][k], vecs[1][k]];
        let bk = e[0] * bt[0] + e[1] * bt[1];
        let mu = eig[k];
        if mu < -tol.eig {
            return PointSup { value: f64::INFINITY, bounded: false, argmax: None };
        }
        if bk.abs() <= tol.lin {
            continue;
        }
        if mu <= tol.eig {
            return PointSup { value: f64::INFINITY, bounded: false, argmax: None };
        }
        value += bk * bk / (4.0 * mu);
        let s = bk / (2.0 * mu);
        y[0] += s * e[0];
        y[1] += s * e[1];
    }
    // X = L^-T Y
    let x = if n == 1 {
        [y[0] / l[0][0], 0.0]
    } else {
        let x1 = y[1] / l[1][1];
        [(y[0] - l[1][0] * x1) / l[0][0], x1]
    };
    PointSup { value, bounded: true, argmax: Some(x) }
}

/// Pointwise supremum field with its boundedness flags.
#[derive(Clone, Debug)]
pub struct SupField {
    /// `+inf` where unbounded.
    pub value: ScalarField,
    pub bounded: Vec<bool>,
}

impl SupField {
    pub fn all_bounded(&self) -> bool {
        self.bounded.iter().all(|&b| b)
    }

    pub fn unbounded_count(&self) -> usize {
        self.bounded.iter().filter(|&&b| !b).count()
    }

    /// Largest value over bounded points.
    pub fn max_bounded(&self) -> f64 {
        self.value
            .values()
            .iter()
            .zip(&self.bounded)
            .filter(|(_, &b)| b)
            .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v))
    }
}

impl ErrorTerm {
    pub fn new(constant: ScalarField, linear: VectorField, quadratic: SymTensorField, metric: SymTensorField) -> Self {
        ErrorTerm { constant, linear, quadratic, metric }
    }

    /// `E(X)` for a vector field of any variance.
    pub fn evaluate(&self, geo: &MetricGeometry<'_>, x: &VectorField) -> ScalarField {
        let xu = geo.raise_vector(x);
        let n = geo.dim();
        let q = self.quadratic.clone();
        let quad = geo.contract(&q, &xu, &xu);
        let mut out = self.constant.clone();
        for l in 0..n {
            for p in 0..out.len() {
                out[p] -= self.linear.components[l][p] * xu.components[l][p];
            }
        }
        out.axpy(-2.0, &quad);
        out
    }

    /// Exact pointwise supremum over `X`.
    pub fn sup(&self, tol: SupTolerance) -> SupField {
        let n = self.metric.dim();
        let len = self.constant.len();
        let mut value = ScalarField::from_vec(vec![0.0; len]);
        let mut bounded = vec![true; len];
        for p in 0..len {
            let q = self.quadratic.at(p);
            let q2 = [[2.0 * q[0][0], 2.0 * q[0][1]], [2.0 * q[1][0], 2.0 * q[1][1]]];
            let lin = self.linear.at(p);
            let s = quadratic_sup(n, &self.metric.at(p), self.constant[p], [-lin[0], -lin[1]], &q2, tol);
            value[p] = s.value;
            bounded[p] = s.bounded;
        }
        SupField { value, bounded }
    }

    /// Pointwise norm `|B|_g` of the linear coefficient.
    pub fn linear_norm(&self, geo: &MetricGeometry<'_>) -> ScalarField {
        geo.inner(&self.linear, &self.linear).map(f64::sqrt)
    }
}

/// `2 nabla^i S_il - nabla_l S` (lower).
fn bianchi_defect(snap: &Snapshot<'_>) -> VectorField {
    snap.geometry.bianchi_defect(&snap.s_tensor)
}

/// Pointwise size of the terms making up the Bianchi defect, `2|div S| + |grad S|`.
fn bianchi_scale(snap: &Snapshot<'_>) -> ScalarField {
    let geo = &snap.geometry;
    let div = geo.divergence(&snap.s_tensor);
    let a = geo.inner(&div, &div).map(f64::sqrt);
    let b = geo.grad_norm2(&snap.s).map(f64::sqrt);
    a.zip_map(&b, |a, b| 2.0 * a + b)
}

/// General error term with the given constants, using `dS/dtau` supplied by the caller.
pub fn error_term_general(snap: &Snapshot<'_>, s_tau: &ScalarField, p: &HarnackParams) -> Result<ErrorTerm> {
    p.require_nondegenerate()?;
    let geo = &snap.geometry;
    let lap_s = geo.laplacian(&snap.s);
    let s2 = geo.tensor_norm2(&snap.s_tensor);
    let k = p.alpha * p.alpha / (2.0 * (p.alpha - p.beta));
    let constant = ScalarField::from_vec(
        (0..s2.len())
            .map(|i| p.a * s_tau[i] - (p.a + p.alpha * p.c) * lap_s[i] + k * s2[i])
            .collect(),
    );
    let linear = bianchi_defect(snap).scale(p.alpha);
    let ric = &snap.curvature.ricci;
    let quadratic = ric.zip_components(&snap.s_tensor, |r, s| {
        r.zip_map(s, |r, s| p.alpha * r - p.beta * (r + s))
    });
    Ok(ErrorTerm::new(constant, linear, quadratic, geo.metric().clone()))
}

/// `E_a = (a dS/dtau + a Lap S + 2|S|^2) - 2 B.X - 2 (R - S)(X, X)`.
pub fn error_term_a(snap: &Snapshot<'_>, s_tau: &ScalarField, a: f64) -> ErrorTerm {
    let geo = &snap.geometry;
    let lap_s = geo.laplacian(&snap.s);
    let s2 = geo.tensor_norm2(&snap.s_tensor);
    let constant = ScalarField::from_vec((0..s2.len()).map(|i| a * s_tau[i] + a * lap_s[i] + 2.0 * s2[i]).collect());
    let linear = bianchi_defect(snap).scale(2.0);
    let quadratic = snap.curvature.ricci.zip_components(&snap.s_tensor, |r, s| r - s);
    ErrorTerm::new(constant, linear, quadratic, geo.metric().clone())
}

/// Centered `dS/dtau` at heat index `j` from the neighbouring snapshots.
pub fn s_tau_derivative(traj: &FlowTrajectory, j: usize) -> Result<ScalarField> {
    let last = traj.last();
    if j == 0 || j >= last {
        return Err(Error::BoundaryTime { index: j, last });
    }
    let ahead = traj.s_scalar(traj.index_of_tau(j + 1))?;
    let behind = traj.s_scalar(traj.index_of_tau(j - 1))?;
    let dt = traj.dt();
    Ok(ahead.zip_map(&behind, |a, b| (a - b) / (2.0 * dt)))
}

/// `E_a(S, X)` at heat index `j`.
pub fn eval_e_a(traj: &FlowTrajectory, j: usize, x: &VectorField, a: f64) -> Result<ScalarField> {
    let s_tau = s_tau_derivative(traj, j)?;
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    Ok(error_term_a(&snap, &s_tau, a).evaluate(&snap.geometry, x))
}

/// General `E_(a, c, alpha, beta)(S, X)` at heat index `j`.
pub fn eval_e_general(traj: &FlowTrajectory, j: usize, x: &VectorField, params: &HarnackParams) -> Result<ScalarField> {
    params.require_nondegenerate()?;
    let s_tau = s_tau_derivative(traj, j)?;
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    Ok(error_term_general(&snap, &s_tau, params)?.evaluate(&snap.geometry, x))
}

/// Pointwise `sup_X E_a(S, X)` at heat index `j`.
pub fn sup_e_over_x(traj: &FlowTrajectory, j: usize, a: f64, tol: SupTolerance) -> Result<SupField> {
    let s_tau = s_tau_derivative(traj, j)?;
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    Ok(error_term_a(&snap, &s_tau, a).sup(tol))
}

/// `alpha Lap u - beta |grad u|^2 + a S + b u / tau + d n / tau` for a given `u`.
pub fn harnack_quantity(geo: &MetricGeometry<'_>, s: &ScalarField, u: &ScalarField, tau: f64, p: &HarnackParams) -> ScalarField {
    let lap = geo.laplacian(u);
    let g2 = geo.grad_norm2(u);
    let n = geo.dim() as f64;
    ScalarField::from_vec(
        (0..u.len())
            .map(|i| p.alpha * lap[i] - p.beta * g2[i] + p.a * s[i] + p.b * u[i] / tau + p.d * n / tau)
            .collect(),
    )
}

/// `H_S` built from `u = -log f` at heat index `j`.
pub fn eval_h_s(traj: &FlowTrajectory, sol: &HeatSolution, j: usize, params: &HarnackParams) -> Result<ScalarField> {
    if j == 0 {
        return Err(Error::BoundaryTime { index: 0, last: sol.last() });
    }
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    Ok(harnack_quantity(&snap.geometry, &snap.s, &sol.u(j)?, sol.tau(j), params))
}

/// `P_S` built from `v = -log f - w(tau)` at heat index `j`.
pub fn eval_p_s(traj: &FlowTrajectory, sol: &HeatSolution, j: usize, params: &HarnackParams) -> Result<ScalarField> {
    if j == 0 {
        return Err(Error::BoundaryTime { index: 0, last: sol.last() });
    }
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    Ok(harnack_quantity(&snap.geometry, &snap.s, &sol.v(j)?, sol.tau(j), params))
}

/// The differential Harnack theorems that can be checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TheoremId {
    /// `2 Lap log f + |grad log f|^2 - 2S + 2n/tau + n/2 >= 0` (`gamma = 1, a = 2`).
    A1,
    /// `2 Lap log f + |grad log f|^2 - S + 2n/tau + n/4 >= 0` (`gamma = 1, a = 1`, `S >= 0`).
    A2,
    /// `... - S + 3n/tau + n/4 >= 0` on the second half of the flow.
    Aa,
    /// `|grad log f|^2 + log f / tau <= 0` with `gamma > 0`, `a = 0`.
    B,
    /// As `B` with a time-dependent `gamma(tau) > 0`.
    Bvar,
    /// As `B` with `gamma = a = 0` and `R + S >= 0`.
    C,
    /// `min (2 Lap log f + |grad log f|^2 - S)` is monotone along the flow.
    E,
}

impl TheoremId {
    pub const ALL: [TheoremId; 7] = [
        TheoremId::A1,
        TheoremId::A2,
        TheoremId::Aa,
        TheoremId::B,
        TheoremId::Bvar,
        TheoremId::C,
        TheoremId::E,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoremId::A1 => "A1",
            TheoremId::A2 => "A2",
            TheoremId::Aa => "Aa",
            TheoremId::B => "B",
            TheoremId::Bvar => "Bvar",
            TheoremId::C => "C",
            TheoremId::E => "E",
        }
    }

    /// Checks the heat equation coefficients the theorem is stated for.
    pub fn check_heat_params(self, params: &HeatParams, horizon: f64) -> Result<()> {
        let wrong = |reason: String| Err(Error::WrongHeatParams { theorem: self.name().into(), reason });
        let gamma_const = params.gamma.is_constant();
        let g0 = params.gamma.value(0.0);
        let (need_gamma, need_a) = match self {
            TheoremId::A1 => (Some(1.0), 2.0),
            TheoremId::A2 | TheoremId::Aa => (Some(1.0), 1.0),
            TheoremId::B | TheoremId::Bvar => (None, 0.0),
            TheoremId::C => (Some(0.0), 0.0),
            TheoremId::E => (Some(0.0), 1.0),
        };
        if params.a != need_a {
            return wrong(format!("needs a = {need_a}, got {}", params.a));
        }
        if let Some(g) = need_gamma {
            if !gamma_const || g0 != g {
                return wrong(format!("needs constant gamma = {g}, got {:?}", params.gamma));
            }
        }
        match self {
            TheoremId::B if !(gamma_const && g0 > 0.0) => wrong(format!("needs constant gamma > 0, got {:?}", params.gamma)),
            TheoremId::Bvar if params.gamma.sampled_range(0.0, horizon, 256).0 <= 0.0 => {
                wrong(format!("needs gamma(tau) > 0, got {:?}", params.gamma))
            }
            _ => Ok(()),
        }
    }

    fn uses_sup_e(self) -> Option<f64> {
        match self {
            TheoremId::A1 => Some(2.0),
            TheoremId::A2 | TheoremId::Aa | TheoremId::E => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TheoremId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown theorem id `{s}`")))
    }
}

/// Slack and window settings for theorem checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckTolerances {
    /// Multiplier of `(h^2 + dt) * scale`.
    pub kappa: f64,
    /// First checked `tau` in steps.
    pub tau_min_steps: usize,
    /// Bound constant `A` of the time-dependent theorem.
    pub bound_a: f64,
    /// Null-eigenvalue threshold of the pointwise supremum.
    pub eig_tol: f64,
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances { kappa: DEFAULT_KAPPA, tau_min_steps: DEFAULT_TAU_MIN_STEPS, bound_a: 0.0, eig_tol: 1e-12 }
    }
}

impl CheckTolerances {
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }
}

/// Worst value of a checked quantity at one `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginRow {
    pub tau: f64,
    pub time: f64,
    /// Minimum over the grid of the margin (or of the monitored quantity for `E`).
    pub margin: f64,
    pub point: usize,
    pub coords: Vec<f64>,
    /// Slack applied at this `tau`.
    pub slack: f64,
}

/// Worst hypothesis margin over the checked window (`>= -tol` means satisfied).
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub description: String,
    pub worst_margin: f64,
    pub worst_tau: f64,
    pub worst_point: usize,
    /// Points (summed over times) where a "for all X" supremum is unbounded.
    pub unbounded_points: usize,
    /// Tolerance at the worst time.
    pub tol: f64,
    pub holds: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Violated,
    HypothesisFailed,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Violated => 2,
            Verdict::HypothesisFailed => 4,
        }
    }
}

/// Monotonicity summary of the monitored minimum (`E` only).
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneSummary {
    /// Worst per-step change in the direction of increasing `t`, minus nothing (raw).
    pub worst_dip: f64,
    /// Slack at the worst dip.
    pub dip_slack: f64,
    /// `min Q(t_last_checked) - min Q(t_first_checked)`, ordered by `t`.
    pub net_change_in_t: f64,
    /// Whether the minimum is nonincreasing in `t` within slack at every step.
    pub nonincreasing_in_t: bool,
}

/// Outcome of one theorem check.
#[derive(Clone, Debug)]
pub struct HarnackReport {
    pub theorem: TheoremId,
    pub rows: Vec<MarginRow>,
    pub hypotheses: Vec<HypothesisCheck>,
    pub kappa: f64,
    pub slack_formula: String,
    /// Largest relative disagreement between the Harnack-quantity form and the direct form.
    pub form_discrepancy: f64,
    pub monotone: Option<MonotoneSummary>,
    pub conclusion_holds: bool,
    pub verdict: Verdict,
}

impl HarnackReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.holds)
    }

    /// Smallest `margin + slack` over all rows (nonnegative when every row passes).
    pub fn worst_slacked_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin + r.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn worst_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }
}

/// Walks the trajectory in `tau`, handing each snapshot and (in the interior) `dS/dtau` to `visit`.
pub(crate) fn walk_tau<F>(traj: &FlowTrajectory, range: std::ops::RangeInclusive<usize>, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &Snapshot<'_>, Option<&ScalarField>) -> Result<()>,
{
    let last = traj.last();
    let (lo, hi) = (*range.start(), (*range.end()).min(last));
    if lo > hi {
        return Ok(());
    }
    let dt = traj.dt();
    let mut prev: Option<ScalarField> = if lo > 0 { Some(traj.s_scalar(traj.index_of_tau(lo - 1))?) } else { None };
    let mut cur = traj.snapshot(traj.index_of_tau(lo))?;
    for j in lo..=hi {
        let next = if j < last { Some(traj.snapshot(traj.index_of_tau(j + 1))?) } else { None };
        let ds = match (&prev, &next) {
            (Some(p), Some(nx)) => Some(nx.s.zip_map(p, |a, b| (a - b) / (2.0 * dt))),
            _ => None,
        };
        visit(j, &cur, ds.as_ref())?;
        match next {
            Some(nx) => {
                prev = Some(std::mem::replace(&mut cur, nx).s);
            }
            None => break,
        }
    }
    Ok(())
}

struct HypAccumulator {
    description: String,
    worst: f64,
    worst_tau: f64,
    worst_point: usize,
    tol_at_worst: f64,
    unbounded: usize,
    holds: bool,
}

impl HypAccumulator {
    fn new(description: impl Into<String>) -> Self {
        HypAccumulator {
            description: description.into(),
            worst: f64::INFINITY,
            worst_tau: 0.0,
            worst_point: 0,
            tol_at_worst: 0.0,
            unbounded: 0,
            holds: true,
        }
    }

    /// Records a field of margins (`>= -tol` required).
    fn record(&mut self, tau: f64, margin: &ScalarField, tol: f64) {
        let (p, m) = margin.argmin();
        if m + tol < self.worst + self.tol_at_worst || self.worst == f64::INFINITY {
            self.worst = m;
            self.worst_tau = tau;
            self.worst_point = p;
            self.tol_at_worst = tol;
        }
        if m < -tol {
            self.holds = false;
        }
    }

    fn finish(self) -> HypothesisCheck {
        HypothesisCheck {
            description: self.description,
            worst_margin: self.worst,
            worst_tau: self.worst_tau,
            worst_point: self.worst_point,
            unbounded_points: self.unbounded,
            tol: self.tol_at_worst,
            holds: self.holds && self.unbounded == 0,
        }
    }
}

fn max_rel_diff(a: &ScalarField, b: &ScalarField, scale: f64) -> f64 {
    (a - b).max_abs() / scale.max(f64::MIN_POSITIVE)
}

/// Checks hypothesis and conclusion of a theorem on a flow and a heat solution.
pub fn check_theorem(id: TheoremId, traj: &FlowTrajectory, sol: &HeatSolution, tol: &CheckTolerances) -> Result<HarnackReport> {
    id.check_heat_params(&sol.params, traj.horizon())?;
    if sol.len() != traj.states().len() {
        return Err(Error::InvalidSpec("heat solution and trajectory have different time grids".into()));
    }
    let grid = traj.grid();
    let n = grid.dim() as f64;
    let last = traj.last();
    let dt = traj.dt();
    let h = grid.min_spacing();
    let disc = tol.kappa * (h * h + dt);
    let horizon = traj.horizon();
    let j_lo = tol.tau_min_steps.max(1);
    let j_hi = if id == TheoremId::Aa {
        // t in [T/2, T)  <=>  tau in (0, T/2]
        (0..=last).rev().find(|&j| sol.tau(j) <= 0.5 * horizon + 1e-12 * horizon).unwrap_or(0)
    } else {
        last
    };
    info!("checking theorem {id} on tau steps {j_lo}..={j_hi}");

    let mut rows = Vec::new();
    let mut form_discrepancy: f64 = 0.0;
    let mut hyp_e = id.uses_sup_e().map(|a| {
        HypAccumulator::new(match id {
            TheoremId::A1 => format!("sup_X E_{a}(S, X) + 2 S^2 / n <= 0"),
            _ => format!("sup_X E_{a}(S, X) <= 0"),
        })
    });
    let mut hyp_s = match id {
        TheoremId::A2 => Some(HypAccumulator::new("S >= 0")),
        TheoremId::Aa => Some(HypAccumulator::new("S >= -n / (2t)")),
        _ => None,
    };
    let mut hyp_ric = match id {
        TheoremId::B => Some(HypAccumulator::new("R_ij + S_ij >= -gamma/2 g_ij")),
        TheoremId::Bvar => Some(HypAccumulator::new(format!("R_ij + S_ij >= -A g_ij, A = {}", tol.bound_a))),
        TheoremId::C => Some(HypAccumulator::new("R_ij + S_ij >= 0")),
        _ => None,
    };
    let mut hyp_unit = matches!(id, TheoremId::B | TheoremId::Bvar | TheoremId::C).then(|| HypAccumulator::new("0 < f < 1"));
    let mut hyp_bound = (id == TheoremId::Bvar).then(|| HypAccumulator::new("0 <= A <= gamma(tau) / 2"));

    walk_tau(traj, j_lo.saturating_sub(1)..=j_hi.min(last), |j, snap, s_tau| {
        let tau = sol.tau(j);
        let geo = &snap.geometry;
        // hypotheses on the interior of the checked window
        if j >= j_lo && j <= j_hi {
            if let (Some(acc), Some(s_tau), Some(a)) = (hyp_e.as_mut(), s_tau, id.uses_sup_e()) {
                let term = error_term_a(snap, s_tau, a);
                let lin_scale = bianchi_scale(snap).max();
                let c_scale = {
                    let lap = geo.laplacian(&snap.s);
                    let s2 = geo.tensor_norm2(&snap.s_tensor);
                    (0..lap.len())
                        .map(|p| a * s_tau[p].abs() + a * lap[p].abs() + 2.0 * s2[p] + 2.0 * snap.s[p] * snap.s[p] / n)
                        .fold(0.0, f64::max)
                };
                let sup = term.sup(SupTolerance { eig: tol.eig_tol, lin: disc * lin_scale });
                acc.unbounded += sup.unbounded_count();
                let mut margin = sup.value.map(|v| if v.is_finite() { -v } else { 0.0 });
                if id == TheoremId::A1 {
                    for p in 0..margin.len() {
                        margin[p] -= 2.0 * snap.s[p] * snap.s[p] / n;
                    }
                }
                acc.record(tau, &margin, disc * c_scale);
            }
            if let Some(acc) = hyp_s.as_mut() {
                let scale = snap.s.max_abs();
                let margin = match id {
                    TheoremId::Aa => snap.s.map(|s| s + n / (2.0 * snap.time)),
                    _ => snap.s.clone(),
                };
                acc.record(tau, &margin, disc * scale);
            }
            if let Some(acc) = hyp_ric.as_mut() {
                let sum = snap.curvature.ricci.zip_components(&snap.s_tensor, |r, s| r + s);
                let scale = sum.max_abs();
                let lower = match id {
                    TheoremId::B => -0.5 * sol.params.gamma.value(tau),
                    TheoremId::Bvar => -tol.bound_a,
                    _ => 0.0,
                };
                let margin = geo.min_relative_eigenvalue(&sum).map(|e| e - lower);
                acc.record(tau, &margin, disc * scale);
            }
            if let Some(acc) = hyp_bound.as_mut() {
                let g = sol.params.gamma.value(tau);
                let m = (0.5 * g - tol.bound_a).min(tol.bound_a);
                acc.record(tau, &ScalarField::from_vec(vec![m]), 0.0);
            }
        }
        if let Some(acc) = hyp_unit.as_mut() {
            let f = sol.f(j);
            acc.record(tau, &f.map(|x| (1.0 - x).min(x)), 0.0);
        }
        if j < j_lo {
            return Ok(());
        }
        // conclusion
        let f = sol.f(j);
        let logf = f.map(f64::ln);
        let lap_l = geo.laplacian(&logf);
        let grad_l = geo.grad_norm2(&logf);
        let s = &snap.s;
        let v = sol.v(j)?;
        let (margin, scale, alt) = match id {
            TheoremId::A1 | TheoremId::A2 | TheoremId::Aa | TheoremId::E => {
                let (ks, kn, kc) = match id {
                    TheoremId::A1 => (2.0, 2.0, 0.5),
                    TheoremId::A2 => (1.0, 2.0, 0.25),
                    TheoremId::Aa => (1.0, 3.0, 0.25),
                    _ => (1.0, 0.0, 0.0),
                };
                let direct = ScalarField::from_vec(
                    (0..f.len())
                        .map(|p| 2.0 * lap_l[p] + grad_l[p] - ks * s[p] + kn * n / tau + kc * n)
                        .collect(),
                );
                let scale = (0..f.len())
                    .map(|p| 2.0 * lap_l[p].abs() + grad_l[p] + ks * s[p].abs())
                    .fold(0.0, f64::max);
                // P_S = 2 Lap v - |grad v|^2 + a S + d n / tau with a = ks, d = -kn
                let hp = HarnackParams::new(2.0, 1.0, ks, 0.0, -kn);
                let p_s = harnack_quantity(geo, s, &v, tau, &hp);
                let alt = p_s.map(|x| -(x - kc * n));
                (direct, scale, alt)
            }
            TheoremId::B | TheoremId::Bvar | TheoremId::C => {
                let direct = ScalarField::from_vec((0..f.len()).map(|p| -(grad_l[p] + logf[p] / tau)).collect());
                let scale = (0..f.len()).map(|p| grad_l[p] + (logf[p] / tau).abs()).fold(0.0, f64::max);
                let hp = HarnackParams { alpha: 0.0, beta: -1.0, a: 0.0, b: -1.0, c: 0.0, d: 0.0, lambda: 0.0 };
                let h_s = harnack_quantity(geo, s, &sol.u(j)?, tau, &hp);
                (direct, scale, h_s.map(|x| -x))
            }
        };
        form_discrepancy = form_discrepancy.max(max_rel_diff(&margin, &alt, scale.max(margin.max_abs())));
        let (point, m) = margin.argmin();
        rows.push(MarginRow {
            tau,
            time: snap.time,
            margin: m,
            point,
            coords: grid.coords(point),
            slack: disc * scale,
        });
        Ok(())
    })?;

    let mut monotone = None;
    let conclusion_holds = if id == TheoremId::E {
        // rows are ordered by increasing tau, i.e. decreasing t
        let mut worst_dip = f64::INFINITY;
        let mut dip_slack = 0.0;
        let mut holds = true;
        let mut nonincreasing = true;
        for w in rows.windows(2) {
            let (later, earlier) = (&w[0], &w[1]);
            let change = later.margin - earlier.margin;
            let slack = later.slack.max(earlier.slack);
            if change < -slack {
                holds = false;
            }
            if change > slack {
                nonincreasing = false;
            }
            if change + slack < worst_dip + dip_slack || worst_dip == f64::INFINITY {
                worst_dip = change;
                dip_slack = slack;
            }
        }
        let net = match (rows.first(), rows.last()) {
            (Some(a), Some(b)) => a.margin - b.margin,
            _ => 0.0,
        };
        monotone = Some(MonotoneSummary {
            worst_dip: if worst_dip.is_finite() { worst_dip } else { 0.0 },
            dip_slack,
            net_change_in_t: net,
            nonincreasing_in_t: nonincreasing,
        });
        holds
    } else {
        rows.iter().all(|r| r.margin >= -r.slack)
    };

    let hypotheses: Vec<HypothesisCheck> = [hyp_e, hyp_s, hyp_ric, hyp_bound, hyp_unit]
        .into_iter()
        .flatten()
        .map(HypAccumulator::finish)
        .collect();
    let hyp_ok = hypotheses.iter().all(|h| h.holds);
    let verdict = if !hyp_ok {
        Verdict::HypothesisFailed
    } else if !conclusion_holds {
        Verdict::Violated
    } else {
        Verdict::Pass
    };
    Ok(HarnackReport {
        theorem: id,
        rows,
        hypotheses,
        kappa: tol.kappa,
        slack_formula: format!(
            "slack(tau) = {} * (h^2 + dt) * max_x sum|data terms|(tau), h = {h:e}, dt = {dt:e}",
            tol.kappa
        ),
        form_discrepancy,
        monotone,
        conclusion_holds,
        verdict,
    })
}

/// A space-time path sampled on the trajectory's time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimePath {
    /// `(coordinates, snapshot index)` with strictly increasing indices.
    pub samples: Vec<(Vec<f64>, usize)>,
}

fn periodic_delta(a: f64, b: f64, l: f64) -> f64 {
    let d = (b - a).rem_euclid(l);
    if d > 0.5 * l {
        d - l
    } else {
        d
    }
}

impl SpaceTimePath {
    /// Constant-speed straight coordinate line (shortest periodic image) from point `p1` at
    /// snapshot `k1` to point `p2` at snapshot `k2`.
    pub fn straight(grid: &PeriodicGrid, p1: usize, k1: usize, p2: usize, k2: usize) -> Result<Self> {
        Self::perturbed(grid, p1, k1, p2, k2, 0.0)
    }

    /// Straight line plus `amplitude * sin(pi s)` along the last axis, `s` in `[0, 1]`.
    pub fn perturbed(grid: &PeriodicGrid, p1: usize, k1: usize, p2: usize, k2: usize, amplitude: f64) -> Result<Self> {
        if k1 >= k2 {
            return Err(Error::PathInfeasible(format!("t1 (step {k1}) must precede t2 (step {k2})")));
        }
        let (x1, x2) = (grid.coords(p1), grid.coords(p2));
        let delta: Vec<f64> = (0..grid.dim()).map(|a| periodic_delta(x1[a], x2[a], grid.periods()[a])).collect();
        let steps = (k2 - k1) as f64;
        let samples = (k1..=k2)
            .map(|k| {
                let s = (k - k1) as f64 / steps;
                let mut x: Vec<f64> = (0..grid.dim()).map(|a| x1[a] + s * delta[a]).collect();
                let last = grid.dim() - 1;
                x[last] += amplitude * (std::f64::consts::PI * s).sin();
                (x, k)
            })
            .collect();
        let path = SpaceTimePath { samples };
        path.check_sanity(grid)?;
        Ok(path)
    }

    /// Times strictly increase and consecutive samples are at most one cell apart per axis.
    pub fn check_sanity(&self, grid: &PeriodicGrid) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].1 <= w[0].1 {
                return Err(Error::PathInfeasible("path times must increase".into()));
            }
            for a in 0..grid.dim() {
                if (w[1].0[a] - w[0].0[a]).abs() > grid.spacing()[a] * (1.0 + 1e-12) * (w[1].1 - w[0].1) as f64 {
                    return Err(Error::PathInfeasible(format!(
                        "path moves more than one cell per time step along axis {a}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One evaluated classical Harnack inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalHarnackRow {
    pub start: (usize, f64),
    pub end: (usize, f64),
    /// `e^{tau2} log f(x2, t2) - e^{tau1} log f(x1, t1)`.
    pub lhs: f64,
    /// `1/2 int e^tau (|l'|^2 + 2S + n/2 + 2n/tau) dt`.
    pub rhs: f64,
    /// LHS with the weights `e^{t}` instead of `e^{tau}`, as an alternative reading.
    pub lhs_time_weighted: f64,
    pub slack: f64,
    pub holds: bool,
}

impl ClassicalHarnackRow {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Integrates the first-case Harnack estimate along each path and compares endpoint values.
pub fn classical_harnack_along(
    traj: &FlowTrajectory,
    sol: &HeatSolution,
    paths: &[SpaceTimePath],
    kappa: f64,
) -> Result<Vec<ClassicalHarnackRow>> {
    TheoremId::A1.check_heat_params(&sol.params, traj.horizon())?;
    let grid = traj.grid();
    let last = traj.last();
    let n = grid.dim() as f64;
    let dt = traj.dt();
    let h = grid.min_spacing();
    let horizon = traj.horizon();
    // S per snapshot is needed along every path; compute lazily in t-order
    let mut needed: Vec<usize> = paths.iter().flat_map(|p| p.samples.iter().map(|s| s.1)).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut s_cache = std::collections::BTreeMap::new();
    for &k in &needed {
        s_cache.insert(k, traj.s_scalar(k)?);
    }
    let mut rows = Vec::with_capacity(paths.len());
    for path in paths {
        path.check_sanity(grid)?;
        let (x1, k1) = path.samples.first().cloned().ok_or_else(|| Error::PathInfeasible("empty path".into()))?;
        let (x2, k2) = path.samples.last().cloned().unwrap();
        if k1 == 0 || k2 >= last {
            return Err(Error::PathInfeasible("endpoints must satisfy 0 < t1 < t2 < T".into()));
        }
        let tau_of = |k: usize| horizon - traj.time(k);
        let node = |x: &[f64], k: usize| -> f64 {
            let tau = tau_of(k);
            let s = grid.interpolate(&s_cache[&k], x);
            tau.exp() * (2.0 * s + 0.5 * n + 2.0 * n / tau)
        };
        let mut rhs = 0.0;
        let mut scale = 0.0f64;
        for w in path.samples.windows(2) {
            let ((xa, ka), (xb, kb)) = (&w[0], &w[1]);
            let span = (kb - ka) as f64 * dt;
            let vel: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| (b - a) / span).collect();
            let mid: Vec<f64> = xa.iter().zip(xb).map(|(a, b)| 0.5 * (a + b)).collect();
            let ga = &traj.state(*ka).g;
            let gb = &traj.state(*kb).g;
            let mut speed2 = 0.0;
            for i in 0..grid.dim() {
                for j in 0..grid.dim() {
                    let gij = 0.5 * (grid.interpolate(ga.component(i, j), &mid) + grid.interpolate(gb.component(i, j), &mid));
                    speed2 += gij * vel[i] * vel[j];
                }
            }
            let tau_mid = 0.5 * (tau_of(*ka) + tau_of(*kb));
            let (fa, fb) = (node(xa, *ka), node(xb, *kb));
            rhs += 0.5 * (span * tau_mid.exp() * speed2 + 0.5 * span * (fa + fb));
            scale = scale.max(fa.abs()).max(fb.abs()).max(tau_mid.exp() * speed2);
        }
        let p1 = nearest_point(grid, &x1);
        let p2 = nearest_point(grid, &x2);
        let l1 = sol.f(last - k1)[p1].ln();
        let l2 = sol.f(last - k2)[p2].ln();
        let (t1, t2) = (traj.time(k1), traj.time(k2));
        let lhs = tau_of(k2).exp() * l2 - tau_of(k1).exp() * l1;
        let lhs_time_weighted = t2.exp() * l2 - t1.exp() * l1;
        let slack = kappa * (h * h + dt) * (scale * (t2 - t1) + tau_of(k1).exp() * (l1.abs() + l2.abs()));
        rows.push(ClassicalHarnackRow {
            start: (p1, t1),
            end: (p2, t2),
            lhs,
            rhs,
            lhs_time_weighted,
            slack,
            holds: lhs - rhs <= slack,
        });
    }
    Ok(rows)
}

fn nearest_point(grid: &PeriodicGrid, x: &[f64]) -> usize {
    let idx: Vec<isize> = x.iter().zip(grid.spacing()).map(|(&xi, &h)| (xi / h).round() as isize).collect();
    grid.flat_index(&idx)
}

/// Classical Harnack check between pairs of `(grid point, snapshot index)` along straight paths.
pub fn classical_harnack_check(
    traj: &FlowTrajectory,
    sol: &HeatSolution,
    pairs: &[((usize, usize), (usize, usize))],
    kappa: f64,
) -> Result<Vec<ClassicalHarnackRow>> {
    let paths = pairs
        .iter()
        .map(|&((p1, k1), (p2, k2))| SpaceTimePath::straight(traj.grid(), p1, k1, p2, k2))
        .collect::<Result<Vec<_>>>()?;
    classical_harnack_along(traj, sol, &paths, kappa)
}

/// Seeded random `((p1, k1), (p2, k2))` pairs with `0 < k1 < k2 < K`, separated in time by at
/// least half the points per axis so a straight path never moves more than a cell per step.
pub fn random_space_time_pairs(grid: &PeriodicGrid, last: usize, count: usize, seed: u64) -> Result<Vec<((usize, usize), (usize, usize))>> {
    let gap = grid.points_per_axis().iter().max().copied().unwrap_or(1).div_ceil(2).max(1);
    if last < gap + 2 {
        return Err(Error::PathInfeasible(format!("{last} steps leave no room for pairs {gap} steps apart")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let k1 = rng.gen_range(1..last - gap);
            let k2 = rng.gen_range(k1 + gap..last);
            ((rng.gen_range(0..grid.len()), k1), (rng.gen_range(0..grid.len()), k2))
        })
        .collect())
}

/// Residual fields of the closed-form error terms of the List and Müller examples.
#[derive(Clone, Debug)]
pub struct ProbeResidual {
    /// `E_a(S, X)` evaluated from the discrete trajectory.
    pub error_term: ScalarField,
    /// The example's closed form.
    pub closed_form: ScalarField,
    pub residual: ScalarField,
}

/// Compares `E_a(S, X)` with the closed form of a List or Müller trajectory at heat index `j`.
pub fn example_identity_probe(traj: &FlowTrajectory, j: usize, x: &VectorField, a: f64) -> Result<ProbeResidual> {
    let variant = traj.variant();
    if !matches!(variant, Variant::List | Variant::Mueller) {
        return Err(Error::WrongVariant { expected: "list or mueller", actual: variant.name() });
    }
    let s_tau = s_tau_derivative(traj, j)?;
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    let geo = &snap.geometry;
    let e = error_term_a(&snap, &s_tau, a).evaluate(geo, x);
    let s2 = geo.tensor_norm2(&snap.s_tensor);
    let xu = geo.raise_vector(x);
    let (weight, alpha_dot, maps): (f64, f64, Vec<&ScalarField>) = match variant {
        Variant::List => (4.0, 0.0, vec![snap.state.psi.as_ref().expect("list state has psi")]),
        _ => {
            let spec = traj.spec();
            (2.0 * spec.alpha.value(snap.time), spec.alpha.derivative(snap.time), snap.state.phi.iter().collect())
        }
    };
    // List:   -2(a-1)|S|^2 - 4(a-1)|Lap psi|^2 - 4|Lap psi - X.psi|^2
    // Müller: -2(a-1)|S|^2 - 2 alpha (a-1)|tau phi|^2 - 2 alpha |tau phi - X.phi|^2 + a alpha' |grad phi|^2
    let mut closed = s2.scale(-2.0 * (a - 1.0));
    for phi in maps {
        let lap = geo.laplacian(phi);
        let dphi = geo.gradient(phi);
        let grad2 = geo.grad_norm2(phi);
        for p in 0..closed.len() {
            let xdphi: f64 = (0..geo.dim()).map(|l| xu.components[l][p] * dphi.components[l][p]).sum();
            let dev = lap[p] - xdphi;
            closed[p] += -weight * (a - 1.0) * lap[p] * lap[p] - weight * dev * dev + a * alpha_dot * grad2[p];
        }
    }
    let residual = &e - &closed;
    Ok(ProbeResidual { error_term: e, closed_form: closed, residual })
}

/// Smallest eigenvalue of `T` relative to `g` at one point (exposed for oracles).
pub fn relative_min_eigenvalue(n: usize, g: &[[f64; 2]; 2], t: &[[f64; 2]; 2]) -> f64 {
    relative_eigen(n, g, t).0[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{run_flow, sine_product, FlowSpec, MetricState};
    use crate::geometry::conformal_metric;
    use crate::grid::Variance;
    use crate::heat::{solve_backward_heat, TerminalProfile};

    const ID: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn concave_quadratic_without_linear_term() {
        let s = quadratic_sup(2, &ID, -1.0, [0.0, 0.0], &[[2.0, 0.3], [0.3, 1.0]], SupTolerance::default());
        assert!(s.bounded);
        assert_eq!(s.value, -1.0);
        assert_eq!(s.argmax, Some([0.0, 0.0]));
    }

    #[test]
    fn quadratic_sup_matches_completed_square() {
        // c + b.x - x^T q x with g non-identity
        let g = [[2.0, 0.4], [0.4, 1.5]];
        let q = [[1.3, -0.2], [-0.2, 0.7]];
        let b = [0.5, -1.1];
        let s = quadratic_sup(2, &g, 0.25, b, &q, SupTolerance::default());
        // q does not depend on g when X is contravariant: x* = q^-1 b / 2
        let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
        let x = [(q[1][1] * b[0] - q[0][1] * b[1]) / (2.0 * det), (q[0][0] * b[1] - q[1][0] * b[0]) / (2.0 * det)];
        let val = 0.25 + b[0] * x[0] + b[1] * x[1]
            - (q[0][0] * x[0] * x[0] + 2.0 * q[0][1] * x[0] * x[1] + q[1][1] * x[1] * x[1]);
        assert!((s.value - val).abs() < 1e-13, "{} vs {val}", s.value);
        let am = s.argmax.unwrap();
        assert!((am[0] - x[0]).abs() < 1e-13 && (am[1] - x[1]).abs() < 1e-13);
    }

    #[test]
    fn indefinite_or_unsupported_linear_terms_are_unbounded() {
        let tol = SupTolerance::default();
        assert!(!quadratic_sup(2, &ID, 0.0, [0.0, 0.0], &[[1.0, 0.0], [0.0, -1.0]], tol).bounded);
        assert!(!quadratic_sup(2, &ID, 0.0, [0.0, 1e-3], &[[1.0, 0.0], [0.0, 0.0]], tol).bounded);
        let loose = SupTolerance { eig: 1e-12, lin: 1e-2 };
        let s = quadratic_sup(2, &ID, 0.5, [0.0, 1e-3], &[[1.0, 0.0], [0.0, 0.0]], loose);
        assert!(s.bounded);
        assert_eq!(s.value, 0.5);
        // one-dimensional case
        let s = quadratic_sup(1, &[[4.0, 0.0], [0.0, 0.0]], 1.0, [2.0, 0.0], &[[1.0, 0.0], [0.0, 0.0]], tol);
        assert!((s.value - 2.0).abs() < 1e-15);
    }

    fn static_flat(n: usize, steps: usize) -> FlowTrajectory {
        let grid = PeriodicGrid::uniform(2, n, 1.0).unwrap();
        let h = 1.0 / n as f64;
        let dt = 0.1 * h * h;
        run_flow(&grid, MetricState::flat(&grid), &FlowSpec::new(Variant::Static, steps as f64 * dt, dt)).unwrap()
    }

    #[test]
    fn static_flat_error_terms_vanish() {
        let traj = static_flat(8, 6);
        let grid = traj.grid();
        let x = VectorField::new(vec![sine_product(grid, 1.0), ScalarField::constant(grid, 2.0)], Variance::Raised);
        for a in [0.5, 1.0, 2.0] {
            assert_eq!(eval_e_a(&traj, 3, &x, a).unwrap().max_abs(), 0.0);
        }
        let gen = eval_e_general(&traj, 3, &x, &HarnackParams::new(3.0, 1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(gen.max_abs(), 0.0);
        let sup = sup_e_over_x(&traj, 3, 1.0, SupTolerance::default()).unwrap();
        assert!(sup.all_bounded());
        assert_eq!(sup.value.max_abs(), 0.0);
        assert!(matches!(eval_e_a(&traj, 0, &x, 1.0), Err(Error::BoundaryTime { .. })));
        let degenerate = HarnackParams::new(1.0, 1.0, 1.0, 0.0, 0.0);
        assert!(matches!(eval_e_general(&traj, 3, &x, &degenerate), Err(Error::DegenerateParams(_))));
    }

    #[test]
    fn general_error_term_reduces_to_e_a() {
        let grid = PeriodicGrid::uniform(2, 16, 1.0).unwrap();
        let phi = sine_product(&grid, 0.2);
        let h = grid.min_spacing();
        let dt = 0.1 * h * h * (-0.4f64).exp();
        let traj = run_flow(&grid, MetricState::new(conformal_metric(&grid, &phi)), &FlowSpec::new(Variant::Ricci, 6.0 * dt, dt)).unwrap();
        let x = VectorField::new(vec![sine_product(&grid, 1.0), ScalarField::constant(&grid, 0.5)], Variance::Lower);
        for a in [1.0, 2.0] {
            let ea = eval_e_a(&traj, 3, &x, a).unwrap();
            let eg = eval_e_general(&traj, 3, &x, &HarnackParams::new(2.0, 1.0, a, 0.0, 0.0)).unwrap();
            assert!((&ea - &eg).max_abs() <= 1e-12 * ea.max_abs().max(1.0));
        }
    }

    #[test]
    fn constant_f_static_flat_h_is_dn_over_tau() {
        let traj = static_flat(8, 6);
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::Constant { value: 1.0 })).unwrap();
        let p = HarnackParams::new(2.0, 1.0, 1.0, 0.0, -2.0);
        let hs = eval_h_s(&traj, &sol, 4, &p).unwrap();
        let expect = -2.0 * 2.0 / sol.tau(4);
        assert!(hs.values().iter().all(|&x| x == expect));
        assert!(matches!(eval_h_s(&traj, &sol, 0, &p), Err(Error::BoundaryTime { .. })));
    }

    #[test]
    fn wrong_heat_params_are_rejected() {
        let traj = static_flat(8, 6);
        let sol = solve_backward_heat(&traj, &HeatParams::new(1.0, 1.0, TerminalProfile::fourier(0.2))).unwrap();
        let err = check_theorem(TheoremId::A1, &traj, &sol, &CheckTolerances::default()).unwrap_err();
        assert!(matches!(err, Error::WrongHeatParams { .. }));
        assert!(check_theorem(TheoremId::C, &traj, &sol, &CheckTolerances::default()).is_err());
        assert!(check_theorem(TheoremId::A2, &traj, &sol, &CheckTolerances::default()).is_ok());
    }

    #[test]
    fn theorem_c_on_static_flat_with_zero_slack() {
        let traj = static_flat(16, 60);
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::fourier(0.3))).unwrap();
        let rep = check_theorem(TheoremId::C, &traj, &sol, &CheckTolerances::default().with_kappa(0.0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{rep:?}");
        assert!(rep.form_discrepancy <= 1e-12, "{}", rep.form_discrepancy);
        assert!(rep.rows[0].margin > 0.0);
        assert_eq!(rep.rows.len(), 60 - 5 + 1);
    }

    #[test]
    fn path_sanity() {
        let grid = PeriodicGrid::uniform(2, 8, 1.0).unwrap();
        assert!(matches!(SpaceTimePath::straight(&grid, 0, 5, 3, 5), Err(Error::PathInfeasible(_))));
        assert!(matches!(SpaceTimePath::straight(&grid, 0, 5, 3, 6), Err(Error::PathInfeasible(_))));
        let p = SpaceTimePath::straight(&grid, 0, 5, 3, 8).unwrap();
        assert_eq!(p.samples.len(), 4);
        // wraps across the seam: point 7 is one cell to the left of point 0
        let p = SpaceTimePath::straight(&grid, 0, 1, 7, 2).unwrap();
        assert!((p.samples[1].0[0] + 0.125).abs() < 1e-15);
    }

    #[test]
    fn probe_rejects_non_list_flows() {
        let traj = static_flat(8, 6);
        let x = VectorField::zeros(traj.grid(), Variance::Raised);
        assert!(matches!(example_identity_probe(&traj, 2, &x, 1.0), Err(Error::WrongVariant { .. })));
    }
}
