//! Geometric flows `dg/dt = -2 S` and their stored trajectories.
//!
//! The metric is advanced together with its auxiliary fields by classical RK4:
//! the List scalar `psi` and the Müller map components `phi^a` (flat target, so the
//! tension field is the component-wise Laplacian) both follow `d/dt = Laplacian`.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{spd_inverse, sym_eigen2, CurvatureBundle, MetricGeometry};
use crate::grid::{PeriodicGrid, ScalarField, SymTensorField, Variance};
use crate::timefn::TimeFn;

/// Fraction of `h^2 / lambda_max(g^-1)` allowed as a time step.
pub const STABILITY_FACTOR: f64 = 0.2;

/// Samples used to check that a coupling schedule is nonnegative and nonincreasing.
const SCHEDULE_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(alias = "none")]
    Static,
    Ricci,
    List,
    #[serde(alias = "muller", alias = "müller")]
    Mueller,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Static => "static",
            Variant::Ricci => "ricci",
            Variant::List => "list",
            Variant::Mueller => "mueller",
        }
    }
}

/// Which flow to run, for how long and with what step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub variant: Variant,
    pub horizon: f64,
    pub dt: f64,
    /// Number of map components (Müller only).
    pub targets: usize,
    /// Coupling `alpha(t)` (Müller only).
    pub alpha: TimeFn,
}

impl FlowSpec {
    pub fn new(variant: Variant, horizon: f64, dt: f64) -> Self {
        FlowSpec { variant, horizon, dt, targets: 0, alpha: TimeFn::ZERO }
    }

    pub fn mueller(targets: usize, alpha: TimeFn, horizon: f64, dt: f64) -> Self {
        FlowSpec { variant: Variant::Mueller, horizon, dt, targets, alpha }
    }

    /// Number of steps `K = T / dt`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Checks the time grid and, for Müller, the coupling schedule.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidSpec(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        let ratio = self.horizon / self.dt;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidSpec(format!("T / dt = {ratio} is not a positive integer")));
        }
        if self.variant == Variant::Mueller {
            if self.targets == 0 {
                return Err(Error::InvalidSpec("Müller flow needs at least one map component".into()));
            }
            let (lo, _) = self.alpha.sampled_range(0.0, self.horizon, SCHEDULE_SAMPLES);
            if lo < 0.0 {
                return Err(Error::InvalidSpec(format!("coupling alpha(t) must be nonnegative, reached {lo}")));
            }
            if !self.alpha.is_nonincreasing_on(0.0, self.horizon, SCHEDULE_SAMPLES) {
                return Err(Error::InvalidSpec("coupling alpha(t) must be nonincreasing".into()));
            }
        }
        Ok(())
    }

    /// Time of snapshot `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps() {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

/// The metric and auxiliary fields at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricState {
    pub time: f64,
    pub g: SymTensorField,
    pub psi: Option<ScalarField>,
    pub phi: Vec<ScalarField>,
}

impl MetricState {
    pub fn new(g: SymTensorField) -> Self {
        MetricState { time: 0.0, g, psi: None, phi: Vec::new() }
    }

    pub fn flat(grid: &PeriodicGrid) -> Self {
        Self::new(SymTensorField::identity(grid, Variance::Lower))
    }

    pub fn with_psi(mut self, psi: ScalarField) -> Self {
        self.psi = Some(psi);
        self
    }

    pub fn with_maps(mut self, phi: Vec<ScalarField>) -> Self {
        self.phi = phi;
        self
    }

    /// Checks that exactly the auxiliary fields required by `spec` are present.
    pub fn check_consistent(&self, spec: &FlowSpec) -> Result<()> {
        let variant = spec.variant.name();
        match spec.variant {
            Variant::List if self.psi.is_none() => Err(Error::MissingAuxiliaryField { variant, field: "psi" }),
            Variant::Mueller if self.phi.len() < spec.targets.max(1) => {
                Err(Error::MissingAuxiliaryField { variant, field: "phi" })
            }
            Variant::Static | Variant::Ricci if self.psi.is_some() || !self.phi.is_empty() => Err(Error::InvalidSpec(
                format!("{variant} flow takes no auxiliary fields"),
            )),
            Variant::List if !self.phi.is_empty() => Err(Error::InvalidSpec("list flow takes no map fields".into())),
            Variant::Mueller if self.psi.is_some() || self.phi.len() != spec.targets => Err(Error::InvalidSpec(
                format!("Müller flow takes exactly {} map fields and no psi", spec.targets),
            )),
            _ => Ok(()),
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        let aux = self.psi.iter().chain(&self.phi).filter_map(ScalarField::first_non_finite).min();
        match (self.g.first_non_finite(), aux) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// `self + c * rate`, with time advanced by `c`.
    fn advanced(&self, c: f64, rate: &Rates) -> MetricState {
        let mut out = self.clone();
        out.time += c;
        out.g.axpy(c, &rate.g);
        if let (Some(p), Some(r)) = (out.psi.as_mut(), rate.psi.as_ref()) {
            p.axpy(c, r);
        }
        for (p, r) in out.phi.iter_mut().zip(&rate.phi) {
            p.axpy(c, r);
        }
        out
    }
}

/// `S_ij` for a state whose geometry and curvature are already known.
pub fn s_tensor_with(
    geometry: &MetricGeometry<'_>,
    curvature: &CurvatureBundle,
    state: &MetricState,
    spec: &FlowSpec,
) -> Result<SymTensorField> {
    let grid = geometry.grid();
    let variant = spec.variant.name();
    let dyad = |s: &ScalarField, c: f64, out: &mut SymTensorField| {
        let d = grid.diff_all(s);
        let n = grid.dim();
        for i in 0..n {
            for j in i..n {
                let comp = out.component_mut(i, j);
                for p in 0..grid.len() {
                    comp[p] -= c * d[i][p] * d[j][p];
                }
            }
        }
    };
    match spec.variant {
        Variant::Static => Ok(SymTensorField::zeros(grid, Variance::Lower)),
        Variant::Ricci => Ok(curvature.ricci.clone()),
        Variant::List => {
            let psi = state.psi.as_ref().ok_or(Error::MissingAuxiliaryField { variant, field: "psi" })?;
            let mut s = curvature.ricci.clone();
            dyad(psi, 2.0, &mut s);
            Ok(s)
        }
        Variant::Mueller => {
            if state.phi.is_empty() {
                return Err(Error::MissingAuxiliaryField { variant, field: "phi" });
            }
            let alpha = spec.alpha.value(state.time);
            let mut s = curvature.ricci.clone();
            for phi in &state.phi {
                dyad(phi, alpha, &mut s);
            }
            Ok(s)
        }
    }
}

/// `S_ij` and its trace `S = g^ij S_ij` for the given state.
pub fn s_tensor(grid: &PeriodicGrid, state: &MetricState, spec: &FlowSpec) -> Result<(SymTensorField, ScalarField)> {
    let geo = MetricGeometry::new(grid, &state.g)?;
    let curv = geo.curvature();
    let s = s_tensor_with(&geo, &curv, state, spec)?;
    let tr = geo.trace(&s);
    Ok((s, tr))
}

/// Largest stable step `0.2 h_min^2 / max_x lambda_max(g^-1)` for metric `g`.
pub fn stability_bound(grid: &PeriodicGrid, g: &SymTensorField) -> Result<f64> {
    let n = grid.dim();
    let mut lam_min = f64::INFINITY;
    for p in 0..grid.len() {
        let m = g.at(p);
        spd_inverse(n, &m).map_err(|value| Error::NonSpdMetric { point: p, value })?;
        let l = if n == 1 { m[0][0] } else { sym_eigen2(&m).0[0] };
        lam_min = lam_min.min(l);
    }
    let h = grid.min_spacing();
    Ok(STABILITY_FACTOR * h * h * lam_min)
}

struct Rates {
    g: SymTensorField,
    psi: Option<ScalarField>,
    phi: Vec<ScalarField>,
}

fn rates(grid: &PeriodicGrid, state: &MetricState, spec: &FlowSpec) -> Result<Rates> {
    if spec.variant == Variant::Static {
        return Ok(Rates {
            g: SymTensorField::zeros(grid, Variance::Lower),
            psi: None,
            phi: Vec::new(),
        });
    }
    let geo = MetricGeometry::new(grid, &state.g)?;
    let curv = geo.curvature();
    let s = s_tensor_with(&geo, &curv, state, spec)?;
    Ok(Rates {
        g: s.scale(-2.0),
        psi: state.psi.as_ref().map(|p| geo.laplacian(p)),
        phi: state.phi.iter().map(|p| geo.laplacian(p)).collect(),
    })
}

/// One RK4 step of the coupled system.
pub fn step_flow(grid: &PeriodicGrid, state: &MetricState, spec: &FlowSpec) -> Result<MetricState> {
    let dt = spec.dt;
    let bound = stability_bound(grid, &state.g)?;
    if dt > bound {
        return Err(Error::StepTooLarge { dt, bound, time: state.time });
    }
    let k1 = rates(grid, state, spec)?;
    let k2 = rates(grid, &state.advanced(0.5 * dt, &k1), spec)?;
    let k3 = rates(grid, &state.advanced(0.5 * dt, &k2), spec)?;
    let k4 = rates(grid, &state.advanced(dt, &k3), spec)?;
    let mut next = state.clone();
    next.time = state.time + dt;
    for (c, k) in [(dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)] {
        next.g.axpy(c, &k.g);
        if let (Some(p), Some(r)) = (next.psi.as_mut(), k.psi.as_ref()) {
            p.axpy(c, r);
        }
        for (p, r) in next.phi.iter_mut().zip(&k.phi) {
            p.axpy(c, r);
        }
    }
    if let Some(point) = next.first_non_finite() {
        return Err(Error::StabilityFailure { time: next.time, point });
    }
    for p in 0..grid.len() {
        spd_inverse(grid.dim(), &next.g.at(p)).map_err(|value| Error::NonSpdMetric { point: p, value })?;
    }
    Ok(next)
}

/// Curvature and `S` data of one stored state, computed on demand.
pub struct Snapshot<'a> {
    pub index: usize,
    pub time: f64,
    pub state: &'a MetricState,
    pub geometry: MetricGeometry<'a>,
    pub curvature: CurvatureBundle,
    pub s_tensor: SymTensorField,
    pub s: ScalarField,
}

/// The stored flow on the uniform time grid `t_k = k dt`, `k = 0..=K`.
///
/// Only the states are kept; curvature and `S` are recomputed by [`FlowTrajectory::snapshot`].
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    grid: PeriodicGrid,
    spec: FlowSpec,
    states: Vec<MetricState>,
}

impl FlowTrajectory {
    /// Assembles a trajectory from already computed states, validating the time grid.
    pub fn from_states(grid: PeriodicGrid, spec: FlowSpec, states: Vec<MetricState>) -> Result<Self> {
        spec.validate()?;
        if states.len() != spec.steps() + 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} states, got {}",
                spec.steps() + 1,
                states.len()
            )));
        }
        for (k, s) in states.iter().enumerate() {
            if (s.time - spec.time(k)).abs() > 1e-9 * spec.dt {
                return Err(Error::InvalidSpec(format!("state {k} has time {} != {}", s.time, spec.time(k))));
            }
            s.check_consistent(&spec)?;
        }
        Ok(FlowTrajectory { grid, spec, states })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn states(&self) -> &[MetricState] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &MetricState {
        &self.states[k]
    }

    /// Index of the last snapshot, `K`.
    pub fn last(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn time(&self, k: usize) -> f64 {
        self.states[k].time
    }

    /// Snapshot index holding reversed time `tau_j = T - t_k`, i.e. `k = K - j`.
    pub fn index_of_tau(&self, j: usize) -> usize {
        self.last() - j
    }

    pub fn tau(&self, j: usize) -> f64 {
        self.horizon() - self.time(self.index_of_tau(j))
    }

    pub fn snapshot(&self, k: usize) -> Result<Snapshot<'_>> {
        let state = &self.states[k];
        let geometry = MetricGeometry::new(&self.grid, &state.g)?;
        let curvature = geometry.curvature();
        let s_tensor = s_tensor_with(&geometry, &curvature, state, &self.spec)?;
        let s = geometry.trace(&s_tensor);
        Ok(Snapshot { index: k, time: state.time, state, geometry, curvature, s_tensor, s })
    }

    /// Scalar `S` at snapshot `k`.
    pub fn s_scalar(&self, k: usize) -> Result<ScalarField> {
        Ok(self.snapshot(k)?.s)
    }
}

/// Integrates the flow from `initial` (at `t = 0`) to the horizon.
pub fn run_flow(grid: &PeriodicGrid, initial: MetricState, spec: &FlowSpec) -> Result<FlowTrajectory> {
    spec.validate()?;
    if initial.time != 0.0 {
        return Err(Error::InvalidSpec(format!("initial state must be at t = 0, got {}", initial.time)));
    }
    initial.check_consistent(spec)?;
    if initial.g.dim() != grid.dim() {
        return Err(Error::InvalidGrid("metric dimension does not match the grid".into()));
    }
    let steps = spec.steps();
    info!("running {} flow: {} steps of dt = {:e}", spec.variant.name(), steps, spec.dt);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(initial);
    for k in 1..=steps {
        let prev = &states[k - 1];
        let mut next = step_flow(grid, prev, spec).map_err(|e| e.at_time(prev.time))?;
        next.time = spec.time(k);
        if k % 500 == 0 {
            debug!("flow step {k}/{steps}, t = {:.6}", next.time);
        }
        states.push(next);
    }
    Ok(FlowTrajectory { grid: grid.clone(), spec: spec.clone(), states })
}

/// Per-time minimum of `S + n / (2t)` over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SBoundReport {
    /// `(t_k, min_x S + n/(2 t_k))` for every `t_k > 0`.
    pub minima: Vec<(f64, f64)>,
    pub tol: f64,
    pub holds: bool,
}

impl SBoundReport {
    pub fn worst(&self) -> f64 {
        self.minima.iter().map(|m| m.1).fold(f64::INFINITY, f64::min)
    }
}

/// Monitors the lower bound `S >= -n / (2t)` along a trajectory.
pub fn s_lower_bound_monitor(traj: &FlowTrajectory, tol: f64) -> Result<SBoundReport> {
    let n = traj.grid().dim() as f64;
    let mut minima = Vec::with_capacity(traj.last());
    for k in 1..=traj.last() {
        let t = traj.time(k);
        let s = traj.s_scalar(k)?;
        minima.push((t, s.min() + n / (2.0 * t)));
    }
    let holds = minima.iter().all(|m| m.1 >= -tol);
    Ok(SBoundReport { minima, tol, holds })
}

/// `amp * sin(2 pi x / L) * sin(2 pi y / L)` (or `amp * sin(2 pi x / L)` in 1D).
pub fn sine_product(grid: &PeriodicGrid, amp: f64) -> ScalarField {
    let periods = grid.periods().to_vec();
    ScalarField::from_fn(grid, |x| {
        x.iter()
            .zip(&periods)
            .fold(amp, |acc, (&xi, &l)| acc * (std::f64::consts::TAU * xi / l).sin())
    })
}
