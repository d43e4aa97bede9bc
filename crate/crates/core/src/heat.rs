//! The nonlinear backward heat equation `df/dt = -Lap f + gamma f log f + a S f` solved along
//! a stored flow.
//!
//! In reversed time `tau = T - t` the equation reads `df/dtau = Lap f - a S f - gamma f log f`
//! and is parabolic, so it is integrated forward in `tau` from terminal data at `t = T`.
//! Snapshot `k` of the flow holds `tau_j` with `j = K - k`.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::FlowTrajectory;
use crate::grid::{sym_index, sym_len, PeriodicGrid, ScalarField};
use crate::timefn::TimeFn;

/// Values at or below this abort the solve instead of being clamped.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// Tolerance on `max f < 1` for the sub-unity monitor.
pub const SUB_UNITY_TOL: f64 = 1e-10;

/// Terminal data `f(tau = 0, .)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalProfile {
    /// `value` everywhere.
    Constant { value: f64 },
    /// `mean + amplitude * sin(2 pi k.x / L)` with an integer wavevector `k`.
    Fourier { mean: f64, amplitude: f64, mode: Vec<i32> },
    /// `peak * exp(-width * sum_i (1 - cos(2 pi x_i / L_i)))`, strictly inside `(0, peak]`.
    Bump { peak: f64, width: f64 },
    /// `exp(amplitude * sum_i sin(2 pi x_i / L_i))`, positive but unbounded by one.
    PositiveFree { amplitude: f64 },
}

impl TerminalProfile {
    /// `1/2 + amplitude * sin(2 pi x / L)` along the first axis.
    pub fn fourier(amplitude: f64) -> Self {
        TerminalProfile::Fourier { mean: 0.5, amplitude, mode: vec![1] }
    }

    pub fn evaluate(&self, grid: &PeriodicGrid) -> Result<ScalarField> {
        let periods = grid.periods().to_vec();
        let phase = |x: &[f64], i: usize| std::f64::consts::TAU * x[i] / periods[i];
        let f = match self {
            TerminalProfile::Constant { value } => ScalarField::constant(grid, *value),
            TerminalProfile::Fourier { mean, amplitude, mode } => {
                if mode.len() > grid.dim() || mode.iter().all(|&k| k == 0) {
                    return Err(Error::InvalidSpec(format!("bad Fourier wavevector {mode:?}")));
                }
                ScalarField::from_fn(grid, |x| {
                    let arg: f64 = mode.iter().enumerate().map(|(i, &k)| k as f64 * phase(x, i)).sum();
                    mean + amplitude * arg.sin()
                })
            }
            TerminalProfile::Bump { peak, width } => ScalarField::from_fn(grid, |x| {
                let e: f64 = (0..x.len()).map(|i| 1.0 - phase(x, i).cos()).sum();
                peak * (-width * e).exp()
            }),
            TerminalProfile::PositiveFree { amplitude } => ScalarField::from_fn(grid, |x| {
                let e: f64 = (0..x.len()).map(|i| phase(x, i).sin()).sum();
                (amplitude * e).exp()
            }),
        };
        let (p, min) = f.argmin();
        if !(min > POSITIVITY_FLOOR) || !f.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "terminal profile must be positive, got {min:e} at point {p}"
            )));
        }
        Ok(f)
    }
}

/// Coefficients of the heat equation and its terminal data.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatParams {
    /// `gamma(tau)`.
    pub gamma: TimeFn,
    /// Coefficient of `S f`; the potential in reversed time is `c S f` with `c = -a`.
    pub a: f64,
    pub terminal: TerminalProfile,
    /// Gauge `w(tau)` in `v = -log f - w(tau)`.
    pub gauge: TimeFn,
}

impl HeatParams {
    pub fn new(gamma: f64, a: f64, terminal: TerminalProfile) -> Self {
        HeatParams { gamma: TimeFn::constant(gamma), a, terminal, gauge: TimeFn::ZERO }
    }

    pub fn with_gamma(mut self, gamma: TimeFn) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_gauge(mut self, gauge: TimeFn) -> Self {
        self.gauge = gauge;
        self
    }

    /// The constant `c = -a` of the reversed-time form.
    pub fn c(&self) -> f64 {
        -self.a
    }
}

/// Positive solution `f(tau_j, .)` for `j = 0..=K`.
#[derive(Clone, Debug)]
pub struct HeatSolution {
    pub params: HeatParams,
    taus: Vec<f64>,
    f: Vec<ScalarField>,
    /// `Some(holds)` when the sub-unity property is expected (`gamma >= 0`, `a = 0`, `f < 1` initially).
    pub sub_unity: Option<bool>,
}

impl HeatSolution {
    /// Assembles a solution from stored fields (used when loading caches).
    pub fn from_parts(params: HeatParams, taus: Vec<f64>, f: Vec<ScalarField>, sub_unity: Option<bool>) -> Result<Self> {
        if taus.len() != f.len() || taus.is_empty() {
            return Err(Error::InvalidSpec("heat solution needs one field per tau".into()));
        }
        Ok(HeatSolution { params, taus, f, sub_unity })
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Index of the last `tau`, `K`.
    pub fn last(&self) -> usize {
        self.f.len() - 1
    }

    pub fn tau(&self, j: usize) -> f64 {
        self.taus[j]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn f(&self, j: usize) -> &ScalarField {
        &self.f[j]
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.f
    }

    /// `u = -log f` at `tau_j`.
    pub fn u(&self, j: usize) -> Result<ScalarField> {
        u_field(self, j)
    }

    /// `v = u - w(tau_j)`.
    pub fn v(&self, j: usize) -> Result<ScalarField> {
        v_field(self, j)
    }
}

/// Operator coefficients of one snapshot: `sqrt|g|`, `sqrt|g| g^ij` and `S`.
#[derive(Clone)]
struct Coeffs {
    sqrt_det: ScalarField,
    flux: Vec<ScalarField>,
    s: ScalarField,
}

impl Coeffs {
    fn of(traj: &FlowTrajectory, k: usize) -> Result<Self> {
        let snap = traj.snapshot(k)?;
        let geo = &snap.geometry;
        let n = traj.grid().dim();
        let mut flux = Vec::with_capacity(sym_len(n));
        for i in 0..n {
            for j in i..n {
                flux.push(geo.sqrt_det() * geo.inverse().component(i, j));
            }
        }
        Ok(Coeffs { sqrt_det: geo.sqrt_det().clone(), flux, s: snap.s })
    }

    fn midpoint(&self, other: &Coeffs) -> Coeffs {
        let avg = |a: &ScalarField, b: &ScalarField| a.zip_map(b, |x, y| 0.5 * (x + y));
        Coeffs {
            sqrt_det: avg(&self.sqrt_det, &other.sqrt_det),
            flux: self.flux.iter().zip(&other.flux).map(|(a, b)| avg(a, b)).collect(),
            s: avg(&self.s, &other.s),
        }
    }

    fn laplacian(&self, grid: &PeriodicGrid, f: &ScalarField) -> ScalarField {
        let n = grid.dim();
        let df = grid.diff_all(f);
        let mut out = ScalarField::zeros(grid);
        for i in 0..n {
            let mut q = ScalarField::zeros(grid);
            for (j, dj) in df.iter().enumerate() {
                let a = &self.flux[sym_index(n, i, j)];
                for p in 0..grid.len() {
                    q[p] += a[p] * dj[p];
                }
            }
            out.axpy(1.0, &grid.diff(i, &q));
        }
        out.zip_map(&self.sqrt_det, |x, s| x / s)
    }
}

/// `Lap f - a S f - gamma f log f`.
fn heat_rhs(grid: &PeriodicGrid, c: &Coeffs, f: &ScalarField, a: f64, gamma: f64, tau: f64) -> Result<ScalarField> {
    if let Some(point) = f.first_non_finite() {
        return Err(Error::StabilityFailure { time: tau, point });
    }
    let (point, value) = f.argmin();
    if value <= POSITIVITY_FLOOR {
        return Err(Error::PositivityLoss { tau, point, value });
    }
    let mut out = c.laplacian(grid, f);
    for p in 0..grid.len() {
        out[p] -= a * c.s[p] * f[p] + gamma * f[p] * f[p].ln();
    }
    Ok(out)
}

/// Integrates the heat equation along `traj` with RK4 in `tau`, linearly interpolating the
/// operator coefficients at the half step.
pub fn solve_backward_heat(traj: &FlowTrajectory, params: &HeatParams) -> Result<HeatSolution> {
    let grid = traj.grid();
    let last = traj.last();
    let dt = traj.dt();
    let f0 = params.terminal.evaluate(grid)?;
    let expect_sub_unity = params.a == 0.0
        && params.gamma.sampled_range(0.0, traj.horizon(), 256).0 >= 0.0
        && f0.max() < 1.0;
    let mut sub_unity_holds = true;
    info!("solving backward heat equation over {last} steps (a = {}, gamma = {:?})", params.a, params.gamma);
    let mut taus = Vec::with_capacity(last + 1);
    let mut fields = Vec::with_capacity(last + 1);
    taus.push(traj.tau(0));
    fields.push(f0);
    let mut here = Coeffs::of(traj, traj.index_of_tau(0))?;
    for j in 0..last {
        let there = Coeffs::of(traj, traj.index_of_tau(j + 1))?;
        let mid = here.midpoint(&there);
        let tau = traj.tau(j);
        let f = &fields[j];
        let g = |s: f64| params.gamma.value(s);
        let k1 = heat_rhs(grid, &here, f, params.a, g(tau), tau)?;
        let mut s = f.clone();
        s.axpy(0.5 * dt, &k1);
        let k2 = heat_rhs(grid, &mid, &s, params.a, g(tau + 0.5 * dt), tau + 0.5 * dt)?;
        let mut s = f.clone();
        s.axpy(0.5 * dt, &k2);
        let k3 = heat_rhs(grid, &mid, &s, params.a, g(tau + 0.5 * dt), tau + 0.5 * dt)?;
        let mut s = f.clone();
        s.axpy(dt, &k3);
        let k4 = heat_rhs(grid, &there, &s, params.a, g(tau + dt), tau + dt)?;
        let mut next = f.clone();
        next.axpy(dt / 6.0, &k1);
        next.axpy(dt / 3.0, &k2);
        next.axpy(dt / 3.0, &k3);
        next.axpy(dt / 6.0, &k4);
        let tau_next = traj.tau(j + 1);
        if let Some(point) = next.first_non_finite() {
            return Err(Error::StabilityFailure { time: tau_next, point });
        }
        let (point, value) = next.argmin();
        if value <= POSITIVITY_FLOOR {
            return Err(Error::PositivityLoss { tau: tau_next, point, value });
        }
        if expect_sub_unity && next.max() >= 1.0 + SUB_UNITY_TOL {
            sub_unity_holds = false;
        }
        if (j + 1) % 500 == 0 {
            debug!("heat step {}/{last}, tau = {:.6}, f in [{:e}, {:e}]", j + 1, tau_next, value, next.max());
        }
        taus.push(tau_next);
        fields.push(next);
        here = there;
    }
    Ok(HeatSolution {
        params: params.clone(),
        taus,
        f: fields,
        sub_unity: expect_sub_unity.then_some(sub_unity_holds),
    })
}

/// `u = -log f` at `tau_j`.
pub fn u_field(sol: &HeatSolution, j: usize) -> Result<ScalarField> {
    let f = &sol.f[j];
    let (point, value) = f.argmin();
    if value <= 0.0 {
        return Err(Error::PositivityLoss { tau: sol.taus[j], point, value });
    }
    Ok(f.map(|x| -x.ln()))
}

/// `v = -log f - w(tau_j)`.
pub fn v_field(sol: &HeatSolution, j: usize) -> Result<ScalarField> {
    let w = sol.params.gauge.value(sol.taus[j]);
    Ok(u_field(sol, j)?.map(|u| u - w))
}

/// Centered-difference `tau`-derivative of a per-`tau` quantity at interior index `j`.
pub(crate) fn centered_tau<F>(last: usize, dt: f64, j: usize, mut at: F) -> Result<ScalarField>
where
    F: FnMut(usize) -> Result<ScalarField>,
{
    if j == 0 || j >= last {
        return Err(Error::BoundaryTime { index: j, last });
    }
    let (a, b) = (at(j + 1)?, at(j - 1)?);
    Ok(a.zip_map(&b, |x, y| (x - y) / (2.0 * dt)))
}

/// `du/dtau - (Lap u - |grad u|^2 - c S - gamma(tau) u)` at interior `tau_j`.
pub fn u_evolution_residual(sol: &HeatSolution, traj: &FlowTrajectory, j: usize) -> Result<ScalarField> {
    let lhs = centered_tau(sol.last(), traj.dt(), j, |i| sol.u(i))?;
    let snap = traj.snapshot(traj.index_of_tau(j))?;
    let geo = &snap.geometry;
    let u = sol.u(j)?;
    let lap = geo.laplacian(&u);
    let grad2 = geo.grad_norm2(&u);
    let gamma = sol.params.gamma.value(sol.tau(j));
    let c = sol.params.c();
    Ok(ScalarField::from_vec(
        (0..u.len())
            .map(|p| lhs[p] - (lap[p] - grad2[p] - c * snap.s[p] - gamma * u[p]))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{run_flow, FlowSpec, MetricState, Variant};
    use std::f64::consts::TAU;

    fn static_flat(n: usize, steps: usize, dt: f64) -> FlowTrajectory {
        let grid = PeriodicGrid::uniform(2, n, 1.0).unwrap();
        run_flow(&grid, MetricState::flat(&grid), &FlowSpec::new(Variant::Static, steps as f64 * dt, dt)).unwrap()
    }

    #[test]
    fn constants_are_invariant_without_nonlinearity() {
        let traj = static_flat(8, 10, 1e-3);
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::Constant { value: 0.3 })).unwrap();
        assert!(sol.fields().iter().all(|f| f.values().iter().all(|&x| x == 0.3)));
        assert_eq!(sol.sub_unity, Some(true));
        let r = u_evolution_residual(&sol, &traj, 5).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn constant_data_follows_log_decay() {
        let traj = static_flat(8, 200, 1e-3);
        let c0: f64 = 0.4;
        let sol = solve_backward_heat(&traj, &HeatParams::new(1.5, 0.0, TerminalProfile::Constant { value: c0 })).unwrap();
        for j in [50, 100, 200] {
            let exact = (-1.5 * sol.tau(j)).exp() * c0.ln();
            let got = sol.f(j)[3].ln();
            assert!(((got - exact) / exact).abs() <= 1e-8, "{got} vs {exact}");
        }
    }

    #[test]
    fn fourier_mode_decays_at_flat_rate() {
        let n = 32;
        let h = 1.0 / n as f64;
        let dt = 0.1 * h * h;
        let traj = static_flat(n, 400, dt);
        let eps = 0.2;
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::fourier(eps))).unwrap();
        let grid = traj.grid();
        let tau = sol.tau(400);
        let exact = ScalarField::from_fn(grid, |x| 0.5 + eps * (-TAU * TAU * tau).exp() * (TAU * x[0]).sin());
        let err = (sol.f(400) - &exact).max_abs();
        assert!(err < 5e-3 * eps, "{err}");
        assert_eq!(sol.sub_unity, Some(true));
    }

    #[test]
    fn gauge_shifts_v_only() {
        let traj = static_flat(8, 4, 1e-3);
        let params = HeatParams::new(0.0, 0.0, TerminalProfile::fourier(0.1)).with_gauge(TimeFn::Power { coeff: 1.0, exponent: 2.0 });
        let sol = solve_backward_heat(&traj, &params).unwrap();
        let u = sol.u(3).unwrap();
        let v = sol.v(3).unwrap();
        let w = sol.tau(3) * sol.tau(3);
        for p in 0..u.len() {
            assert_eq!(v[p], u[p] - w);
        }
        let grid = traj.grid();
        assert_eq!(grid.diff(0, &u), grid.diff(0, &v.map(|x| x + w)));
    }

    #[test]
    fn terminal_profiles_and_positivity_errors() {
        let grid = PeriodicGrid::uniform(2, 8, 1.0).unwrap();
        let bump = TerminalProfile::Bump { peak: 0.9, width: 1.0 }.evaluate(&grid).unwrap();
        assert!(bump.max() <= 0.9 && bump.min() > 0.0);
        let free = TerminalProfile::PositiveFree { amplitude: 0.5 }.evaluate(&grid).unwrap();
        assert!(free.max() > 1.0);
        assert!(TerminalProfile::fourier(0.6).evaluate(&grid).is_err());
        assert!(TerminalProfile::Constant { value: 0.0 }.evaluate(&grid).is_err());
        assert!(TerminalProfile::Fourier { mean: 0.5, amplitude: 0.1, mode: vec![0, 0] }.evaluate(&grid).is_err());
    }

    #[test]
    fn interior_only_residual() {
        let traj = static_flat(8, 4, 1e-3);
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::fourier(0.1))).unwrap();
        assert!(matches!(u_evolution_residual(&sol, &traj, 0), Err(Error::BoundaryTime { .. })));
        assert!(matches!(u_evolution_residual(&sol, &traj, 4), Err(Error::BoundaryTime { .. })));
    }

    #[test]
    fn u_of_known_values() {
        let traj = static_flat(8, 2, 1e-3);
        let one = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::Constant { value: 1.0 })).unwrap();
        assert_eq!(one.u(2).unwrap().max_abs(), 0.0);
        let e = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::Constant { value: (-1.0f64).exp() })).unwrap();
        assert!(e.u(0).unwrap().values().iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }
}
