//! Declarative description of one numerical experiment: grid, flow with its initial data, and
//! heat equation. Refinement levels of the same experiment share everything except `n` and `dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{run_flow, sine_product, stability_bound, FlowSpec, FlowTrajectory, MetricState, Variant};
use crate::geometry::{conformal_metric, MetricGeometry};
use crate::grid::{PeriodicGrid, ScalarField, SymTensorField, Variance};
use crate::heat::{solve_backward_heat, HeatParams, HeatSolution, TerminalProfile};
use crate::timefn::TimeFn;

fn default_dim() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSetup {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Points per axis.
    pub n: usize,
    #[serde(default = "one")]
    pub period: f64,
}

impl GridSetup {
    pub fn build(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::uniform(self.dim, self.n, self.period)
    }
}

/// Initial metric selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMetric {
    Flat,
    /// `factor * delta`.
    Scaled { factor: f64 },
    /// `exp(2 phi) delta` with `phi = amplitude * prod_i sin(2 pi x_i / L)`.
    Conformal { amplitude: f64 },
}

impl InitialMetric {
    pub fn build(&self, grid: &PeriodicGrid) -> SymTensorField {
        match *self {
            InitialMetric::Flat => SymTensorField::identity(grid, Variance::Lower),
            InitialMetric::Scaled { factor } => SymTensorField::identity(grid, Variance::Lower).scale(factor),
            InitialMetric::Conformal { amplitude } => conformal_metric(grid, &sine_product(grid, amplitude)),
        }
    }
}

/// `amplitude * cos(2 pi k.x / L + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveProfile {
    pub amplitude: f64,
    pub mode: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

impl WaveProfile {
    pub fn new(amplitude: f64, mode: Vec<i32>) -> Self {
        WaveProfile { amplitude, mode, phase: 0.0 }
    }

    pub fn build(&self, grid: &PeriodicGrid) -> Result<ScalarField> {
        if self.mode.len() > grid.dim() {
            return Err(Error::InvalidSpec(format!("wavevector {:?} exceeds the grid dimension", self.mode)));
        }
        let periods = grid.periods().to_vec();
        Ok(ScalarField::from_fn(grid, |x| {
            let arg: f64 = self
                .mode
                .iter()
                .enumerate()
                .map(|(i, &k)| std::f64::consts::TAU * k as f64 * x[i] / periods[i])
                .sum();
            self.amplitude * (arg + self.phase).cos()
        }))
    }
}

fn default_alpha() -> TimeFn {
    TimeFn::constant(2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSetup {
    pub variant: Variant,
    /// Final time `T`.
    pub horizon: f64,
    pub dt: f64,
    pub metric: InitialMetric,
    /// Initial List scalar.
    #[serde(default)]
    pub psi: Option<WaveProfile>,
    /// Initial Müller map components.
    #[serde(default)]
    pub phi: Vec<WaveProfile>,
    /// Müller coupling schedule.
    #[serde(default = "default_alpha")]
    pub alpha: TimeFn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSetup {
    pub gamma: TimeFn,
    pub a: f64,
    pub terminal: TerminalProfile,
    #[serde(default)]
    pub gauge: TimeFn,
}

impl HeatSetup {
    pub fn params(&self) -> HeatParams {
        HeatParams { gamma: self.gamma.clone(), a: self.a, terminal: self.terminal.clone(), gauge: self.gauge.clone() }
    }
}

/// A grid, a flow with initial data and a heat equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: GridSetup,
    pub flow: FlowSetup,
    pub heat: HeatSetup,
}

impl Scenario {
    /// Ricci flow from `exp(2 phi) delta`, `phi = amplitude sin(2 pi x) sin(2 pi y)`, on the unit torus.
    pub fn ricci_conformal(n: usize, amplitude: f64, horizon: f64, dt: f64, heat: HeatSetup) -> Self {
        Scenario {
            grid: GridSetup { dim: 2, n, period: 1.0 },
            flow: FlowSetup {
                variant: Variant::Ricci,
                horizon,
                dt,
                metric: InitialMetric::Conformal { amplitude },
                psi: None,
                phi: Vec::new(),
                alpha: default_alpha(),
            },
            heat,
        }
    }

    /// The flat metric held fixed.
    pub fn static_flat(n: usize, horizon: f64, dt: f64, heat: HeatSetup) -> Self {
        let mut s = Scenario::ricci_conformal(n, 0.0, horizon, dt, heat);
        s.flow.variant = Variant::Static;
        s.flow.metric = InitialMetric::Flat;
        s
    }

    pub fn flow_spec(&self) -> FlowSpec {
        let f = &self.flow;
        match f.variant {
            Variant::Mueller => FlowSpec::mueller(f.phi.len(), f.alpha.clone(), f.horizon, f.dt),
            v => FlowSpec::new(v, f.horizon, f.dt),
        }
    }

    pub fn initial_state(&self, grid: &PeriodicGrid) -> Result<MetricState> {
        let mut state = MetricState::new(self.flow.metric.build(grid));
        if let Some(psi) = &self.flow.psi {
            state = state.with_psi(psi.build(grid)?);
        }
        if !self.flow.phi.is_empty() {
            state = state.with_maps(self.flow.phi.iter().map(|p| p.build(grid)).collect::<Result<_>>()?);
        }
        Ok(state)
    }

    /// Checks everything that can be checked without integrating: grid, flow spec, initial data,
    /// the step size against the stability bound at `t = 0`, and the terminal profile.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        let spec = self.flow_spec();
        spec.validate()?;
        let state = self.initial_state(&grid)?;
        state.check_consistent(&spec)?;
        MetricGeometry::new(&grid, &state.g)?;
        let bound = stability_bound(&grid, &state.g)?;
        if spec.dt > bound {
            return Err(Error::StepTooLarge { dt: spec.dt, bound, time: 0.0 });
        }
        self.heat.terminal.evaluate(&grid)?;
        Ok(())
    }

    pub fn trajectory(&self) -> Result<FlowTrajectory> {
        let grid = self.grid.build()?;
        run_flow(&grid, self.initial_state(&grid)?, &self.flow_spec())
    }

    pub fn heat_solution(&self, traj: &FlowTrajectory) -> Result<HeatSolution> {
        solve_backward_heat(traj, &self.heat.params())
    }

    /// Level `level` of the joint refinement `(h, dt) -> (h / 2, dt / 4)`.
    pub fn refined(&self, level: u32) -> Scenario {
        let mut s = self.clone();
        s.grid.n = self.grid.n << level;
        s.flow.dt = self.flow.dt / 4f64.powi(level as i32);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat() -> HeatSetup {
        HeatSetup { gamma: TimeFn::ZERO, a: 0.0, terminal: TerminalProfile::fourier(0.2), gauge: TimeFn::ZERO }
    }

    #[test]
    fn refinement_keeps_the_horizon() {
        let s = Scenario::ricci_conformal(16, 0.3, 0.01, 1e-4, heat());
        let r = s.refined(2);
        assert_eq!(r.grid.n, 64);
        assert_eq!(r.flow.dt, 1e-4 / 16.0);
        assert_eq!(r.flow_spec().steps(), 16 * s.flow_spec().steps());
    }

    #[test]
    fn oversized_step_fails_validation_with_the_bound() {
        let s = Scenario::static_flat(16, 0.01, 1e-2, heat());
        match s.validate() {
            Err(Error::StepTooLarge { bound, .. }) => assert!((bound - 0.2 / 256.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert!(Scenario::static_flat(16, 0.01, 1e-4, heat()).validate().is_ok());
    }

    #[test]
    fn parses_from_toml() {
        let text = r#"
            [grid]
            n = 16
            [flow]
            variant = "list"
            horizon = 0.01
            dt = 1e-4
            metric = { kind = "conformal", amplitude = 0.1 }
            psi = { amplitude = 0.2, mode = [1, 0] }
            [heat]
            gamma = { kind = "constant", value = 1.0 }
            a = 1.0
            terminal = { kind = "fourier", mean = 0.5, amplitude = 0.2, mode = [1] }
        "#;
        let s: Scenario = toml::from_str(text).unwrap();
        assert_eq!(s.flow.variant, Variant::List);
        assert_eq!(s.grid.dim, 2);
        s.validate().unwrap();
        assert!(toml::from_str::<Scenario>(&text.replace("a = 1.0", "a = 1.0\nbogus = 2")).is_err());
    }
}
