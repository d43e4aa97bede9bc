//! Backward heat equation on the static flat torus against the exact Fourier mode, and the
//! scalar ODE for spatially constant data with `gamma > 0`.
//!
//!     cargo run --example solve_heat

use std::f64::consts::TAU;

use harnack_lab::{run_flow, solve_backward_heat, FlowSpec, HeatParams, MetricState, PeriodicGrid, ScalarField, TerminalProfile, Variant};

fn main() -> harnack_lab::Result<()> {
    let eps = 0.2;
    for n in [16, 32, 64] {
        let grid = PeriodicGrid::uniform(2, n, 1.0)?;
        let h = grid.min_spacing();
        let steps = (0.02 / (0.1 * h * h)).ceil();
        let spec = FlowSpec::new(Variant::Static, 0.02, 0.02 / steps);
        let traj = run_flow(&grid, MetricState::flat(&grid), &spec)?;
        let sol = solve_backward_heat(&traj, &HeatParams::new(0.0, 0.0, TerminalProfile::fourier(eps)))?;

        let j = sol.last();
        let tau = sol.tau(j);
        let exact = ScalarField::from_fn(&grid, |x| 0.5 + eps * (-TAU * TAU * tau).exp() * (TAU * x[0]).sin());
        let err = (sol.f(j) - &exact).max_abs();
        println!("n = {n:>3}: |f - exact| at tau = {tau} is {err:.3e}; 0 < f < 1 kept: {:?}", sol.sub_unity);
    }

    // log f(tau) = e^{-gamma tau} log c0 for constant data
    let grid = PeriodicGrid::uniform(2, 8, 1.0)?;
    let traj = run_flow(&grid, MetricState::flat(&grid), &FlowSpec::new(Variant::Static, 0.5, 1e-3))?;
    let (gamma, c0) = (1.5, 0.3f64);
    let sol = solve_backward_heat(&traj, &HeatParams::new(gamma, 0.0, TerminalProfile::Constant { value: c0 }))?;
    let j = sol.last();
    let exact = (-gamma * sol.tau(j)).exp() * c0.ln();
    let got = sol.f(j).values()[0].ln();
    println!("constant data: log f = {got:.12}, closed form {exact:.12}, rel err {:.2e}", ((got - exact) / exact).abs());
    Ok(())
}
