//! Closed forms of the error term for List's flow and Müller's flow against the values
//! computed from the discrete trajectory.
//!
//!     cargo run --example list_mueller_probe

use harnack_lab::flows::sine_product;
use harnack_lab::harnack::example_identity_probe;
use harnack_lab::scenario::{HeatSetup, Scenario, WaveProfile};
use harnack_lab::{ScalarField, TerminalProfile, TimeFn, Variance, Variant, VectorField};

fn main() -> harnack_lab::Result<()> {
    let heat = HeatSetup { gamma: TimeFn::ZERO, a: 1.0, terminal: TerminalProfile::fourier(0.2), gauge: TimeFn::ZERO };
    let cases = [
        ("list", Variant::List, TimeFn::constant(2.0)),
        ("mueller, alpha = 2", Variant::Mueller, TimeFn::constant(2.0)),
        ("mueller, alpha = 2/(1+t)", Variant::Mueller, TimeFn::Decay { scale: 2.0 }),
    ];
    for (label, variant, alpha) in cases {
        println!("{label}");
        for (n, dt) in [(16, 4e-4), (32, 1e-4), (64, 2.5e-5)] {
            let mut s = Scenario::ricci_conformal(n, 0.3, 0.02, dt, heat.clone());
            s.flow.variant = variant;
            let wave = WaveProfile::new(0.3, vec![1, 1]);
            if variant == Variant::List {
                s.flow.psi = Some(wave);
            } else {
                s.flow.phi = vec![wave];
                s.flow.alpha = alpha.clone();
            }
            let traj = s.trajectory()?;
            let grid = traj.grid().clone();
            let x = VectorField::new(
                vec![sine_product(&grid, 1.0), ScalarField::from_fn(&grid, |x| (std::f64::consts::TAU * x[0]).cos())],
                Variance::Raised,
            );
            let rel: Vec<String> = [1.0, 2.0]
                .iter()
                .map(|&a| {
                    let p = example_identity_probe(&traj, traj.last() / 2, &x, a)?;
                    Ok(format!("a = {a}: {:.3e}", p.residual.max_abs() / p.closed_form.max_abs().max(1.0)))
                })
                .collect::<harnack_lab::Result<_>>()?;
            println!("  n = {n:>3}: {}", rel.join(", "));
        }
    }
    Ok(())
}
