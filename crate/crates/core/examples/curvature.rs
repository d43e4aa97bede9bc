//! Scalar curvature of a conformal torus metric against its closed form, and the contracted
//! Bianchi identity, on three grids.
//!
//!     cargo run --example curvature

use std::f64::consts::TAU;

use harnack_lab::flows::sine_product;
use harnack_lab::geometry::{conformal_metric, MetricGeometry};
use harnack_lab::{PeriodicGrid, ScalarField};

fn main() -> harnack_lab::Result<()> {
    let amp = 0.3;
    let mut prev: Option<(f64, f64)> = None;
    println!("{:>5} {:>12} {:>12} {:>7} {:>7}", "n", "R error", "bianchi", "ratio", "ratio");
    for n in [16, 32, 64, 128] {
        let grid = PeriodicGrid::uniform(2, n, 1.0)?;
        let phi = sine_product(&grid, amp);
        let geo = MetricGeometry::new(&grid, &conformal_metric(&grid, &phi))?;
        let curv = geo.curvature();

        // R = -2 e^{-2 phi} Lap_flat phi, and Lap_flat phi = -2 (2 pi)^2 phi here
        let exact = ScalarField::from_fn(&grid, |x| {
            let p = amp * (TAU * x[0]).sin() * (TAU * x[1]).sin();
            4.0 * TAU * TAU * p * (-2.0 * p).exp()
        });
        let r_err = (&curv.scalar - &exact).max_abs();

        let div = geo.divergence(&curv.ricci);
        let grad = geo.gradient(&curv.scalar);
        let bianchi = (0..2)
            .flat_map(|l| (0..grid.len()).map(move |p| (l, p)))
            .map(|(l, p)| (2.0 * div.components[l][p] - grad.components[l][p]).abs())
            .fold(0.0, f64::max);

        match prev {
            Some((a, b)) => println!("{n:>5} {r_err:>12.4e} {bianchi:>12.4e} {:>7.2} {:>7.2}", a / r_err, b / bianchi),
            None => println!("{n:>5} {r_err:>12.4e} {bianchi:>12.4e}"),
        }
        prev = Some((r_err, bianchi));
    }
    Ok(())
}
