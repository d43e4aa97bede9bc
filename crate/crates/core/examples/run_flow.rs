//! Ricci flow from a perturbed conformal metric: curvature decays toward the flat metric and
//! `S >= -n/(2t)` holds along the way.
//!
//!     cargo run --example run_flow -- [n] [T]

use harnack_lab::flows::{s_lower_bound_monitor, sine_product};
use harnack_lab::geometry::conformal_metric;
use harnack_lab::{run_flow, FlowSpec, MetricState, PeriodicGrid, Variant};

fn main() -> harnack_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(32, |s| s.parse().expect("n"));
    let horizon: f64 = args.next().map_or(0.05, |s| s.parse().expect("T"));

    let grid = PeriodicGrid::uniform(2, n, 1.0)?;
    let g0 = conformal_metric(&grid, &sine_product(&grid, 0.3));
    let h = grid.min_spacing();
    let dt = (0.1 * h * h).min(1e-4);
    let steps = (horizon / dt).ceil();
    let spec = FlowSpec::new(Variant::Ricci, horizon, horizon / steps);

    let traj = run_flow(&grid, MetricState::new(g0), &spec)?;
    let stride = (traj.last() / 10).max(1);
    println!("{:>10} {:>12} {:>12}", "t", "max |R|", "min R");
    for k in (0..=traj.last()).step_by(stride) {
        let r = traj.s_scalar(k)?;
        println!("{:>10.5} {:>12.5e} {:>12.5e}", traj.time(k), r.max_abs(), r.min());
    }

    let tol = 10.0 * (h * h + traj.dt());
    let bound = s_lower_bound_monitor(&traj, tol)?;
    println!("worst min(S + n/(2t)) = {:.4e}, holds: {}", bound.worst(), bound.holds);
    Ok(())
}
