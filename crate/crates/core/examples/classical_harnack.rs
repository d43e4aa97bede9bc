//! Integrated Harnack inequality between random space-time points of a Ricci flow, and the
//! effect of bending the path on a static flat run.
//!
//!     cargo run --example classical_harnack -- [pairs] [seed]

use harnack_lab::harnack::{classical_harnack_along, classical_harnack_check, random_space_time_pairs, SpaceTimePath};
use harnack_lab::scenario::{HeatSetup, Scenario};
use harnack_lab::{TerminalProfile, TimeFn};

fn main() -> harnack_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(10, |s| s.parse().expect("pairs"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let heat = HeatSetup { gamma: TimeFn::constant(1.0), a: 2.0, terminal: TerminalProfile::fourier(0.2), gauge: TimeFn::ZERO };

    let ricci = Scenario::ricci_conformal(32, 0.2, 0.1, 1e-4, heat.clone());
    let traj = ricci.trajectory()?;
    let sol = ricci.heat_solution(&traj)?;
    let pairs = random_space_time_pairs(traj.grid(), traj.last(), count, seed)?;
    let rows = classical_harnack_check(&traj, &sol, &pairs, 10.0)?;
    for r in &rows {
        println!(
            "({:>4}, t={:.4}) -> ({:>4}, t={:.4}): lhs {:>10.4e} rhs {:>10.4e} {}",
            r.start.0,
            r.start.1,
            r.end.0,
            r.end.1,
            r.lhs,
            r.rhs,
            if r.holds { "ok" } else { "FAIL" }
        );
    }

    let flat = Scenario::static_flat(32, 0.1, 1e-4, heat);
    let traj = flat.trajectory()?;
    let sol = flat.heat_solution(&traj)?;
    let (p1, p2) = (0, traj.grid().len() / 2 + 8);
    let (k1, k2) = (100, traj.last() - 100);
    for bulge in [0.0, 0.05, 0.1, 0.2] {
        let path = SpaceTimePath::perturbed(traj.grid(), p1, k1, p2, k2, bulge)?;
        let row = &classical_harnack_along(&traj, &sol, &[path], 10.0)?[0];
        println!("bulge {bulge:.2}: rhs {:.6e}", row.rhs);
    }
    Ok(())
}
