//! Residuals of the evolution identities on one Ricci-flow run, plus the purely algebraic
//! identities on random fields.
//!
//!     cargo run --example verify_identities

use harnack_lab::harnack::HarnackParams;
use harnack_lab::scenario::{HeatSetup, Scenario};
use harnack_lab::verify::{random_algebraic_check, verify_identity, IdentityId, IdentityKind};
use harnack_lab::{TerminalProfile, TimeFn};

fn main() -> harnack_lab::Result<()> {
    let heat = HeatSetup {
        gamma: TimeFn::constant(0.5),
        a: 1.0,
        terminal: TerminalProfile::fourier(0.2),
        gauge: TimeFn::Power { coeff: 1.0, exponent: 2.0 },
    };
    let scenario = Scenario::ricci_conformal(32, 0.1, 0.004, 1e-4, heat);
    let traj = scenario.trajectory()?;
    let sol = scenario.heat_solution(&traj)?;
    // c = -a; alpha != beta
    let params = HarnackParams { alpha: 2.0, beta: 1.0, a: 1.0, b: 0.5, c: -1.0, d: -2.0, lambda: 2.0 };

    for id in IdentityId::ALL {
        let rep = verify_identity(id, &traj, &sol, &params)?;
        let l = &rep.levels[0];
        println!("{:<12} linf {:.3e} relative {:.3e} slack {:.3e}", id.name(), l.linf, l.relative, l.slack);
    }
    let grid = traj.grid().clone();
    for id in IdentityId::ALL.into_iter().filter(|id| id.kind() == IdentityKind::Algebraic) {
        let worst = random_algebraic_check(id, &grid, 50, 2024)?;
        println!("{:<12} worst relative residual over 50 random draws {worst:.3e}", id.name());
    }
    Ok(())
}
