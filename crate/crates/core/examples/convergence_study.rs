//! Observed convergence orders of the evolution identities under `(h, dt) -> (h/2, dt/4)`.
//!
//!     cargo run --example convergence_study -- [levels]

use harnack_lab::harnack::HarnackParams;
use harnack_lab::scenario::{HeatSetup, Scenario};
use harnack_lab::verify::{convergence_study, IdentityId};
use harnack_lab::{TerminalProfile, TimeFn};

fn main() -> harnack_lab::Result<()> {
    let levels: usize = std::env::args().nth(1).map_or(3, |s| s.parse().expect("levels"));
    let heat = HeatSetup {
        gamma: TimeFn::constant(0.5),
        a: 1.0,
        terminal: TerminalProfile::fourier(0.2),
        gauge: TimeFn::Power { coeff: 1.0, exponent: 2.0 },
    };
    let base = Scenario::ricci_conformal(32, 0.1, 0.004, 1e-4, heat);
    let params = HarnackParams { alpha: 2.0, beta: 1.0, a: 1.0, b: 0.5, c: -1.0, d: -2.0, lambda: 2.0 };
    let table = convergence_study(&base, &IdentityId::ALL, &params, levels)?;
    for rep in &table.reports {
        let res: Vec<String> = rep.levels.iter().map(|l| format!("{:.2e}", l.linf)).collect();
        let order = match rep.order {
            Some(o) => format!("{o:.2}"),
            None if rep.algebraic => "exact".into(),
            None => "bound".into(),
        };
        println!("{:<12} {:>6}  {:<5} {}", rep.id.name(), order, rep.passed, res.join(" "));
    }
    Ok(())
}
