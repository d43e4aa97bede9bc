//! Checks a differential Harnack estimate on a run and prints the per-tau margins.
//!
//!     cargo run --example check_theorem -- [A1|A2|Aa|B|Bvar|C|E]

use harnack_lab::scenario::{HeatSetup, InitialMetric, Scenario};
use harnack_lab::{check_theorem, CheckTolerances, TerminalProfile, TheoremId, TimeFn, Variant};

fn main() -> harnack_lab::Result<()> {
    let id: TheoremId = std::env::args().nth(1).unwrap_or_else(|| "A1".into()).parse()?;
    let (gamma, a) = match id {
        TheoremId::A1 => (1.0, 2.0),
        TheoremId::A2 | TheoremId::Aa => (1.0, 1.0),
        TheoremId::B | TheoremId::Bvar => (0.5, 0.0),
        TheoremId::C => (0.0, 0.0),
        TheoremId::E => (0.0, 1.0),
    };
    let heat = HeatSetup {
        gamma: if id == TheoremId::Bvar { TimeFn::Affine { offset: 1.0, slope: 1.0 } } else { TimeFn::constant(gamma) },
        a,
        terminal: TerminalProfile::fourier(0.2),
        gauge: TimeFn::ZERO,
    };
    let mut scenario = Scenario::ricci_conformal(32, 0.2, 0.05, 1e-4, heat);
    match id {
        // needs S >= 0: a scaled flat torus stays flat under Ricci flow
        TheoremId::A2 => scenario.flow.metric = InitialMetric::Scaled { factor: 2.0 },
        // stated on a static background
        TheoremId::B | TheoremId::Bvar | TheoremId::C => {
            scenario.flow.variant = Variant::Static;
            scenario.flow.metric = InitialMetric::Flat;
        }
        _ => {}
    }

    let traj = scenario.trajectory()?;
    let sol = scenario.heat_solution(&traj)?;
    let tol = CheckTolerances { bound_a: if id == TheoremId::Bvar { 0.5 } else { 0.0 }, ..CheckTolerances::default() };
    let report = check_theorem(id, &traj, &sol, &tol)?;

    let stride = (report.rows.len() / 12).max(1);
    println!("{:>10} {:>14} {:>12}", "tau", "margin", "slack");
    for r in report.rows.iter().step_by(stride) {
        println!("{:>10.5} {:>14.6e} {:>12.3e}", r.tau, r.margin, r.slack);
    }
    for h in &report.hypotheses {
        println!("hypothesis {}: worst {:.4e}, holds {}", h.description, h.worst_margin, h.holds);
    }
    if let Some(m) = &report.monotone {
        println!("worst dip {:.4e}, net change in t {:.4e}", m.worst_dip, m.net_change_in_t);
    }
    println!("theorem {id}: {:?} (slack {})", report.verdict, report.slack_formula);
    Ok(())
}
