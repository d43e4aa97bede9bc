//! Config-driven orchestration: flow, heat solve, theorem checks, identity verification and
//! refinement studies, with on-disk caches and CSV/plot-script artifacts.
//!
//! The configuration is TOML with the sections `[grid]`, `[flow]`, `[heat]`, `[check]` and
//! `[output]`; see `examples/configs/` for complete files. Every artifact of a stage is a pure
//! function of the configuration and the seed.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flows::{s_lower_bound_monitor, FlowTrajectory, MetricState};
use crate::grid::{sym_len, PeriodicGrid, ScalarField, SymTensorField, Variance};
use crate::harnack::{
    check_theorem, classical_harnack_along, random_space_time_pairs, CheckTolerances, ClassicalHarnackRow, HarnackParams,
    HarnackReport, SpaceTimePath, TheoremId, DEFAULT_KAPPA, DEFAULT_TAU_MIN_STEPS,
};
use crate::heat::{HeatSolution, TerminalProfile};
use crate::scenario::{FlowSetup, GridSetup, HeatSetup, Scenario};
use crate::verify::{convergence_study, random_algebraic_check, verify_identity, IdentityId, IdentityKind, ResidualReport};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_HYPOTHESIS: i32 = 4;
pub const EXIT_CONFIG: i32 = 5;

/// Random field draws per algebraic identity in `verify-identities`.
pub const ALGEBRAIC_DRAWS: usize = 50;

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}
fn default_tau_min_steps() -> usize {
    DEFAULT_TAU_MIN_STEPS
}
fn default_eig_tol() -> f64 {
    1e-12
}
fn default_levels() -> usize {
    3
}
fn default_true() -> bool {
    true
}

/// Constants `alpha, beta, b, d, lambda` of the general Harnack quantity used by the identity
/// checks. `a` and `c = -a` come from the heat section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConstants {
    pub alpha: f64,
    pub beta: f64,
    pub b: f64,
    pub d: f64,
    pub lambda: f64,
}

impl Default for IdentityConstants {
    fn default() -> Self {
        IdentityConstants { alpha: 2.0, beta: 1.0, b: 0.5, d: -2.0, lambda: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default)]
    pub theorems: Vec<String>,
    #[serde(default)]
    pub identities: Vec<String>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_tau_min_steps")]
    pub tau_min_steps: usize,
    /// Constant `A` bounding `gamma'` terms in the time-dependent `gamma` theorem.
    #[serde(default)]
    pub bound_a: f64,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    /// Monitor `S >= -n/(2t)` along the flow.
    #[serde(default)]
    pub s_bound: bool,
    /// Number of random space-time pairs for the integrated Harnack inequality.
    #[serde(default)]
    pub path_pairs: usize,
    /// Sideways bulge of the pair paths (0 for straight lines).
    #[serde(default)]
    pub path_bulge: f64,
    #[serde(default)]
    pub seed: u64,
    /// Refinement levels of the `convergence` stage.
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub constants: IdentityConstants,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            theorems: Vec::new(),
            identities: Vec::new(),
            kappa: DEFAULT_KAPPA,
            tau_min_steps: DEFAULT_TAU_MIN_STEPS,
            bound_a: 0.0,
            eig_tol: default_eig_tol(),
            s_bound: false,
            path_pairs: 0,
            path_bulge: 0.0,
            seed: 0,
            levels: default_levels(),
            constants: IdentityConstants::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Gnuplot,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Gnuplot]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Store trajectory and heat solution for later stages.
    #[serde(default = "default_true")]
    pub cache: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), formats: default_formats(), cache: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSetup,
    pub flow: FlowSetup,
    pub heat: HeatSetup,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses TOML; errors carry the offending line and field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scenario(&self) -> Scenario {
        Scenario { grid: self.grid.clone(), flow: self.flow.clone(), heat: self.heat.clone() }
    }

    pub fn theorem_ids(&self) -> Result<Vec<TheoremId>> {
        self.check.theorems.iter().map(|s| s.parse()).collect()
    }

    pub fn identity_ids(&self) -> Result<Vec<IdentityId>> {
        self.check.identities.iter().map(|s| s.parse()).collect()
    }

    pub fn tolerances(&self) -> CheckTolerances {
        CheckTolerances {
            kappa: self.check.kappa,
            tau_min_steps: self.check.tau_min_steps,
            bound_a: self.check.bound_a,
            eig_tol: self.check.eig_tol,
        }
    }

    /// Harnack constants for the identity checks, with `a` from the heat section and `c = -a`.
    pub fn identity_params(&self) -> HarnackParams {
        let k = &self.check.constants;
        let mut p = HarnackParams::new(k.alpha, k.beta, self.heat.a, k.b, k.d);
        p.lambda = k.lambda;
        p
    }

    /// Everything that can go wrong before computing: ids, parameter requirements of every
    /// requested check, stability of the first step, tolerances.
    pub fn validate(&self) -> Result<()> {
        self.scenario().validate()?;
        let params = self.heat.params();
        for id in self.theorem_ids()? {
            id.check_heat_params(&params, self.flow.horizon)?;
        }
        let ids = self.identity_ids()?;
        if !ids.is_empty() {
            self.identity_params().require_nondegenerate()?;
        }
        for id in ids {
            if id.needs_constant_gamma() && !self.heat.gamma.is_constant() {
                return Err(Error::WrongHeatParams { theorem: id.name().into(), reason: "needs a constant gamma".into() });
            }
        }
        if self.check.path_pairs > 0 {
            TheoremId::A1.check_heat_params(&params, self.flow.horizon)?;
        }
        if !(self.check.kappa > 0.0) {
            return Err(Error::Config(format!("check.kappa must be positive, got {}", self.check.kappa)));
        }
        let steps = self.scenario().flow_spec().steps();
        if self.check.tau_min_steps >= steps {
            return Err(Error::Config(format!(
                "check.tau_min_steps = {} leaves nothing to check in {steps} steps",
                self.check.tau_min_steps
            )));
        }
        if self.check.levels < 3 {
            return Err(Error::InsufficientLevels(self.check.levels));
        }
        Ok(())
    }

    /// Content hash of the sections the trajectory depends on.
    pub fn trajectory_key(&self) -> String {
        hash_sections(&[&toml_of(&self.grid), &toml_of(&self.flow)])
    }

    /// Content hash of the sections the heat solution depends on.
    pub fn solution_key(&self) -> String {
        hash_sections(&[&toml_of(&self.grid), &toml_of(&self.flow), &toml_of(&self.heat)])
    }
}

fn toml_of<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("section serializes")
}

fn hash_sections(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Flow, heat, checks and identity verification in one go.
    All,
    RunFlow,
    SolveHeat,
    Check,
    VerifyIdentities,
    Convergence,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::All, Stage::RunFlow, Stage::SolveHeat, Stage::Check, Stage::VerifyIdentities, Stage::Convergence];

    pub fn name(self) -> &'static str {
        match self {
            Stage::All => "all",
            Stage::RunFlow => "run-flow",
            Stage::SolveHeat => "solve-heat",
            Stage::Check => "check",
            Stage::VerifyIdentities => "verify-identities",
            Stage::Convergence => "convergence",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}` (expected one of all, run-flow, solve-heat, check, verify-identities, convergence)")))
    }
}

/// Command-line overrides of the configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub stage: Stage,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { stage: Stage::All, out: None, seed: None, levels: None }
    }
}

/// Exit code and the files written.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    /// Report lines, also written to `report-<stage>.txt`.
    pub report: Vec<String>,
}

/// Exit code of an error: configuration and workflow mistakes are 5, numerical failures 3.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonSpdMetric { .. }
        | Error::StabilityFailure { .. }
        | Error::PositivityLoss { .. }
        | Error::FlowFailed { .. }
        | Error::BoundaryTime { .. }
        | Error::Io(_) => EXIT_NUMERICAL,
        Error::StepTooLarge { time, .. } if *time > 0.0 => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Runs one stage. Never panics on bad input; every failure ends up in the exit code and report.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Outcome {
    let mut cfg = config.clone();
    if let Some(out) = &opts.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.check.seed = seed;
    }
    if let Some(levels) = opts.levels {
        cfg.check.levels = levels;
    }
    if let Err(e) = cfg.validate() {
        return Outcome { exit_code: EXIT_CONFIG, artifacts: Vec::new(), report: vec![format!("invalid configuration: {e}")] };
    }
    let mut ctx = Context { cfg: &cfg, artifacts: Vec::new(), report: Vec::new(), exit: EXIT_PASS };
    ctx.line(format!("stage {}", opts.stage.name()));
    if let Err(e) = ctx.run_stage(opts.stage) {
        let code = exit_code_for(&e);
        ctx.line(format!("error: {e}"));
        ctx.raise(code);
    }
    ctx.line(format!("exit code {}", ctx.exit));
    let report_path = cfg.output.dir.join(format!("report-{}.txt", opts.stage.name()));
    let text = ctx.report.join("\n") + "\n";
    if fs::create_dir_all(&cfg.output.dir).and_then(|_| fs::write(&report_path, text)).is_ok() {
        ctx.artifacts.push(report_path);
    } else {
        warn!("could not write {}", report_path.display());
    }
    Outcome { exit_code: ctx.exit, artifacts: ctx.artifacts, report: ctx.report }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    artifacts: Vec<PathBuf>,
    report: Vec<String>,
    exit: i32,
}

/// How a stage treats existing caches.
#[derive(Clone, Copy, PartialEq)]
enum CachePolicy {
    /// Reuse a matching cache, recompute otherwise.
    Reuse,
    /// A cache must exist and match.
    Require,
}

impl Context<'_> {
    fn line(&mut self, s: String) {
        debug!("{s}");
        self.report.push(s);
    }

    fn raise(&mut self, code: i32) {
        self.exit = self.exit.max(code);
    }

    fn dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn wants(&self, f: Format) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn run_stage(&mut self, stage: Stage) -> Result<()> {
        fs::create_dir_all(self.dir())?;
        match stage {
            Stage::All => {
                let traj = self.trajectory(CachePolicy::Reuse)?;
                let sol = self.solution(&traj, true)?;
                self.checks(&traj, &sol)?;
                self.identities(&traj, &sol)
            }
            Stage::RunFlow => {
                let traj = self.compute_trajectory()?;
                self.flow_outputs(&traj)
            }
            Stage::SolveHeat => {
                let traj = self.trajectory(CachePolicy::Require)?;
                let sol = self.solution(&traj, false)?;
                drop(sol);
                Ok(())
            }
            Stage::Check => {
                let traj = self.trajectory(CachePolicy::Require)?;
                let sol = self.solution(&traj, true)?;
                self.checks(&traj, &sol)
            }
            Stage::VerifyIdentities => {
                let traj = self.trajectory(CachePolicy::Require)?;
                let sol = self.solution(&traj, true)?;
                self.identities(&traj, &sol)
            }
            Stage::Convergence => self.convergence(),
        }
    }

    fn traj_cache(&self) -> PathBuf {
        self.dir().join("cache").join("trajectory.bin")
    }

    fn sol_cache(&self) -> PathBuf {
        self.dir().join("cache").join("heat.bin")
    }

    fn compute_trajectory(&mut self) -> Result<FlowTrajectory> {
        let traj = self.cfg.scenario().trajectory()?;
        self.line(format!(
            "flow {} on {}^{} points, {} steps of {:e} up to T = {}",
            traj.variant().name(),
            self.cfg.grid.n,
            self.cfg.grid.dim,
            traj.last(),
            traj.dt(),
            traj.horizon()
        ));
        if self.cfg.output.cache {
            let path = self.traj_cache();
            write_trajectory(&path, &self.cfg.trajectory_key(), &traj)?;
            self.artifacts.push(path);
        }
        Ok(traj)
    }

    fn trajectory(&mut self, policy: CachePolicy) -> Result<FlowTrajectory> {
        let path = self.traj_cache();
        let key = self.cfg.trajectory_key();
        match (read_key(&path)?, policy) {
            (Some(found), _) if found == key => {
                info!("trajectory cache hash matches ({key})");
                self.line(format!("trajectory cache hit (hash {})", &key[..16]));
                read_trajectory(&path, &key, &self.cfg.scenario())
            }
            (Some(found), CachePolicy::Require) => {
                Err(Error::StaleCache { artifact: "trajectory".into(), expected: key, found })
            }
            (None, CachePolicy::Require) => Err(Error::MissingCache("trajectory".into())),
            (_, CachePolicy::Reuse) => {
                let traj = self.compute_trajectory()?;
                self.flow_outputs(&traj)?;
                Ok(traj)
            }
        }
    }

    /// Heat solution for `traj`: from a matching cache when `reuse`, else solved and cached.
    fn solution(&mut self, traj: &FlowTrajectory, reuse: bool) -> Result<HeatSolution> {
        let path = self.sol_cache();
        let key = self.cfg.solution_key();
        if reuse {
            match read_key(&path)? {
                Some(found) if found == key => {
                    info!("heat cache hash matches ({key})");
                    self.line(format!("heat cache hit (hash {})", &key[..16]));
                    return read_solution(&path, &key, &self.cfg.heat);
                }
                Some(found) => return Err(Error::StaleCache { artifact: "heat solution".into(), expected: key, found }),
                None => {}
            }
        }
        let sol = self.cfg.scenario().heat_solution(traj)?;
        self.line(format!(
            "heat solved backward over {} steps: f in [{:.6e}, {:.6e}] at tau = T",
            sol.last(),
            sol.f(sol.last()).min(),
            sol.f(sol.last()).max()
        ));
        if let Some(holds) = sol.sub_unity {
            self.line(format!("0 < f < 1 preserved: {holds}"));
        }
        if self.cfg.output.cache {
            write_solution(&path, &key, &sol)?;
            self.artifacts.push(path);
        }
        self.heat_outputs(&sol)?;
        Ok(sol)
    }

    fn write_csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        if !self.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.dir().join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        self.artifacts.push(path);
        Ok(())
    }

    fn write_plot(&mut self, name: &str, csv: &str, x: (usize, &str), ys: &[(usize, &str)], title: &str) -> Result<()> {
        if !self.wants(Format::Gnuplot) {
            return Ok(());
        }
        let path = self.dir().join(name);
        fs::write(&path, gnuplot_script(csv, x, ys, title))?;
        self.artifacts.push(path);
        Ok(())
    }

    fn flow_outputs(&mut self, traj: &FlowTrajectory) -> Result<()> {
        let n = traj.grid().dim() as f64;
        let mut rows = Vec::with_capacity(traj.last() + 1);
        for k in 0..=traj.last() {
            let s = traj.s_scalar(k)?;
            let t = traj.time(k);
            let bound = if k == 0 { f64::NAN } else { s.min() + n / (2.0 * t) };
            rows.push(format!("{k},{},{},{},{}", e17(t), e17(s.min()), e17(s.max()), e17(bound)));
        }
        self.write_csv("flow.csv", "step,t,s_min,s_max,s_min_plus_n_over_2t", rows)?;
        self.write_plot("flow.gp", "flow.csv", (2, "t"), &[(3, "min S"), (4, "max S")], "S along the flow")
    }

    fn heat_outputs(&mut self, sol: &HeatSolution) -> Result<()> {
        let rows: Vec<String> = (0..=sol.last())
            .map(|j| {
                let f = sol.f(j);
                format!("{j},{},{},{}", e17(sol.tau(j)), e17(f.min()), e17(f.max()))
            })
            .collect();
        self.write_csv("heat.csv", "j,tau,f_min,f_max", rows)?;
        self.write_plot("heat.gp", "heat.csv", (2, "tau"), &[(3, "min f"), (4, "max f")], "backward heat solution")
    }

    fn checks(&mut self, traj: &FlowTrajectory, sol: &HeatSolution) -> Result<()> {
        let tol = self.cfg.tolerances();
        for id in self.cfg.theorem_ids()? {
            let rep = check_theorem(id, traj, sol, &tol)?;
            self.theorem_outputs(&rep, traj.grid())?;
        }
        if self.cfg.check.s_bound {
            let h = traj.grid().min_spacing();
            let scale = (0..=traj.last()).try_fold(0.0f64, |m, k| Ok::<_, Error>(m.max(traj.s_scalar(k)?.max_abs())))?;
            let slack = self.cfg.check.kappa * (h * h + traj.dt()) * scale.max(1.0);
            let rep = s_lower_bound_monitor(traj, slack)?;
            self.line(format!(
                "S >= -n/(2t): worst min(S + n/(2t)) = {:.6e} against slack {:.3e}: {}",
                rep.worst(),
                slack,
                if rep.holds { "pass" } else { "VIOLATED" }
            ));
            if !rep.holds {
                self.raise(EXIT_VIOLATION);
            }
        }
        if self.cfg.check.path_pairs > 0 {
            let pairs = random_space_time_pairs(traj.grid(), traj.last(), self.cfg.check.path_pairs, self.cfg.check.seed)?;
            let paths = pairs
                .iter()
                .map(|&((p1, k1), (p2, k2))| SpaceTimePath::perturbed(traj.grid(), p1, k1, p2, k2, self.cfg.check.path_bulge))
                .collect::<Result<Vec<_>>>()?;
            let rows = classical_harnack_along(traj, sol, &paths, self.cfg.check.kappa)?;
            self.pair_outputs(&rows)?;
        }
        Ok(())
    }

    fn theorem_outputs(&mut self, rep: &HarnackReport, grid: &PeriodicGrid) -> Result<()> {
        let name = rep.theorem.name();
        self.line(format!(
            "theorem {name}: {:?}; worst margin {:.6e}, worst margin + slack {:.6e} ({} times checked, slack {})",
            rep.verdict,
            rep.worst_margin(),
            rep.worst_slacked_margin(),
            rep.rows.len(),
            rep.slack_formula
        ));
        for h in &rep.hypotheses {
            self.line(format!(
                "  hypothesis {}: worst {:.6e} at tau = {:.6e} (point {}), tol {:.3e}, unbounded points {}: {}",
                h.description,
                h.worst_margin,
                h.worst_tau,
                h.worst_point,
                h.tol,
                h.unbounded_points,
                if h.holds { "holds" } else { "FAILS" }
            ));
        }
        if let Some(m) = &rep.monotone {
            self.line(format!(
                "  monotonicity in t: worst dip {:.6e} (slack {:.3e}), net change {:.6e}, nonincreasing in t: {}",
                m.worst_dip, m.dip_slack, m.net_change_in_t, m.nonincreasing_in_t
            ));
        }
        if rep.form_discrepancy > 0.0 {
            self.line(format!("  quantity-form vs direct-form discrepancy {:.3e}", rep.form_discrepancy));
        }
        let dim = grid.dim();
        let coord_cols: Vec<String> = ["x", "y"][..dim].iter().map(|s| s.to_string()).collect();
        let header = format!("tau,t,margin,slack,point,{}", coord_cols.join(","));
        let rows: Vec<String> = rep
            .rows
            .iter()
            .map(|r| {
                let coords: Vec<String> = r.coords.iter().map(|&c| e17(c)).collect();
                format!("{},{},{},{},{},{}", e17(r.tau), e17(r.time), e17(r.margin), e17(r.slack), r.point, coords.join(","))
            })
            .collect();
        let csv = format!("check_{name}.csv");
        self.write_csv(&csv, &header, rows)?;
        self.write_plot(&format!("check_{name}.gp"), &csv, (1, "tau"), &[(3, "margin"), (4, "slack")], &format!("theorem {name}"))?;
        self.raise(rep.verdict.exit_code());
        Ok(())
    }

    fn pair_outputs(&mut self, rows: &[ClassicalHarnackRow]) -> Result<()> {
        let failed = rows.iter().filter(|r| !r.holds).count();
        let worst = rows.iter().map(|r| r.rhs - r.lhs + r.slack).fold(f64::INFINITY, f64::min);
        self.line(format!(
            "integrated Harnack inequality on {} space-time pairs: {} fail; worst rhs - lhs + slack {:.6e}",
            rows.len(),
            failed,
            worst
        ));
        let csv_rows: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    r.start.0,
                    e17(r.start.1),
                    r.end.0,
                    e17(r.end.1),
                    e17(r.lhs),
                    e17(r.rhs),
                    e17(r.lhs_time_weighted),
                    e17(r.slack),
                    r.holds
                )
            })
            .collect();
        self.write_csv("harnack_pairs.csv", "p1,t1,p2,t2,lhs,rhs,lhs_time_weighted,slack,holds", csv_rows)?;
        if failed > 0 {
            self.raise(EXIT_VIOLATION);
        }
        Ok(())
    }

    fn identities(&mut self, traj: &FlowTrajectory, sol: &HeatSolution) -> Result<()> {
        let ids = self.cfg.identity_ids()?;
        if ids.is_empty() {
            return Ok(());
        }
        let params = self.cfg.identity_params();
        let mut rows = Vec::new();
        for id in ids {
            let rep = verify_identity(id, traj, sol, &params)?;
            let lvl = &rep.levels[0];
            // one level cannot show convergence; evolution residuals are informational here
            let counts = id.kind() != IdentityKind::Evolution;
            let mut verdict = if rep.passed { "pass" } else if counts { "FAIL" } else { "above slack (see convergence)" }.to_string();
            if id.kind() == IdentityKind::Algebraic {
                let random = random_algebraic_check(id, traj.grid(), ALGEBRAIC_DRAWS, self.cfg.check.seed)?;
                let ok = random <= crate::verify::ALGEBRAIC_TOL;
                verdict = format!("{verdict}; {ALGEBRAIC_DRAWS} random draws: max relative {random:.3e} {}", if ok { "pass" } else { "FAIL" });
                if !ok {
                    self.raise(EXIT_VIOLATION);
                }
            }
            self.line(format!(
                "identity {}: linf {:.6e}, relative {:.3e}, slack {:.3e}: {verdict}{}",
                id.name(),
                lvl.linf,
                lvl.relative,
                lvl.slack,
                rep.note.as_ref().map(|n| format!(" ({n})")).unwrap_or_default()
            ));
            if counts && !rep.passed {
                self.raise(EXIT_VIOLATION);
            }
            rows.push(level_row(&rep, 0, lvl));
        }
        self.write_csv("identities.csv", LEVEL_HEADER, rows)
    }

    fn convergence(&mut self) -> Result<()> {
        let mut ids = self.cfg.identity_ids()?;
        if ids.is_empty() {
            let constant = self.cfg.heat.gamma.is_constant();
            ids = IdentityId::ALL.into_iter().filter(|id| constant || !id.needs_constant_gamma()).collect();
        }
        let levels = self.cfg.check.levels;
        let table = convergence_study(&self.cfg.scenario(), &ids, &self.cfg.identity_params(), levels)?;
        let mut rows = Vec::new();
        for rep in &table.reports {
            let order = match (rep.order, rep.algebraic) {
                (Some(o), _) => format!("order {o:.3}"),
                (None, true) => "exact".to_string(),
                (None, false) => "one-sided".to_string(),
            };
            let per_level: Vec<String> = rep.levels.iter().map(|l| format!("{:.3e}", l.linf)).collect();
            self.line(format!(
                "convergence {}: {order}; linf per level [{}]: {}",
                rep.id.name(),
                per_level.join(", "),
                if rep.passed { "pass" } else { "FAIL" }
            ));
            if !rep.passed {
                self.raise(EXIT_VIOLATION);
            }
            for (k, lvl) in rep.levels.iter().enumerate() {
                rows.push(level_row(rep, k, lvl));
            }
        }
        self.write_csv("convergence.csv", LEVEL_HEADER, rows)?;
        self.write_plot(
            "convergence.gp",
            "convergence.csv",
            (4, "h"),
            &[(6, "linf")],
            "identity residuals under (h, dt) -> (h/2, dt/4)",
        )
    }
}

const LEVEL_HEADER: &str = "id,level,n,h,dt,linf,l2,relative,slack,order,passed";

fn level_row(rep: &ResidualReport, level: usize, l: &crate::verify::LevelResidual) -> String {
    format!(
        "{},{level},{},{},{},{},{},{},{},{},{}",
        rep.id.name(),
        l.n,
        e17(l.h),
        e17(l.dt),
        e17(l.linf),
        e17(l.l2),
        e17(l.relative),
        e17(l.slack),
        rep.order.map(e17).unwrap_or_default(),
        rep.passed
    )
}

/// 17 significant digits: enough to round-trip every `f64`.
fn e17(x: f64) -> String {
    format!("{x:.16e}")
}

fn gnuplot_script(csv: &str, x: (usize, &str), ys: &[(usize, &str)], title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot script; run from the output directory");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{}'", x.1);
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output '{}.png'", csv.trim_end_matches(".csv"));
    let plots: Vec<String> = ys.iter().map(|(c, t)| format!("'{csv}' using {}:{c} with lines title '{t}'", x.0)).collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

// Binary caches: magic, 64-byte hex key, then little-endian u64 sizes and f64 payload.

const TRAJ_MAGIC: &[u8; 8] = b"HLTRAJ01";
const HEAT_MAGIC: &[u8; 8] = b"HLHEAT01";

fn read_key(path: &Path) -> Result<Option<String>> {
    let mut file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut head = [0u8; 72];
    file.read_exact(&mut head)?;
    Ok(Some(String::from_utf8_lossy(&head[8..]).into_owned()))
}

struct Writer(BufWriter<fs::File>);

impl Writer {
    fn create(path: &Path, magic: &[u8; 8], key: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(magic)?;
        w.write_all(key.as_bytes())?;
        Ok(Writer(w))
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn field(&mut self, s: &ScalarField) -> Result<()> {
        for &v in s.values() {
            self.f64(v)?;
        }
        Ok(())
    }
    fn finish(mut self) -> Result<()> {
        Ok(self.0.flush()?)
    }
}

struct Reader(BufReader<fs::File>);

impl Reader {
    fn open(path: &Path, magic: &[u8; 8], key: &str, artifact: &str) -> Result<Self> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut head = [0u8; 72];
        r.read_exact(&mut head)?;
        if &head[..8] != magic {
            return Err(Error::Config(format!("{} is not a {artifact} cache", path.display())));
        }
        let found = String::from_utf8_lossy(&head[8..]).into_owned();
        if found != key {
            return Err(Error::StaleCache { artifact: artifact.into(), expected: key.into(), found });
        }
        Ok(Reader(r))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn field(&mut self, len: usize) -> Result<ScalarField> {
        (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>().map(ScalarField::from_vec)
    }
}

fn write_trajectory(path: &Path, key: &str, traj: &FlowTrajectory) -> Result<()> {
    let mut w = Writer::create(path, TRAJ_MAGIC, key)?;
    let first = traj.state(0);
    w.u64(traj.states().len() as u64)?;
    w.u64(first.psi.is_some() as u64)?;
    w.u64(first.phi.len() as u64)?;
    for st in traj.states() {
        w.f64(st.time)?;
        for c in st.g.components() {
            w.field(c)?;
        }
        if let Some(p) = &st.psi {
            w.field(p)?;
        }
        for p in &st.phi {
            w.field(p)?;
        }
    }
    w.finish()
}

fn read_trajectory(path: &Path, key: &str, scenario: &Scenario) -> Result<FlowTrajectory> {
    let grid = scenario.grid.build()?;
    let mut r = Reader::open(path, TRAJ_MAGIC, key, "trajectory")?;
    let (count, has_psi, maps) = (r.u64()? as usize, r.u64()? == 1, r.u64()? as usize);
    let (n, len) = (grid.dim(), grid.len());
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        let time = r.f64()?;
        let comps = (0..sym_len(n)).map(|_| r.field(len)).collect::<Result<Vec<_>>>()?;
        let mut comps = comps.into_iter();
        let g = SymTensorField::from_components(n, Variance::Lower, |_, _| comps.next().expect("component count"));
        let psi = if has_psi { Some(r.field(len)?) } else { None };
        let phi = (0..maps).map(|_| r.field(len)).collect::<Result<Vec<_>>>()?;
        states.push(MetricState { time, g, psi, phi });
    }
    FlowTrajectory::from_states(grid, scenario.flow_spec(), states)
}

fn write_solution(path: &Path, key: &str, sol: &HeatSolution) -> Result<()> {
    let mut w = Writer::create(path, HEAT_MAGIC, key)?;
    w.u64(sol.len() as u64)?;
    w.u64(sol.f(0).len() as u64)?;
    w.u64(match sol.sub_unity {
        None => 0,
        Some(false) => 1,
        Some(true) => 2,
    })?;
    for j in 0..sol.len() {
        w.f64(sol.tau(j))?;
        w.field(sol.f(j))?;
    }
    w.finish()
}

fn read_solution(path: &Path, key: &str, heat: &HeatSetup) -> Result<HeatSolution> {
    let mut r = Reader::open(path, HEAT_MAGIC, key, "heat solution")?;
    let (count, len, flag) = (r.u64()? as usize, r.u64()? as usize, r.u64()?);
    let mut taus = Vec::with_capacity(count);
    let mut f = Vec::with_capacity(count);
    for _ in 0..count {
        taus.push(r.f64()?);
        f.push(r.field(len)?);
    }
    let sub_unity = match flag {
        0 => None,
        1 => Some(false),
        _ => Some(true),
    };
    HeatSolution::from_parts(heat.params(), taus, f, sub_unity)
}

/// A small static-flat configuration (mostly for tests and the examples).
pub fn demo_config(n: usize, horizon: f64, dt: f64) -> RunConfig {
    RunConfig {
        grid: GridSetup { dim: 2, n, period: 1.0 },
        flow: Scenario::static_flat(n, horizon, dt, demo_heat()).flow,
        heat: demo_heat(),
        check: CheckSection::default(),
        output: OutputSection::default(),
    }
}

fn demo_heat() -> HeatSetup {
    HeatSetup {
        gamma: crate::timefn::TimeFn::ZERO,
        a: 0.0,
        terminal: TerminalProfile::fourier(0.2),
        gauge: crate::timefn::TimeFn::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_config(dir: &Path) -> RunConfig {
        let mut cfg = demo_config(8, 0.01, 1e-3);
        cfg.output.dir = dir.to_path_buf();
        cfg.check.theorems = vec!["C".into()];
        cfg
    }

    #[test]
    fn keys_track_only_their_sections() {
        let cfg = demo_config(8, 0.01, 1e-3);
        let mut other = cfg.clone();
        other.heat.a = 1.0;
        assert_eq!(cfg.trajectory_key(), other.trajectory_key());
        assert_ne!(cfg.solution_key(), other.solution_key());
        other.flow.dt = 5e-4;
        assert_ne!(cfg.trajectory_key(), other.trajectory_key());
        assert_eq!(cfg.trajectory_key().len(), 64);
    }

    #[test]
    fn caches_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tmp_config(dir.path());
        cfg.flow = Scenario::ricci_conformal(8, 0.1, 0.002, 1e-4, cfg.heat.clone()).flow;
        let s = cfg.scenario();
        let traj = s.trajectory().unwrap();
        let sol = s.heat_solution(&traj).unwrap();
        let (tp, hp) = (dir.path().join("t.bin"), dir.path().join("h.bin"));
        write_trajectory(&tp, &cfg.trajectory_key(), &traj).unwrap();
        write_solution(&hp, &cfg.solution_key(), &sol).unwrap();
        let traj2 = read_trajectory(&tp, &cfg.trajectory_key(), &s).unwrap();
        let sol2 = read_solution(&hp, &cfg.solution_key(), &cfg.heat).unwrap();
        assert_eq!(traj.states(), traj2.states());
        assert_eq!(sol.fields(), sol2.fields());
        assert_eq!(sol.taus(), sol2.taus());
        assert!(matches!(read_trajectory(&tp, "x", &s), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn stage_names_parse() {
        for st in Stage::ALL {
            assert_eq!(st.name().parse::<Stage>().unwrap(), st);
        }
        assert!("flow".parse::<Stage>().is_err());
    }

    #[test]
    fn unknown_ids_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tmp_config(dir.path());
        cfg.check.identities = vec!["NOPE".into()];
        let out = run(&cfg, &RunOptions::default());
        assert_eq!(out.exit_code, EXIT_CONFIG);
        assert!(out.artifacts.is_empty());
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code_for(&Error::StepTooLarge { dt: 1.0, bound: 0.5, time: 0.0 }), EXIT_CONFIG);
        assert_eq!(exit_code_for(&Error::StepTooLarge { dt: 1.0, bound: 0.5, time: 0.1 }), EXIT_NUMERICAL);
        assert_eq!(exit_code_for(&Error::PositivityLoss { tau: 0.1, point: 0, value: -1.0 }), EXIT_NUMERICAL);
        assert_eq!(exit_code_for(&Error::MissingCache("trajectory".into())), EXIT_CONFIG);
    }
}
