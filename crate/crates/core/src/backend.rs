//! Thin LP/MILP model layer over the HiGHS engine.
//!
//! Solver modules build a [`LinearModel`] and hand it to [`solve`]; nothing
//! outside this file touches the engine directly.
//!
//! Environment:
//! - `DRNS_ENGINE`: engine name, only `highs` is built in.
//! - `DRNS_THREADS`: thread count passed to the engine.
//! - `DRNS_DUMP_LP`: directory; every solved model is also written there in
//!   LP format.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense as HSense};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct VarDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(Var, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct LinearModel {
    pub sense: Sense,
    vars: Vec<VarDef>,
    costs: Vec<f64>,
    offset: f64,
    rows: Vec<Constraint>,
}

impl LinearModel {
    pub fn new(sense: Sense) -> Self {
        LinearModel { sense, vars: Vec::new(), costs: Vec::new(), offset: 0.0, rows: Vec::new() }
    }

    fn push_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, integer: bool) -> Var {
        assert!(lower <= upper, "variable bounds {lower} > {upper}");
        self.vars.push(VarDef { name: name.into(), lower, upper, integer });
        self.costs.push(0.0);
        Var(self.vars.len() - 1)
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Var {
        self.push_var(name, lower, upper, false)
    }

    pub fn add_free_var(&mut self, name: impl Into<String>) -> Var {
        self.push_var(name, f64::NEG_INFINITY, f64::INFINITY, false)
    }

    pub fn add_int_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Var {
        self.push_var(name, lower, upper, true)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Var {
        self.push_var(name, 0.0, 1.0, true)
    }

    /// Adds `coef` to the objective coefficient of `v`.
    pub fn add_obj(&mut self, v: Var, coef: f64) {
        self.costs[v.0] += coef;
    }

    pub fn add_obj_constant(&mut self, c: f64) {
        self.offset += c;
    }

    /// Nonzero objective coefficients.
    pub fn objective_terms(&self) -> Vec<(Var, f64)> {
        self.costs.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(k, &c)| (Var(k), c)).collect()
    }

    pub fn objective_constant(&self) -> f64 {
        self.offset
    }

    /// Drops every objective coefficient and the constant.
    pub fn clear_objective(&mut self) {
        self.costs.iter_mut().for_each(|c| *c = 0.0);
        self.offset = 0.0;
    }

    pub fn set_bounds(&mut self, v: Var, lower: f64, upper: f64) {
        assert!(lower <= upper, "variable bounds {lower} > {upper}");
        self.vars[v.0].lower = lower;
        self.vars[v.0].upper = upper;
    }

    pub fn add_row(&mut self, name: impl Into<String>, terms: Vec<(Var, f64)>, cmp: Cmp, rhs: f64) -> usize {
        debug_assert!(terms.iter().all(|(v, _)| v.0 < self.vars.len()));
        self.rows.push(Constraint { name: name.into(), terms, cmp, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var(&self, v: Var) -> &VarDef {
        &self.vars[v.0]
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn objective_coef(&self, v: Var) -> f64 {
        self.costs[v.0]
    }

    /// The same model with integrality dropped.
    pub fn relaxed(&self) -> LinearModel {
        let mut out = self.clone();
        for v in &mut out.vars {
            v.integer = false;
        }
        out
    }

    pub fn is_mip(&self) -> bool {
        self.vars.iter().any(|v| v.integer)
    }

    /// Objective at a full assignment of variable values.
    pub fn objective_at(&self, values: &[f64]) -> f64 {
        self.offset + self.costs.iter().zip(values).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Largest bound or row violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (d, &x) in self.vars.iter().zip(values) {
            worst = worst.max(d.lower - x).max(x - d.upper);
            if d.integer {
                worst = worst.max((x - x.round()).abs());
            }
        }
        for r in &self.rows {
            let lhs: f64 = r.terms.iter().map(|(v, c)| c * values[v.0]).sum();
            worst = worst.max(match r.cmp {
                Cmp::Le => lhs - r.rhs,
                Cmp::Ge => r.rhs - lhs,
                Cmp::Eq => (lhs - r.rhs).abs(),
            });
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveParams {
    pub time_limit: Option<f64>,
    pub mip_gap: f64,
    pub feasibility_tol: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams { time_limit: None, mip_gap: 1e-9, feasibility_tol: 1e-7 }
    }
}

impl SolveParams {
    /// Looser gap for timing runs.
    pub fn benchmark() -> Self {
        SolveParams { mip_gap: 1e-6, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    Limit,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: Status,
    pub objective: f64,
    pub values: Option<Vec<f64>>,
    /// Row duals, only for pure LPs solved to optimality.
    pub duals: Option<Vec<f64>>,
    pub gap: Option<f64>,
    pub wall_time: f64,
}

impl SolveOutcome {
    pub fn value(&self, v: Var) -> f64 {
        self.values.as_ref().expect("solve outcome carries no primal values")[v.0]
    }

    pub fn values_of(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.value(v)).collect()
    }

    /// Values of an optimal solve, or an error naming `what`.
    pub fn expect_optimal(&self, what: &str) -> Result<&[f64]> {
        match (&self.status, &self.values) {
            (Status::Optimal, Some(v)) => Ok(v),
            (s, _) => Err(Error::Backend(format!("{what}: solver status {s:?}"))),
        }
    }
}

fn engine_check() -> Result<()> {
    match std::env::var("DRNS_ENGINE") {
        Ok(name) if !name.eq_ignore_ascii_case("highs") => {
            Err(Error::Backend(format!("engine '{name}' is not available; this build supports 'highs'")))
        }
        _ => Ok(()),
    }
}

static DUMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

fn maybe_dump(model: &LinearModel) {
    let Some(dir) = std::env::var_os("DRNS_DUMP_LP") else { return };
    let n = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = PathBuf::from(dir).join(format!("model-{}-{n:05}.lp", std::process::id()));
    match std::fs::File::create(&path) {
        Ok(mut f) => {
            if let Err(e) = f.write_all(to_lp_string(model).as_bytes()) {
                log::warn!("could not write {}: {e}", path.display());
            }
        }
        Err(e) => log::warn!("could not create {}: {e}", path.display()),
    }
}

const MAX_COLUMNS: usize = 50_000_000;

pub fn solve(model: &LinearModel, params: &SolveParams) -> Result<SolveOutcome> {
    solve_from(model, params, None)
}

/// Like [`solve`], seeding a MIP with a known assignment of every variable.
pub fn solve_from(model: &LinearModel, params: &SolveParams, warm: Option<&[f64]>) -> Result<SolveOutcome> {
    engine_check()?;
    if model.num_vars() > MAX_COLUMNS || model.num_rows() > MAX_COLUMNS {
        return Err(Error::TooLarge(format!("{} columns, {} rows", model.num_vars(), model.num_rows())));
    }
    maybe_dump(model);
    let start = Instant::now();

    if model.num_vars() == 0 {
        // The engine reports an empty model as an error; answer directly.
        let feasible = model.rows.iter().all(|r| match r.cmp {
            Cmp::Le => 0.0 <= r.rhs + params.feasibility_tol,
            Cmp::Ge => 0.0 >= r.rhs - params.feasibility_tol,
            Cmp::Eq => r.rhs.abs() <= params.feasibility_tol,
        });
        return Ok(SolveOutcome {
            status: if feasible { Status::Optimal } else { Status::Infeasible },
            objective: model.offset,
            values: feasible.then(Vec::new),
            duals: feasible.then(|| vec![0.0; model.num_rows()]),
            gap: None,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }

    let mut pb = RowProblem::default();
    let cols: Vec<_> = model
        .vars
        .iter()
        .zip(&model.costs)
        .map(|(d, &c)| {
            if d.integer {
                pb.add_integer_column(c, d.lower..=d.upper)
            } else {
                pb.add_column(c, d.lower..=d.upper)
            }
        })
        .collect();
    for r in &model.rows {
        let factors: Vec<_> = r.terms.iter().map(|&(v, c)| (cols[v.0], c)).collect();
        match r.cmp {
            Cmp::Le => pb.add_row(f64::NEG_INFINITY..=r.rhs, factors),
            Cmp::Ge => pb.add_row(r.rhs..=f64::INFINITY, factors),
            Cmp::Eq => pb.add_row(r.rhs..=r.rhs, factors),
        }
    }
    let sense = match model.sense {
        Sense::Minimize => HSense::Minimise,
        Sense::Maximize => HSense::Maximise,
    };
    let mut hm = pb.try_optimise(sense).map_err(|s| Error::Backend(format!("could not load model: {s:?}")))?;
    if std::env::var_os("DRNS_SOLVER_LOG").is_none() {
        hm.make_quiet();
    } else {
        hm.set_option("output_flag", true);
        hm.set_option("log_to_console", true);
    }
    hm.set_option("random_seed", 0);
    hm.set_option("mip_rel_gap", params.mip_gap);
    hm.set_option("mip_abs_gap", params.mip_gap);
    hm.set_option("primal_feasibility_tolerance", params.feasibility_tol);
    hm.set_option("dual_feasibility_tolerance", params.feasibility_tol);
    hm.set_option("mip_feasibility_tolerance", params.feasibility_tol);
    if let Some(t) = params.time_limit {
        hm.set_option("time_limit", t.max(0.0));
    }
    if let Some(x) = warm {
        if x.len() == model.num_vars() {
            hm.try_set_solution(Some(x), None, None, None).map_err(|s| Error::Backend(format!("rejected start: {s:?}")))?;
        }
    }
    if let Some(n) = std::env::var("DRNS_THREADS").ok().and_then(|s| s.parse::<u32>().ok()) {
        if let Some(n) = std::num::NonZeroU32::new(n) {
            hm.set_threads(n);
        }
    }
    let solved = hm.try_solve().map_err(|s| Error::Backend(format!("engine run failed: {s:?}")))?;
    let mip = model.is_mip();
    let has_primal = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
    let status = match solved.status() {
        HighsModelStatus::Optimal => Status::Optimal,
        HighsModelStatus::Infeasible => Status::Infeasible,
        HighsModelStatus::Unbounded => Status::Unbounded,
        HighsModelStatus::UnboundedOrInfeasible => {
            // HiGHS cannot always tell which; a feasible point means unbounded.
            if has_primal {
                Status::Unbounded
            } else {
                Status::Infeasible
            }
        }
        HighsModelStatus::ReachedTimeLimit
        | HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit
        | HighsModelStatus::ObjectiveBound
        | HighsModelStatus::ObjectiveTarget
        | HighsModelStatus::ReachedInterrupt
        | HighsModelStatus::ReachedMemoryLimit => Status::Limit,
        other => return Err(Error::Backend(format!("engine returned status {other:?}"))),
    };
    let keep_primal = matches!(status, Status::Optimal) || (status == Status::Limit && has_primal);
    let sol = solved.get_solution();
    let values = keep_primal.then(|| sol.columns().to_vec());
    let duals = (status == Status::Optimal && !mip).then(|| sol.dual_rows().to_vec());
    let objective = match &values {
        Some(v) => model.objective_at(v),
        None => f64::NAN,
    };
    let gap = mip.then(|| solved.mip_gap()).filter(|g| g.is_finite());
    Ok(SolveOutcome { status, objective, values, duals, gap, wall_time: start.elapsed().as_secs_f64() })
}

fn lp_name(s: &str, fallback: &str, idx: usize) -> String {
    let clean: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.".contains(c) { c } else { '_' })
        .collect();
    if clean.is_empty() || clean.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        format!("{fallback}{idx}_{clean}")
    } else {
        format!("{clean}_{idx}")
    }
}

fn lp_terms(out: &mut String, terms: &[(Var, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for (v, c) in terms {
        let _ = write!(out, " {} {} {}", if *c < 0.0 { '-' } else { '+' }, c.abs(), names[v.0]);
    }
}

/// The model in CPLEX LP text format.
pub fn to_lp_string(model: &LinearModel) -> String {
    let names: Vec<String> = model.vars.iter().enumerate().map(|(k, d)| lp_name(&d.name, "x", k)).collect();
    let mut out = String::new();
    out.push_str(match model.sense {
        Sense::Minimize => "Minimize\n obj:",
        Sense::Maximize => "Maximize\n obj:",
    });
    let obj: Vec<(Var, f64)> =
        model.costs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(k, &c)| (Var(k), c)).collect();
    if names.is_empty() {
        out.push_str(" 0");
    } else {
        lp_terms(&mut out, &obj, &names);
    }
    if model.offset != 0.0 {
        let _ = write!(out, " {} {}", if model.offset < 0.0 { '-' } else { '+' }, model.offset.abs());
    }
    out.push_str("\nSubject To\n");
    for (k, r) in model.rows.iter().enumerate() {
        let _ = write!(out, " {}:", lp_name(&r.name, "r", k));
        lp_terms(&mut out, &r.terms, &names);
        let op = match r.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", r.rhs);
    }
    out.push_str("Bounds\n");
    for (d, n) in model.vars.iter().zip(&names) {
        match (d.lower.is_finite(), d.upper.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {n} free");
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {n} <= {}", d.lower, d.upper);
            }
            (true, false) => {
                let _ = writeln!(out, " {n} >= {}", d.lower);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {n} <= {}", d.upper);
            }
        }
    }
    let ints: Vec<&String> = model.vars.iter().zip(&names).filter(|(d, _)| d.integer).map(|(_, n)| n).collect();
    if !ints.is_empty() {
        out.push_str("General\n");
        for n in ints {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}
