//! Top-level solvers: the separation (cutting-plane) algorithm for any pool
//! structure and monolithic MILPs for the structured cases.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversary::{self, chain_members, ChainNetwork, Iterate};
use crate::ambiguity::{self, DEFAULT_TOL};
use crate::backend::{self, Cmp, LinearModel, Sense, SolveOutcome, SolveParams, Status, Var};
use crate::error::{Error, Result};
use crate::model::{classify_structure, validate, Instance, PoolStructureKind, SolveMethod, Staffing, StaffingSolution};
use crate::reformulation::{add_epigraphs, add_expansion, add_sup_rows, encode_cut, CutSet, Epigraphs, ExpansionVars};

#[derive(Clone, Debug)]
pub struct SeparationParams {
    /// Absolute tolerance on `theta >= separation value - eps`.
    pub eps: f64,
    pub max_iter: usize,
    /// Seconds for the whole loop.
    pub time_limit: Option<f64>,
    pub backend: SolveParams,
    /// Tolerance for the moment-feasibility precondition.
    pub feasibility_tol: f64,
}

impl Default for SeparationParams {
    fn default() -> Self {
        SeparationParams { eps: 1e-6, max_iter: 500, time_limit: None, backend: SolveParams::default(), feasibility_tol: DEFAULT_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub master_obj: f64,
    pub separation_value: f64,
    pub violation: f64,
    pub cuts: usize,
    pub wall_time: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} master_obj={:.9} separation_value={:.9} violation={:.3e} cuts={} wall_time={:.3}",
            self.iter, self.master_obj, self.separation_value, self.violation, self.cuts, self.wall_time
        )
    }
}

#[derive(Clone, Debug)]
pub struct SeparationResult {
    pub solution: StaffingSolution,
    pub log: Vec<IterationRecord>,
    /// Master iterate and `theta` at termination.
    pub final_iterate: Iterate,
    pub theta: f64,
}

/// Instance validation plus the moment-feasibility condition that does not
/// depend on staffing. Attendance conditions are checked on every level.
pub fn check_preconditions(instance: &Instance, tol: f64) -> Result<()> {
    let violations = validate(instance);
    if let Some(v) = violations.first() {
        return Err(Error::Invalid(format!("{}: {} ({} violation(s))", v.path, v.message, violations.len())));
    }
    ambiguity::verify_assumption(instance, tol)?;
    Ok(())
}

struct Master {
    model: LinearModel,
    ex: ExpansionVars,
    ep: Epigraphs,
    theta: Var,
}

fn build_master(instance: &Instance) -> Result<Master> {
    let mut model = LinearModel::new(Sense::Minimize);
    let ex = add_expansion(&mut model, instance);
    let ep = add_epigraphs(&mut model, instance, &ex)?;
    let theta = model.add_free_var("theta");
    model.add_obj(theta, 1.0);
    Ok(Master { model, ex, ep, theta })
}

fn staffing_from(instance: &Instance, ex: &ExpansionVars, values: &[f64]) -> Staffing {
    ex.iterate(values).staffing(instance)
}

fn solution(instance: &Instance, staffing: Staffing, dr_cost: f64, method: SolveMethod, structure: PoolStructureKind, cuts: usize, start: Instant) -> StaffingSolution {
    let first_stage_cost = instance.first_stage_cost(&staffing);
    StaffingSolution {
        w: staffing.w,
        y: staffing.y,
        dr_cost,
        first_stage_cost,
        worst_case_expectation: dr_cost - first_stage_cost,
        method,
        structure,
        cuts_used: cuts,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

pub fn solve_separation(instance: &Instance, params: &SeparationParams) -> Result<SeparationResult> {
    check_preconditions(instance, params.feasibility_tol)?;
    run_separation(instance, params, None)
}

fn run_separation(instance: &Instance, params: &SeparationParams, fixed: Option<&Staffing>) -> Result<SeparationResult> {
    let start = Instant::now();
    let structure = classify_structure(instance);
    let mut m = build_master(instance)?;
    if let Some(st) = fixed {
        m.ex.fix(&mut m.model, instance, st);
    }
    let members: Vec<Vec<usize>> = instance.pools.iter().map(|p| p.members.clone()).collect();
    let nj = instance.num_units();
    let zero = adversary::CutCoefficients {
        c_t: vec![0.0; nj],
        c_r: vec![0.0; nj],
        c_p: vec![0.0; instance.num_pools()],
        c_s: vec![0.0; instance.num_pools()],
    };
    let mut cuts = CutSet::default();
    for t in [false, true] {
        let seed = adversary::AdversaryPoint::from_t(&members, vec![t; nj], &zero);
        encode_cut(&mut m.model, m.theta, &m.ep, &seed, &mut cuts)?;
    }

    let mut log = Vec::new();
    let mut last: Option<(Staffing, f64)> = None;
    for iter in 1..=params.max_iter {
        let mut bp = params.backend;
        if let Some(limit) = params.time_limit {
            let left = limit - start.elapsed().as_secs_f64();
            if left <= 0.0 {
                return Err(not_converged(instance, last, "time limit", structure, cuts.len(), start));
            }
            bp.time_limit = Some(bp.time_limit.map_or(left, |t| t.min(left)));
        }
        let out = backend::solve(&m.model, &bp)?;
        if out.status == Status::Limit {
            return Err(not_converged(instance, last, "time limit in master", structure, cuts.len(), start));
        }
        let values = out.expect_optimal("separation master")?;
        let it = m.ex.iterate(values);
        let theta = values[m.theta.index()];
        let staffing = staffing_from(instance, &m.ex, values);
        last = Some((staffing.clone(), out.objective));

        let coeffs = adversary::coefficients(instance, &it);
        let point = adversary::separate(instance, structure, &coeffs)?;
        let violation = point.value - theta;
        let record = IterationRecord {
            iter,
            master_obj: out.objective,
            separation_value: point.value,
            violation,
            cuts: cuts.len(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!("{record}");
        log.push(record);

        let done = |cuts: &CutSet, log: Vec<IterationRecord>| SeparationResult {
            solution: solution(instance, staffing.clone(), out.objective, SolveMethod::Separation, structure, cuts.len(), start),
            log,
            final_iterate: it.clone(),
            theta,
        };
        if violation <= params.eps {
            return Ok(done(&cuts, log));
        }
        match encode_cut(&mut m.model, m.theta, &m.ep, &point, &mut cuts) {
            Ok(()) => {}
            Err(Error::DuplicateCut) if violation <= 1e-6 * (1.0 + theta.abs()) => return Ok(done(&cuts, log)),
            Err(Error::DuplicateCut) => {
                return Err(not_converged(
                    instance,
                    last,
                    &format!("stalled on a repeated cut with violation {violation:.3e}"),
                    structure,
                    cuts.len(),
                    start,
                ))
            }
            Err(e) => return Err(e),
        }
    }
    Err(not_converged(instance, last, "iteration limit", structure, cuts.len(), start))
}

fn not_converged(
    instance: &Instance,
    last: Option<(Staffing, f64)>,
    reason: &str,
    structure: PoolStructureKind,
    cuts: usize,
    start: Instant,
) -> Error {
    let (staffing, bound) = last.unwrap_or_else(|| (Staffing::lower(instance), f64::NAN));
    Error::NotConverged {
        reason: format!("{reason}; reported cost is the master lower bound"),
        best: Box::new(solution(instance, staffing, bound, SolveMethod::Separation, structure, cuts, start)),
    }
}

/// `theta >= [pool hinge] + sum (zeta + eta_e)` and, for every member `j`,
/// `theta >= eta_x_j + sum_{l<j} chi_l + sum_{l>j} (zeta_l + eta_e_l)`.
fn add_pool_block(model: &mut LinearModel, name: &str, members: &[usize], ep: &Epigraphs, hinge: Option<Var>) -> Var {
    let theta = model.add_free_var(format!("theta_{name}"));
    let mut low = vec![(theta, 1.0)];
    if let Some(h) = hinge {
        low.push((h, -1.0));
    }
    for &l in members {
        low.push((ep.zeta[l], -1.0));
        low.push((ep.eta_e[l], -1.0));
    }
    model.add_row(format!("{name}_low"), low, Cmp::Ge, 0.0);
    for (k, &j) in members.iter().enumerate() {
        let mut terms = vec![(theta, 1.0), (ep.eta_x[j], -1.0)];
        for &l in &members[..k] {
            terms.push((ep.chi[l], -1.0));
        }
        for &l in &members[k + 1..] {
            terms.push((ep.zeta[l], -1.0));
            terms.push((ep.eta_e[l], -1.0));
        }
        model.add_row(format!("{name}_branch[{j}]"), terms, Cmp::Ge, 0.0);
    }
    theta
}

fn add_chain_rows(model: &mut LinearModel, ep: &Epigraphs, len: usize) -> Var {
    let net = ChainNetwork::new(len);
    let pi: Vec<Var> = (0..net.num_nodes).map(|n| model.add_free_var(format!("pi[{n}]"))).collect();
    for (a, arc) in net.arcs.iter().enumerate() {
        let mut terms = vec![(pi[arc.from], 1.0), (pi[arc.to], -1.0)];
        if let Some((j, high)) = arc.terms.unit {
            if high {
                terms.push((ep.eta_x[j], -1.0));
            } else {
                terms.push((ep.zeta[j], -1.0));
                terms.push((ep.eta_e[j], -1.0));
            }
        }
        if let Some(i) = arc.terms.pool {
            terms.push((ep.pool[i], -1.0));
        }
        model.add_row(format!("arc[{a}]"), terms, Cmp::Ge, 0.0);
    }
    let theta = model.add_free_var("theta");
    model.add_row("theta_path", vec![(theta, 1.0), (pi[net.source()], -1.0), (pi[net.sink()], 1.0)], Cmp::Ge, 0.0);
    theta
}

/// Builds the monolithic model for `structure`; the objective already
/// contains the staffing terms and the returned expansion handles.
fn monolithic_model(instance: &Instance, structure: PoolStructureKind) -> Result<(LinearModel, ExpansionVars)> {
    let found = classify_structure(instance);
    if found != structure {
        return Err(Error::StructureMismatch { expected: structure, found });
    }
    let mut model = LinearModel::new(Sense::Minimize);
    let ex = add_expansion(&mut model, instance);
    let ep = add_epigraphs(&mut model, instance, &ex)?;
    let all: Vec<usize> = (0..instance.num_units()).collect();
    match structure {
        PoolStructureKind::NoPool => {
            let theta = add_pool_block(&mut model, "none", &all, &ep, None);
            model.add_obj(theta, 1.0);
        }
        PoolStructureKind::OnePool => {
            let theta = add_pool_block(&mut model, "pool0", &all, &ep, Some(ep.pool[0]));
            model.add_obj(theta, 1.0);
        }
        PoolStructureKind::Disjoint => {
            let mut covered = vec![false; instance.num_units()];
            for (i, p) in instance.pools.iter().enumerate() {
                let theta = add_pool_block(&mut model, &format!("pool{i}"), &p.members, &ep, Some(ep.pool[i]));
                model.add_obj(theta, 1.0);
                p.members.iter().for_each(|&j| covered[j] = true);
            }
            // A unit in no pool contributes max(c_t, c_r) on its own.
            for j in (0..instance.num_units()).filter(|&j| !covered[j]) {
                model.add_obj(ep.chi[j], 1.0);
            }
        }
        PoolStructureKind::Chained => {
            debug_assert_eq!(instance.pools.iter().map(|p| p.members.clone()).collect::<Vec<_>>(), chain_members(instance.num_units()));
            let theta = add_chain_rows(&mut model, &ep, instance.num_units());
            model.add_obj(theta, 1.0);
        }
        PoolStructureKind::Arbitrary => {
            return Err(Error::Invalid("no monolithic model for arbitrary pools; use separation".into()));
        }
    }
    Ok((model, ex))
}

pub fn solve_monolithic(instance: &Instance, structure: PoolStructureKind, params: &SolveParams) -> Result<StaffingSolution> {
    let start = Instant::now();
    check_preconditions(instance, DEFAULT_TOL)?;
    let (model, ex) = monolithic_model(instance, structure)?;
    let seed = rounded_start(instance, &model, &ex, params);
    let out = backend::solve_from(&model, params, seed.as_deref())?;
    let values = finish(&out, "monolithic MILP")?;
    let staffing = staffing_from(instance, &ex, values);
    Ok(solution(instance, staffing, out.objective, SolveMethod::Monolithic, structure, 0, start))
}

/// A feasible point for a MIP start: round the LP relaxation's staffing down
/// (which keeps the budget row satisfied) and solve the remaining LP.
fn rounded_start(instance: &Instance, model: &LinearModel, ex: &ExpansionVars, params: &SolveParams) -> Option<Vec<f64>> {
    if !model.is_mip() {
        return None;
    }
    let lp = backend::solve(&model.relaxed(), params).ok()?;
    let values = lp.values.as_ref().filter(|_| lp.status == Status::Optimal)?;
    let level = |bins: &[Var], weights: &[f64]| -> u32 {
        (bins.iter().zip(weights).map(|(b, w)| w * values[b.index()]).sum::<f64>() + 1e-6).floor() as u32
    };
    let w = instance.units.iter().enumerate().map(|(j, u)| u.staffing_bounds.lower + level(&ex.u[j], &ex.u_weights[j])).collect();
    let y = instance.pools.iter().enumerate().map(|(i, p)| p.staffing_bounds.lower + level(&ex.v[i], &ex.v_weights[i])).collect();
    let staffing = Staffing::new(w, y);
    if !instance.is_staffing_feasible(&staffing) {
        return None;
    }
    let mut fixed = model.clone();
    ex.fix(&mut fixed, instance, &staffing);
    let out = backend::solve(&fixed, params).ok()?;
    if out.status == Status::Optimal { out.values } else { None }
}

fn finish<'a>(out: &'a SolveOutcome, what: &str) -> Result<&'a [f64]> {
    match out.status {
        Status::Infeasible => Err(Error::Infeasible(format!("{what} has no feasible staffing"))),
        Status::Limit => Err(Error::Backend(format!("{what}: time limit reached before optimality"))),
        _ => out.expect_optimal(what),
    }
}

/// Monolithic MILP when the structure has one, separation otherwise.
pub fn solve_auto(instance: &Instance, params: &SeparationParams) -> Result<StaffingSolution> {
    match classify_structure(instance) {
        PoolStructureKind::Arbitrary => Ok(solve_separation(instance, params)?.solution),
        s => solve_monolithic(instance, s, &params.backend),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityValue {
    pub z0: f64,
    pub z1: f64,
    pub ovg_percent: f64,
}

/// Worst-case cost without pools against one pool over every unit. The
/// pool's bounds and attendance come from the instance's first pool.
pub fn flexibility_value(instance: &Instance, params: &SolveParams) -> Result<FlexibilityValue> {
    let Some(template) = instance.pools.first() else {
        return Err(Error::Invalid("flexibility value needs a pool to take bounds and attendance from".into()));
    };
    if instance.pools.iter().any(|p| p.staffing_bounds.lower > 0) {
        return Err(Error::Invalid("flexibility value requires y_L = 0 for every pool".into()));
    }
    let z0 = solve_monolithic(&instance.without_pools(), PoolStructureKind::NoPool, params)?.dr_cost;
    let z1 = solve_monolithic(&instance.with_single_pool(template), PoolStructureKind::OnePool, params)?.dr_cost;
    let ovg_percent = if z0.abs() > 0.0 { ((z0 - z1) / z0 * 100.0).max(0.0) } else { 0.0 };
    Ok(FlexibilityValue { z0, z1, ovg_percent })
}

/// Worst-case expected recourse cost at a fixed staffing.
pub fn worst_case_expectation(instance: &Instance, staffing: &Staffing) -> Result<f64> {
    if !instance.is_staffing_feasible(staffing) {
        return Err(Error::Invalid("staffing is outside its bounds or the resource cap".into()));
    }
    if instance.num_units() <= crate::second_stage::DUAL_ENUMERATION_CAP {
        worst_case_by_vertices(instance, staffing)
    } else {
        worst_case_by_separation(instance, staffing)
    }
}

/// Moment dual at a fixed staffing, with the inner maximum written out over
/// every enumerated dual vertex. Multipliers are left unbounded.
pub fn worst_case_by_vertices(instance: &Instance, staffing: &Staffing) -> Result<f64> {
    let c = &instance.costs;
    let vertices = crate::second_stage::dual_vertices(instance)?;
    let mut m = LinearModel::new(Sense::Minimize);
    let theta = m.add_free_var("theta");
    m.add_obj(theta, 1.0);
    let mut unit_terms = Vec::new();
    for (j, unit) in instance.units.iter().enumerate() {
        let gamma = m.add_free_var(format!("gamma[{j}]"));
        let w = staffing.w[j] as f64;
        m.add_obj(gamma, unit.attendance.value(staffing.w[j]));
        let rho: Vec<Var> = unit.moments.iter().enumerate().map(|(q, &mu)| {
            let r = m.add_free_var(format!("rho[{j},{q}]"));
            m.add_obj(r, mu);
            r
        }).collect();
        // Index 0 prices the unit at c_e, index 1 at c_x.
        let mut per_alpha = Vec::new();
        for (k, a) in [c.c_e, c.c_x].into_iter().enumerate() {
            let h = m.add_var(format!("hinge[{j},{k}]"), 0.0, f64::INFINITY);
            m.add_row(format!("hinge[{j},{k}]"), vec![(h, 1.0), (gamma, w)], Cmp::Ge, -a * w);
            let e = m.add_free_var(format!("sup[{j},{k}]"));
            add_sup_rows(&mut m, &format!("sup[{j},{k}]"), e, &rho, a, unit.demand_bounds.lower, unit.demand_bounds.upper);
            per_alpha.push((a, h, e));
        }
        unit_terms.push(per_alpha);
    }
    let mut pool_terms = Vec::new();
    for (i, pool) in instance.pools.iter().enumerate() {
        let lambda = m.add_free_var(format!("lambda[{i}]"));
        let y = staffing.y[i] as f64;
        m.add_obj(lambda, pool.attendance.value(staffing.y[i]));
        let mut per_beta = Vec::new();
        for (k, b) in [-c.c_e, -c.c_x].into_iter().enumerate() {
            let h = m.add_var(format!("pool_hinge[{i},{k}]"), 0.0, f64::INFINITY);
            m.add_row(format!("pool_hinge[{i},{k}]"), vec![(h, 1.0), (lambda, y)], Cmp::Ge, b * y);
            per_beta.push((b, h));
        }
        pool_terms.push(per_beta);
    }
    let pick = |x: f64, a: f64| (x - a).abs() <= 1e-12 * (1.0 + a.abs());
    for (n, (alpha, beta)) in vertices.iter().enumerate() {
        let mut terms = vec![(theta, 1.0)];
        for (j, &a) in alpha.iter().enumerate() {
            let &(_, h, e) = unit_terms[j].iter().find(|(v, _, _)| pick(*v, a)).ok_or_else(|| Error::Internal(format!("alpha {a} is not a vertex value")))?;
            terms.push((h, -1.0));
            terms.push((e, -1.0));
        }
        for (i, &b) in beta.iter().enumerate() {
            let &(_, h) = pool_terms[i].iter().find(|(v, _)| pick(*v, b)).ok_or_else(|| Error::Internal(format!("beta {b} is not a vertex value")))?;
            terms.push((h, -1.0));
        }
        m.add_row(format!("vertex[{n}]"), terms, Cmp::Ge, 0.0);
    }
    let out = backend::solve(&m, &SolveParams::default())?;
    match out.status {
        Status::Unbounded => Err(Error::AmbiguityEmpty("moment dual is unbounded at this staffing".into())),
        _ => {
            out.expect_optimal("worst-case expectation LP")?;
            Ok(out.objective)
        }
    }
}

/// Same value through the separation loop with the staffing pinned.
pub fn worst_case_by_separation(instance: &Instance, staffing: &Staffing) -> Result<f64> {
    let res = run_separation(instance, &SeparationParams::default(), Some(staffing))?;
    Ok(res.solution.dr_cost - instance.first_stage_cost(staffing))
}
