//! Optimal pool design: the fewest cross-trained unit pairs over disjoint
//! pool layouts whose worst-case staffing cost stays within a target.

use std::path::Path;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{self, Cmp, LinearModel, Sense, SolveParams, Status, Var};
use crate::drns::{check_preconditions, flexibility_value, solve_monolithic};
use crate::error::{Error, Result};
use crate::model::{classify_structure, read_text, write_text, Instance, PoolSpec, FILE_VERSION};
use crate::reformulation::{add_epigraphs, add_expansion};

#[derive(Clone, Debug)]
pub struct OpdOptions {
    /// Candidate pools; defaults to `floor(J / 2)`, at least one.
    pub num_pools: Option<usize>,
    /// Big-M for the assignment-gated epigraph copies.
    pub big_m: Option<f64>,
    pub symmetry_breaking: bool,
    /// Bounds and attendance for every candidate pool; defaults to the
    /// instance's first pool.
    pub pool_template: Option<PoolSpec>,
    pub backend: SolveParams,
}

impl Default for OpdOptions {
    fn default() -> Self {
        OpdOptions { num_pools: None, big_m: None, symmetry_breaking: true, pool_template: None, backend: SolveParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDesign {
    /// `assignment[i][j]`; the last row is the dummy pool of unpooled units.
    pub assignment: Vec<Vec<bool>>,
    pub open: Vec<bool>,
    /// Unit pairs sharing a pool, `j < k`.
    pub pairs: Vec<(usize, usize)>,
    pub cross_training_pairs: usize,
    pub target: f64,
    pub big_m: f64,
    /// Cost expression of the design model at its optimum.
    pub model_cost: f64,
    /// Worst-case cost of the design re-solved as a concrete instance.
    pub achieved_dr_cost: f64,
    #[serde(skip)]
    pub template: Option<PoolSpec>,
}

impl PoolDesign {
    /// Member lists of the non-empty real pools.
    pub fn pools(&self) -> Vec<Vec<usize>> {
        let real = self.assignment.len().saturating_sub(1);
        self.assignment[..real]
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect::<Vec<_>>())
            .filter(|m| !m.is_empty())
            .collect()
    }

    /// The design as a concrete instance with one pool per non-empty group.
    pub fn to_instance(&self, base: &Instance, template: &PoolSpec) -> Instance {
        let mut out = base.clone();
        out.pools = self
            .pools()
            .into_iter()
            .map(|members| PoolSpec { members, staffing_bounds: template.staffing_bounds, attendance: template.attendance.clone() })
            .collect();
        out
    }
}

fn template_of(instance: &Instance, opts: &OpdOptions) -> Result<PoolSpec> {
    let t = opts
        .pool_template
        .clone()
        .or_else(|| instance.pools.first().cloned())
        .ok_or_else(|| Error::Invalid("pool design needs a pool template (bounds and attendance)".into()))?;
    if t.staffing_bounds.lower != 0 {
        return Err(Error::Invalid("pool design requires candidate pools with y_L = 0".into()));
    }
    Ok(t)
}

/// Starting K: `c_x * max_j d_U + c_x * max_j w_U`, with `w_U` after the
/// resource cap.
pub fn default_big_m(instance: &Instance) -> f64 {
    let c_x = instance.costs.c_x;
    let d = instance.units.iter().map(|u| u.demand_bounds.upper).max().unwrap_or(0) as f64;
    let w = (0..instance.num_units()).map(|j| instance.effective_unit_upper(j)).max().unwrap_or(0) as f64;
    c_x * d + c_x * w
}

/// Slack on the target row so a target equal to a computed optimum stays
/// feasible under solver tolerances.
fn padded(target: f64) -> f64 {
    target + 1e-7 * (1.0 + target.abs())
}

pub fn solve_opd(instance: &Instance, target: f64, opts: &OpdOptions) -> Result<PoolDesign> {
    check_preconditions(&instance.without_pools(), crate::ambiguity::DEFAULT_TOL)?;
    let template = template_of(instance, opts)?;
    let found = match opts.big_m {
        Some(k) => design_milp(instance, target, opts, &template, k)?,
        None => adaptive_big_m(instance, target, opts, &template)?,
    };
    let Some((mut result, _)) = found else {
        return Err(Error::Infeasible(format!("no disjoint pool design reaches target {target}; it is below the one-pool optimum")));
    };
    let concrete = result.to_instance(instance, &template);
    result.achieved_dr_cost = solve_monolithic(&concrete, classify_structure(&concrete), &opts.backend)?.dr_cost;
    Ok(result)
}

const MAX_DOUBLINGS: usize = 10;

/// The moment multipliers are free, so no a priori bound covers every
/// epigraph value. Starting from the default, double K until the model is
/// feasible and one more doubling leaves the optimum unchanged.
fn adaptive_big_m(instance: &Instance, target: f64, opts: &OpdOptions, template: &PoolSpec) -> Result<Option<(PoolDesign, f64)>> {
    let mut k = default_big_m(instance);
    let mut prev = design_milp(instance, target, opts, template, k)?;
    for _ in 0..MAX_DOUBLINGS {
        k *= 2.0;
        let cur = design_milp(instance, target, opts, template, k)?;
        if let (Some(a), Some(b)) = (&prev, &cur) {
            if (a.1 - b.1).abs() <= 1e-6 * (1.0 + a.1.abs()) {
                return Ok(prev);
            }
        }
        debug!("pool design: K = {k} changed the optimum, doubling again");
        prev = cur;
    }
    if prev.is_some() {
        warn!("pool design: optimum still moving after {MAX_DOUBLINGS} doublings of K (now {k})");
    }
    Ok(prev)
}

/// The design MILP at a fixed K; `None` when it is infeasible.
fn design_milp(instance: &Instance, target: f64, opts: &OpdOptions, template: &PoolSpec, big_m: f64) -> Result<Option<(PoolDesign, f64)>> {
    let nj = instance.num_units();
    let ni = opts.num_pools.unwrap_or(nj / 2).max(1);

    // Every candidate pool spans all units so the expansion sees its range.
    let mut design = instance.clone();
    design.pools = (0..ni)
        .map(|_| PoolSpec { members: (0..nj).collect(), staffing_bounds: template.staffing_bounds, attendance: template.attendance.clone() })
        .collect();

    let mut m = LinearModel::new(Sense::Minimize);
    let ex = add_expansion(&mut m, &design);
    let ep = add_epigraphs(&mut m, &design, &ex)?;
    let mut cost_row = m.objective_terms();
    let cost_const = m.objective_constant();
    m.clear_objective();

    let pools_all = ni + 1;
    let open: Vec<Var> = (0..ni).map(|i| m.add_binary(format!("open[{i}]"))).collect();
    // Ties in the pair count go to the design with fewer open pools; the
    // weights sum to less than one pair.
    for &o in &open {
        m.add_obj(o, 1.0 / (ni + 1) as f64);
    }
    let a: Vec<Vec<Var>> = (0..pools_all).map(|i| (0..nj).map(|j| m.add_binary(format!("a[{i},{j}]"))).collect()).collect();
    let mut pair_vars = Vec::new();
    for j in 0..nj {
        for k in j + 1..nj {
            let p = m.add_binary(format!("pair[{j},{k}]"));
            m.add_obj(p, 1.0);
            for i in 0..ni {
                m.add_row(format!("pair[{i},{j},{k}]"), vec![(p, 1.0), (a[i][j], -1.0), (a[i][k], -1.0)], Cmp::Ge, -1.0);
            }
            pair_vars.push(((j, k), p));
        }
    }
    for j in 0..nj {
        m.add_row(format!("assign[{j}]"), (0..pools_all).map(|i| (a[i][j], 1.0)).collect(), Cmp::Eq, 1.0);
        for i in 0..ni {
            m.add_row(format!("open_ge[{i},{j}]"), vec![(open[i], 1.0), (a[i][j], -1.0)], Cmp::Ge, 0.0);
        }
    }
    for i in 0..ni {
        // A closed pool hires nobody and its multiplier vanishes.
        m.add_row(format!("lambda_open[{i}]"), vec![(ex.lambda[i], 1.0), (open[i], instance.costs.c_x)], Cmp::Ge, 0.0);
        for (l, &b) in ex.v[i].iter().enumerate() {
            m.add_row(format!("v_open[{i},{l}]"), vec![(b, 1.0), (open[i], -1.0)], Cmp::Le, 0.0);
        }
    }

    // Per-pool copies of the unit epigraphs, gated by assignment.
    let mut theta = Vec::with_capacity(pools_all);
    let mut zeta_c = vec![Vec::new(); pools_all];
    let mut ex_c = vec![Vec::new(); pools_all];
    let mut ee_c = vec![Vec::new(); pools_all];
    let mut chi_c = vec![Vec::new(); pools_all];
    for i in 0..pools_all {
        for j in 0..nj {
            let z = m.add_var(format!("zeta[{i},{j}]"), 0.0, f64::INFINITY);
            let x = m.add_free_var(format!("eta_x[{i},{j}]"));
            let e = m.add_free_var(format!("eta_e[{i},{j}]"));
            let c = m.add_free_var(format!("chi[{i},{j}]"));
            m.add_row(format!("zeta_m[{i},{j}]"), vec![(z, 1.0), (a[i][j], -big_m)], Cmp::Le, 0.0);
            for (v, tag) in [(x, "eta_x"), (e, "eta_e")] {
                m.add_row(format!("{tag}_mu[{i},{j}]"), vec![(v, 1.0), (a[i][j], -big_m)], Cmp::Le, 0.0);
                m.add_row(format!("{tag}_ml[{i},{j}]"), vec![(v, 1.0), (a[i][j], big_m)], Cmp::Ge, 0.0);
            }
            m.add_row(format!("chi_r[{i},{j}]"), vec![(c, 1.0), (z, -1.0), (e, -1.0)], Cmp::Ge, 0.0);
            m.add_row(format!("chi_x[{i},{j}]"), vec![(c, 1.0), (x, -1.0)], Cmp::Ge, 0.0);
            zeta_c[i].push(z);
            ex_c[i].push(x);
            ee_c[i].push(e);
            chi_c[i].push(c);
        }
        let th = m.add_free_var(format!("theta[{i}]"));
        let mut low = vec![(th, 1.0)];
        if i < ni {
            low.push((ep.pool[i], -1.0));
        }
        for l in 0..nj {
            low.push((zeta_c[i][l], -1.0));
            low.push((ee_c[i][l], -1.0));
        }
        m.add_row(format!("theta_low[{i}]"), low, Cmp::Ge, 0.0);
        for j in 0..nj {
            let mut terms = vec![(th, 1.0), (ex_c[i][j], -1.0)];
            for l in 0..j {
                terms.push((chi_c[i][l], -1.0));
            }
            for l in j + 1..nj {
                terms.push((zeta_c[i][l], -1.0));
                terms.push((ee_c[i][l], -1.0));
            }
            m.add_row(format!("theta_branch[{i},{j}]"), terms, Cmp::Ge, 0.0);
        }
        theta.push(th);
        cost_row.push((th, 1.0));
    }
    for j in 0..nj {
        for (agg, copies, tag) in [(ep.zeta[j], &zeta_c, "zeta"), (ep.eta_x[j], &ex_c, "eta_x"), (ep.eta_e[j], &ee_c, "eta_e")] {
            let mut terms = vec![(agg, 1.0)];
            terms.extend(copies.iter().map(|row| (row[j], -1.0)));
            m.add_row(format!("{tag}_sum[{j}]"), terms, Cmp::Eq, 0.0);
        }
    }
    m.add_row("target", cost_row.clone(), Cmp::Le, padded(target) - cost_const);

    if opts.symmetry_breaking {
        for i in 0..ni.saturating_sub(1) {
            m.add_row(format!("sym_open[{i}]"), vec![(open[i], 1.0), (open[i + 1], -1.0)], Cmp::Ge, 0.0);
            for j in 0..nj {
                let mut terms: Vec<(Var, f64)> = (0..j).map(|l| (a[i][l], 1.0)).collect();
                terms.push((a[i + 1][j], -1.0));
                m.add_row(format!("sym_unit[{i},{j}]"), terms, Cmp::Ge, 0.0);
            }
        }
    }

    let out = backend::solve(&m, &opts.backend)?;
    match out.status {
        Status::Infeasible => return Ok(None),
        Status::Limit => return Err(Error::Backend("pool design: time limit reached before optimality".into())),
        _ => {}
    }
    let values = out.expect_optimal("pool design MILP")?;
    let assignment: Vec<Vec<bool>> = a.iter().map(|row| row.iter().map(|v| values[v.index()] > 0.5).collect()).collect();
    let open_flags: Vec<bool> = open.iter().map(|v| values[v.index()] > 0.5).collect();
    let model_cost = cost_const + cost_row.iter().map(|(v, c)| c * values[v.index()]).sum::<f64>();

    let mut result = PoolDesign {
        assignment,
        open: open_flags,
        pairs: Vec::new(),
        cross_training_pairs: 0,
        target,
        big_m,
        model_cost,
        achieved_dr_cost: f64::NAN,
        template: Some(template.clone()),
    };
    for members in result.pools() {
        for (x, &j) in members.iter().enumerate() {
            for &k in &members[x + 1..] {
                result.pairs.push((j, k));
            }
        }
    }
    result.cross_training_pairs = result.pairs.len();
    debug_assert_eq!(
        result.cross_training_pairs as f64,
        pair_vars.iter().map(|(_, p)| values[p.index()].round()).sum::<f64>()
    );
    Ok(Some((result, out.objective)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target: f64,
    pub pairs: usize,
    pub achieved_dr_cost: f64,
}

/// Sweeps the target uniformly from the one-pool optimum up to the no-pool
/// optimum.
pub fn frontier(instance: &Instance, points: usize, opts: &OpdOptions) -> Result<Vec<FrontierPoint>> {
    if points < 2 {
        return Err(Error::Invalid(format!("a frontier needs at least 2 points, got {points}")));
    }
    let template = template_of(instance, opts)?;
    let mut with_template = instance.clone();
    with_template.pools = vec![template.clone()];
    let fv = flexibility_value(&with_template, &opts.backend)?;
    let opts = OpdOptions { pool_template: Some(template), ..opts.clone() };
    let targets: Vec<f64> = (0..points).map(|k| fv.z1 + (fv.z0 - fv.z1) * k as f64 / (points - 1) as f64).collect();
    targets
        .par_iter()
        .map(|&t| {
            let d = solve_opd(instance, t, &opts)?;
            Ok(FrontierPoint { target: t, pairs: d.cross_training_pairs, achieved_dr_cost: d.achieved_dr_cost })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    version: u32,
    #[serde(flatten)]
    design: PoolDesign,
}

pub fn design_to_string(design: &PoolDesign) -> String {
    serde_json::to_string_pretty(&DesignFile { version: FILE_VERSION, design: design.clone() }).expect("design serialises")
}

pub fn write_design(design: &PoolDesign, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &design_to_string(design))
}

pub fn read_design(path: impl AsRef<Path>) -> Result<PoolDesign> {
    let text = read_text(path.as_ref())?;
    let file: DesignFile = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    if file.version != FILE_VERSION {
        return Err(Error::Version { found: file.version, expected: FILE_VERSION });
    }
    Ok(file.design)
}
