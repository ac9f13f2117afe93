//! The inner maximisation: given the master's current dual iterate, find the
//! dual extreme point of the recourse problem whose cut is most violated.
//!
//! Extreme points are encoded by binaries `(t, s, r, p)`: `t_j = 1` when unit
//! `j` is priced at the temporary-nurse cost, `s_ij = 1` marks the largest
//! such unit in pool `i`, and `r = 1 - t`, `p_i = 1 - sum_j s_ij`.

use rayon::prelude::*;

use crate::backend::{self, Cmp, LinearModel, Sense, SolveParams, Var};
use crate::error::{Error, Result};
use crate::model::{classify_structure, Instance, PoolStructureKind, Staffing, UnitSpec};
use crate::second_stage::dual_vertices;

#[derive(Clone, Debug, PartialEq)]
pub struct CutCoefficients {
    pub c_t: Vec<f64>,
    pub c_r: Vec<f64>,
    pub c_p: Vec<f64>,
    pub c_s: Vec<f64>,
}

impl CutCoefficients {
    pub fn num_units(&self) -> usize {
        self.c_t.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryPoint {
    pub t: Vec<bool>,
    /// `s[i][k]` for the `k`-th member of pool `i`.
    pub s: Vec<Vec<bool>>,
    pub r: Vec<bool>,
    pub p: Vec<bool>,
    pub value: f64,
}

impl AdversaryPoint {
    /// The unique point of H with the given `t`.
    pub fn from_t(members: &[Vec<usize>], t: Vec<bool>, coeffs: &CutCoefficients) -> Self {
        let s: Vec<Vec<bool>> = members
            .iter()
            .map(|m| {
                let last = m.iter().rposition(|&j| t[j]);
                (0..m.len()).map(|k| Some(k) == last).collect()
            })
            .collect();
        let r = t.iter().map(|&b| !b).collect();
        let p = s.iter().map(|row| !row.iter().any(|&b| b)).collect();
        let mut point = AdversaryPoint { t, s, r, p, value: 0.0 };
        point.value = point.objective(coeffs);
        point
    }

    pub fn objective(&self, c: &CutCoefficients) -> f64 {
        let mut v = 0.0;
        for j in 0..self.t.len() {
            v += if self.t[j] { c.c_t[j] } else { 0.0 } + if self.r[j] { c.c_r[j] } else { 0.0 };
        }
        for i in 0..self.p.len() {
            if self.p[i] {
                v += c.c_p[i];
            }
            v += c.c_s[i] * self.s[i].iter().filter(|&&b| b).count() as f64;
        }
        v
    }

    /// Every defining constraint of H, including the canonical choice of `s`.
    pub fn is_member(&self, members: &[Vec<usize>]) -> bool {
        if self.s.len() != members.len() || self.p.len() != members.len() || self.r.len() != self.t.len() {
            return false;
        }
        if self.t.iter().zip(&self.r).any(|(&t, &r)| t == r) {
            return false;
        }
        for (i, m) in members.iter().enumerate() {
            let s = &self.s[i];
            if s.len() != m.len() {
                return false;
            }
            let ones = s.iter().filter(|&&b| b).count();
            if ones > 1 || (ones == 0) != self.p[i] {
                return false;
            }
            for (k, &j) in m.iter().enumerate() {
                if s[k] && !self.t[j] {
                    return false;
                }
                // A later member priced high contradicts s at an earlier one.
                for &j2 in m {
                    if j2 > j && s[k] && self.t[j2] {
                        return false;
                    }
                }
                if self.t[j] && ones == 0 {
                    return false;
                }
            }
        }
        true
    }

    /// Key used to recognise repeated cuts.
    pub fn key(&self) -> (Vec<bool>, Vec<Vec<bool>>) {
        (self.t.clone(), self.s.clone())
    }
}

/// Dual iterate of the master problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
}

impl Iterate {
    /// Iterate whose binary expansion encodes `staffing` exactly.
    pub fn at_staffing(instance: &Instance, staffing: &Staffing, gamma: Vec<f64>, lambda: Vec<f64>, rho: Vec<Vec<f64>>) -> Self {
        let expand = |level: u32, lower: u32, width: usize, mult: f64| -> (Vec<f64>, Vec<f64>) {
            let on = (level - lower) as usize;
            let u: Vec<f64> = (0..width).map(|k| if k < on { 1.0 } else { 0.0 }).collect();
            let phi = u.iter().map(|x| x * mult).collect();
            (u, phi)
        };
        let (u, phi) = instance
            .units
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let lo = s.staffing_bounds.lower;
                let width = (instance.effective_unit_upper(j) - lo) as usize;
                expand(staffing.w[j], lo, width.max((staffing.w[j] - lo) as usize), gamma[j])
            })
            .unzip();
        let (v, nu) = instance
            .pools
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let lo = p.staffing_bounds.lower;
                let width = (instance.effective_pool_upper(i) - lo) as usize;
                expand(staffing.y[i], lo, width.max((staffing.y[i] - lo) as usize), lambda[i])
            })
            .unzip();
        Iterate { u, v, phi, nu, gamma, lambda, rho }
    }

    /// Staffing encoded by the (rounded) binary expansion.
    pub fn staffing(&self, instance: &Instance) -> Staffing {
        let count = |xs: &[f64]| xs.iter().filter(|&&x| x > 0.5).count() as u32;
        Staffing {
            w: instance.units.iter().zip(&self.u).map(|(s, u)| s.staffing_bounds.lower + count(u)).collect(),
            y: instance.pools.iter().zip(&self.v).map(|(p, v)| p.staffing_bounds.lower + count(v)).collect(),
        }
    }
}

/// `max_{d in support} slope * d - sum_q rho_q d^q`, by enumeration.
pub fn sup_over_demand(unit: &UnitSpec, slope: f64, rho: &[f64]) -> f64 {
    unit.demand_bounds
        .levels()
        .map(|d| {
            let x = d as f64;
            let mut pw = 1.0;
            let mut val = slope * x;
            for r in rho {
                pw *= x;
                val -= r * pw;
            }
            val
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn coefficients(instance: &Instance, it: &Iterate) -> CutCoefficients {
    let c = &instance.costs;
    let mut out = CutCoefficients {
        c_t: Vec::with_capacity(instance.num_units()),
        c_r: Vec::with_capacity(instance.num_units()),
        c_p: Vec::with_capacity(instance.num_pools()),
        c_s: vec![0.0; instance.num_pools()],
    };
    for (j, unit) in instance.units.iter().enumerate() {
        out.c_t.push(sup_over_demand(unit, c.c_x, &it.rho[j]));
        let w_l = unit.staffing_bounds.lower as f64;
        let hinge = (-c.c_e - it.gamma[j]) * w_l
            - it.phi[j].iter().zip(&it.u[j]).map(|(phi, u)| phi + c.c_e * u).sum::<f64>();
        out.c_r.push(hinge.max(0.0) + sup_over_demand(unit, c.c_e, &it.rho[j]));
    }
    for (i, pool) in instance.pools.iter().enumerate() {
        let y_l = pool.staffing_bounds.lower as f64;
        let hinge = (-c.c_e - it.lambda[i]) * y_l
            - it.nu[i].iter().zip(&it.v[i]).map(|(nu, v)| nu + c.c_e * v).sum::<f64>();
        out.c_p.push(hinge.max(0.0));
    }
    out
}

/// The dual objective maximised directly over enumerated dual extreme points
/// at a fixed staffing; an oracle for the H-based solvers.
pub fn dual_vertex_max(
    instance: &Instance,
    staffing: &Staffing,
    gamma: &[f64],
    lambda: &[f64],
    rho: &[Vec<f64>],
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (alpha, beta) in dual_vertices(instance)? {
        let mut f = 0.0;
        for (j, unit) in instance.units.iter().enumerate() {
            f += ((-alpha[j] - gamma[j]) * staffing.w[j] as f64).max(0.0);
            f += sup_over_demand(unit, alpha[j], &rho[j]);
        }
        for i in 0..instance.num_pools() {
            f += ((beta[i] - lambda[i]) * staffing.y[i] as f64).max(0.0);
        }
        best = best.max(f);
    }
    Ok(best)
}

fn members_of(instance: &Instance) -> Vec<Vec<usize>> {
    instance.pools.iter().map(|p| p.members.clone()).collect()
}

fn check_dims(instance: &Instance, c: &CutCoefficients) -> Result<()> {
    if c.c_t.len() != instance.num_units()
        || c.c_r.len() != instance.num_units()
        || c.c_p.len() != instance.num_pools()
        || c.c_s.len() != instance.num_pools()
    {
        return Err(Error::Invalid("coefficient dimensions do not match the instance".into()));
    }
    Ok(())
}

pub const BRUTE_FORCE_MAX_UNITS: usize = 20;

/// Enumerates every `t` in `{0,1}^J`.
pub fn solve_bruteforce(instance: &Instance, c: &CutCoefficients) -> Result<AdversaryPoint> {
    check_dims(instance, c)?;
    let nj = instance.num_units();
    if nj > BRUTE_FORCE_MAX_UNITS {
        return Err(Error::TooLarge(format!("{nj} units exceed the enumeration cap {BRUTE_FORCE_MAX_UNITS}")));
    }
    let members = members_of(instance);
    let masks: Vec<u64> = members.iter().map(|m| m.iter().fold(0u64, |acc, &j| acc | 1 << j)).collect();
    let mut best = (f64::NEG_INFINITY, 0u64);
    for t in 0u64..1 << nj {
        let mut v = 0.0;
        for j in 0..nj {
            v += if t >> j & 1 == 1 { c.c_t[j] } else { c.c_r[j] };
        }
        for (i, &m) in masks.iter().enumerate() {
            v += if t & m == 0 { c.c_p[i] } else { c.c_s[i] };
        }
        if v > best.0 {
            best = (v, t);
        }
    }
    let t = (0..nj).map(|j| best.1 >> j & 1 == 1).collect();
    Ok(AdversaryPoint::from_t(&members, t, c))
}

/// Handles to the variables of the H model.
pub struct HVars {
    pub t: Vec<Var>,
    pub r: Vec<Var>,
    pub s: Vec<Vec<Var>>,
    pub p: Vec<Var>,
}

/// H as a linear model, strengthened with the ordering inequalities
/// `t_j <= sum_{l in P_i, l >= j} s_il`. With `integral = false` the binaries
/// are relaxed to `[0, 1]`.
pub fn h_model(members: &[Vec<usize>], c: &CutCoefficients, integral: bool) -> (LinearModel, HVars) {
    let nj = c.c_t.len();
    let mut m = LinearModel::new(Sense::Maximize);
    let bin = |m: &mut LinearModel, name: String| if integral { m.add_binary(name) } else { m.add_var(name, 0.0, 1.0) };
    let t: Vec<Var> = (0..nj).map(|j| bin(&mut m, format!("t[{j}]"))).collect();
    let s: Vec<Vec<Var>> = members
        .iter()
        .enumerate()
        .map(|(i, mem)| mem.iter().map(|&j| bin(&mut m, format!("s[{i},{j}]"))).collect())
        .collect();
    let r: Vec<Var> = (0..nj).map(|j| m.add_var(format!("r[{j}]"), 0.0, 1.0)).collect();
    let p: Vec<Var> = (0..members.len()).map(|i| m.add_var(format!("p[{i}]"), 0.0, 1.0)).collect();
    for j in 0..nj {
        m.add_obj(t[j], c.c_t[j]);
        m.add_obj(r[j], c.c_r[j]);
        m.add_row(format!("tr[{j}]"), vec![(t[j], 1.0), (r[j], 1.0)], Cmp::Eq, 1.0);
    }
    for (i, mem) in members.iter().enumerate() {
        m.add_obj(p[i], c.c_p[i]);
        let mut sp: Vec<(Var, f64)> = s[i].iter().map(|&v| (v, 1.0)).collect();
        for &v in &s[i] {
            m.add_obj(v, c.c_s[i]);
        }
        m.add_row(format!("one_s[{i}]"), sp.clone(), Cmp::Le, 1.0);
        sp.push((p[i], 1.0));
        m.add_row(format!("sp[{i}]"), sp, Cmp::Eq, 1.0);
        for (k, &j) in mem.iter().enumerate() {
            m.add_row(format!("s_le_t[{i},{j}]"), vec![(s[i][k], 1.0), (t[j], -1.0)], Cmp::Le, 0.0);
            for &j2 in mem {
                if j2 > j {
                    m.add_row(format!("later[{i},{j2},{j}]"), vec![(t[j2], 1.0), (s[i][k], 1.0)], Cmp::Le, 1.0);
                }
            }
            let mut cover = vec![(t[j], 1.0)];
            cover.extend(s[i].iter().map(|&v| (v, -1.0)));
            m.add_row(format!("cover[{i},{j}]"), cover, Cmp::Le, 0.0);
            let mut order = vec![(t[j], 1.0)];
            order.extend(mem.iter().enumerate().filter(|(_, &l)| l >= j).map(|(k3, _)| (s[i][k3], -1.0)));
            m.add_row(format!("order[{i},{j}]"), order, Cmp::Le, 0.0);
        }
    }
    (m, HVars { t, r, s, p })
}

/// H maximised by the MILP backend; works for any pool structure.
pub fn solve_generic(instance: &Instance, c: &CutCoefficients) -> Result<AdversaryPoint> {
    check_dims(instance, c)?;
    let members = members_of(instance);
    let (m, vars) = h_model(&members, c, true);
    let out = backend::solve(&m, &SolveParams::default())?;
    let vals = out.expect_optimal("adversary MILP")?;
    let t: Vec<bool> = vars.t.iter().map(|v| vals[v.index()] > 0.5).collect();
    let point = AdversaryPoint::from_t(&members, t, c);
    debug_assert!((point.value - out.objective).abs() <= 1e-6 * (1.0 + out.objective.abs()));
    Ok(point)
}

/// One pool over `members`: best value and the `t` pattern on the members.
/// The first entry is the "no high-priced member" branch, preferred on ties.
fn one_pool_block(members: &[usize], c: &CutCoefficients, c_p: f64, c_s: f64) -> (f64, Vec<bool>) {
    let sum_r: f64 = members.iter().map(|&j| c.c_r[j]).sum();
    let mut best_val = c_p + sum_r;
    let mut best_branch: Option<usize> = None;
    // prefix = sum over earlier members of max(c_t, c_r); suffix = sum of c_r after.
    let mut prefix = 0.0;
    let mut suffix = sum_r;
    for (k, &j) in members.iter().enumerate() {
        suffix -= c.c_r[j];
        let v = c.c_t[j] + c_s + prefix + suffix;
        if v > best_val {
            best_val = v;
            best_branch = Some(k);
        }
        prefix += c.c_t[j].max(c.c_r[j]);
    }
    let t = match best_branch {
        None => vec![false; members.len()],
        Some(b) => members
            .iter()
            .enumerate()
            .map(|(k, &j)| k < b && c.c_t[j] >= c.c_r[j] || k == b)
            .collect(),
    };
    (best_val, t)
}

/// Closed form for a single pool covering every unit.
pub fn closed_one_pool(c: &CutCoefficients) -> Result<AdversaryPoint> {
    if c.c_p.len() != 1 || c.c_s.len() != 1 {
        return Err(Error::Invalid(format!("closed one-pool form needs exactly one pool, got {}", c.c_p.len())));
    }
    let members: Vec<usize> = (0..c.num_units()).collect();
    let (value, t) = one_pool_block(&members, c, c.c_p[0], c.c_s[0]);
    let point = AdversaryPoint::from_t(&[members], t, c);
    debug_assert!((point.value - value).abs() <= 1e-9 * (1.0 + value.abs()));
    Ok(point)
}

/// Pairwise-disjoint pools: pools separate, free units pick the larger of
/// their two coefficients.
pub fn closed_disjoint(instance: &Instance, c: &CutCoefficients) -> Result<AdversaryPoint> {
    check_dims(instance, c)?;
    let nj = instance.num_units();
    let mut covered = vec![false; nj];
    for p in &instance.pools {
        for &j in &p.members {
            if covered[j] {
                return Err(Error::StructureMismatch {
                    expected: PoolStructureKind::Disjoint,
                    found: classify_structure(instance),
                });
            }
            covered[j] = true;
        }
    }
    let mut t: Vec<bool> = (0..nj).map(|j| !covered[j] && c.c_t[j] >= c.c_r[j]).collect();
    let solve_pool = |(i, p): (usize, &crate::model::PoolSpec)| one_pool_block(&p.members, c, c.c_p[i], c.c_s[i]);
    let blocks: Vec<(f64, Vec<bool>)> = if instance.num_pools() > 64 {
        instance.pools.par_iter().enumerate().map(solve_pool).collect()
    } else {
        instance.pools.iter().enumerate().map(solve_pool).collect()
    };
    for (p, (_, bt)) in instance.pools.iter().zip(&blocks) {
        for (&j, &b) in p.members.iter().zip(bt) {
            t[j] = b;
        }
    }
    let point = AdversaryPoint::from_t(&members_of(instance), t, c);
    if cfg!(debug_assertions) {
        let free: f64 = (0..nj).filter(|&j| !covered[j]).map(|j| c.c_t[j].max(c.c_r[j])).sum();
        let total = free + blocks.iter().map(|b| b.0).sum::<f64>();
        debug_assert!((point.value - total).abs() <= 1e-9 * (1.0 + total.abs()));
    }
    Ok(point)
}

/// Which coefficient an arc of the chain network carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArcTerms {
    /// `(unit, high)`: `c_t[unit]` if `high`, else `c_r[unit]`.
    pub unit: Option<(usize, bool)>,
    /// `c_p[pool]`, present only when both ends of the pool are low.
    pub pool: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainArc {
    pub from: usize,
    pub to: usize,
    pub terms: ArcTerms,
}

/// Layered acyclic network whose longest source-sink path solves the chained
/// adversary. Node 0 is the source, nodes `1..=2` hold `t_0`, each later
/// layer holds `(t_0, t_k)`, and the last node is the sink. Nodes are
/// numbered in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainNetwork {
    pub len: usize,
    pub num_nodes: usize,
    pub arcs: Vec<ChainArc>,
}

impl ChainNetwork {
    pub fn new(len: usize) -> Self {
        assert!(len >= 2, "a chain needs at least two units");
        let layer = |k: usize, t0: bool, tk: bool| -> usize {
            if k == 0 {
                1 + t0 as usize
            } else {
                3 + 4 * (k - 1) + 2 * t0 as usize + tk as usize
            }
        };
        let sink = 4 * len - 1;
        let mut arcs = Vec::with_capacity(8 * len - 6);
        for t0 in [false, true] {
            arcs.push(ChainArc { from: 0, to: layer(0, t0, t0), terms: ArcTerms { unit: Some((0, t0)), pool: None } });
        }
        for k in 1..len {
            for t0 in [false, true] {
                let prevs: &[bool] = if k == 1 { &[t0] } else { &[false, true] };
                for &tp in prevs {
                    for tk in [false, true] {
                        let pool = (!tp && !tk).then_some(k - 1);
                        arcs.push(ChainArc {
                            from: layer(k - 1, t0, tp),
                            to: layer(k, t0, tk),
                            terms: ArcTerms { unit: Some((k, tk)), pool },
                        });
                    }
                }
            }
        }
        for t0 in [false, true] {
            for tl in [false, true] {
                let pool = (!t0 && !tl).then_some(len - 1);
                arcs.push(ChainArc { from: layer(len - 1, t0, tl), to: sink, terms: ArcTerms { unit: None, pool } });
            }
        }
        ChainNetwork { len, num_nodes: 4 * len, arcs }
    }

    pub fn source(&self) -> usize {
        0
    }

    pub fn sink(&self) -> usize {
        self.num_nodes - 1
    }

    /// `(t_0, t_k)` carried by a layer node, `None` for source and sink.
    pub fn node_state(&self, node: usize) -> Option<(usize, bool, bool)> {
        match node {
            0 => None,
            1 | 2 => Some((0, node == 2, node == 2)),
            n if n == self.sink() => None,
            n => {
                let off = n - 3;
                Some((1 + off / 4, off % 4 >= 2, off % 2 == 1))
            }
        }
    }

    pub fn arc_length(&self, arc: &ChainArc, c: &CutCoefficients) -> f64 {
        let mut v = 0.0;
        if let Some((j, high)) = arc.terms.unit {
            v += if high { c.c_t[j] } else { c.c_r[j] };
        }
        if let Some(i) = arc.terms.pool {
            v += c.c_p[i];
        }
        v
    }

    /// Longest source-sink path; returns its length and the `t` it encodes.
    pub fn longest_path(&self, c: &CutCoefficients) -> (f64, Vec<bool>) {
        let mut best = vec![f64::NEG_INFINITY; self.num_nodes];
        let mut pred: Vec<Option<usize>> = vec![None; self.num_nodes];
        best[0] = 0.0;
        // Arcs were pushed layer by layer, so one pass is a topological sweep.
        for (a, arc) in self.arcs.iter().enumerate() {
            let cand = best[arc.from] + self.arc_length(arc, c);
            if cand > best[arc.to] {
                best[arc.to] = cand;
                pred[arc.to] = Some(a);
            }
        }
        let mut t = vec![false; self.len];
        let mut node = self.sink();
        while let Some(a) = pred[node] {
            let arc = &self.arcs[a];
            if let Some((j, high)) = arc.terms.unit {
                t[j] = high;
            }
            node = arc.from;
        }
        (best[self.sink()], t)
    }
}

/// Pools of a chain of `len` units in instance order: `{k, k+1}` and
/// finally `{0, len-1}`.
pub fn chain_members(len: usize) -> Vec<Vec<usize>> {
    (0..len)
        .map(|k| {
            let mut p = vec![k, (k + 1) % len];
            p.sort_unstable();
            p
        })
        .collect()
}

/// Chained pools solved by dynamic programming over `(t_0, t_k)`.
pub fn solve_chained(c: &CutCoefficients) -> Result<AdversaryPoint> {
    let n = c.num_units();
    if n < 3 || c.c_p.len() != n || c.c_s.len() != n {
        return Err(Error::Invalid(format!(
            "chained adversary needs I = J >= 3, got J = {n}, I = {}",
            c.c_p.len()
        )));
    }
    // Under the canonical encoding sum_k s_ik = 1 - p_i, so a pool's c_s
    // folds into its c_p plus a constant.
    let folded = CutCoefficients {
        c_t: c.c_t.clone(),
        c_r: c.c_r.clone(),
        c_p: c.c_p.iter().zip(&c.c_s).map(|(p, s)| p - s).collect(),
        c_s: vec![0.0; n],
    };
    let (len, t) = ChainNetwork::new(n).longest_path(&folded);
    let value = len + c.c_s.iter().sum::<f64>();
    let point = AdversaryPoint::from_t(&chain_members(n), t, c);
    debug_assert!((point.value - value).abs() <= 1e-9 * (1.0 + value.abs()));
    Ok(point)
}

/// Best available exact method for the instance's pool structure.
pub fn separate(instance: &Instance, structure: PoolStructureKind, c: &CutCoefficients) -> Result<AdversaryPoint> {
    match structure {
        PoolStructureKind::OnePool => closed_one_pool(c),
        PoolStructureKind::Disjoint => closed_disjoint(instance, c),
        PoolStructureKind::Chained => solve_chained(c),
        PoolStructureKind::NoPool => match closed_disjoint(instance, c) {
            Err(Error::StructureMismatch { .. }) => solve_generic(instance, c),
            other => other,
        },
        PoolStructureKind::Arbitrary => solve_generic(instance, c),
    }
}

/// Dense polyhedron `{x >= 0 : A_eq x = b_eq, A_le x <= b_le}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    pub names: Vec<String>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

impl Polytope {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        x.iter().all(|&v| v >= -tol)
            && self.eq.iter().all(|(a, b)| (dot(a) - b).abs() <= tol)
            && self.le.iter().all(|(a, b)| dot(a) <= b + tol)
    }

    /// As a linear model maximising `objective`.
    pub fn to_model(&self, objective: &[f64]) -> (LinearModel, Vec<Var>) {
        let mut m = LinearModel::new(Sense::Maximize);
        let vars: Vec<Var> = self.names.iter().map(|n| m.add_var(n.clone(), 0.0, f64::INFINITY)).collect();
        for (v, &c) in vars.iter().zip(objective) {
            m.add_obj(*v, c);
        }
        let terms = |a: &[f64]| vars.iter().zip(a).filter(|(_, &c)| c != 0.0).map(|(&v, &c)| (v, c)).collect();
        for (k, (a, b)) in self.eq.iter().enumerate() {
            m.add_row(format!("eq{k}"), terms(a), Cmp::Eq, *b);
        }
        for (k, (a, b)) in self.le.iter().enumerate() {
            m.add_row(format!("le{k}"), terms(a), Cmp::Le, *b);
        }
        (m, vars)
    }
}

/// Relaxation of the strengthened H for a chain of `n` pools, written in the
/// reduced variables `(t_1..t_n, s_11..s_nn, r_1..r_n, p_1..p_n)` where pool
/// `i` pairs unit `i` with its successor.
pub fn chained_relaxation(n: usize) -> Polytope {
    let dim = 4 * n;
    let (t, s, r, p) = (0, n, 2 * n, 3 * n);
    let mut names = Vec::with_capacity(dim);
    for prefix in ["t", "s", "r", "p"] {
        for i in 1..=n {
            names.push(if prefix == "s" { format!("s{i}{i}") } else { format!("{prefix}{i}") });
        }
    }
    let row = |entries: &[(usize, f64)]| {
        let mut a = vec![0.0; dim];
        for &(k, v) in entries {
            a[k] += v;
        }
        a
    };
    let mut eq = Vec::new();
    let mut le = Vec::new();
    for i in 0..n {
        let next = (i + 1) % n;
        le.push((row(&[(s + i, 1.0), (t + i, -1.0)]), 0.0));
        le.push((row(&[(t + i, 1.0), (s + i, -1.0), (t + next, -1.0)]), 0.0));
        le.push((row(&[(s + i, 1.0), (t + next, 1.0)]), 1.0));
        eq.push((row(&[(t + i, 1.0), (r + i, 1.0)]), 1.0));
        eq.push((row(&[(p + i, 1.0), (s + i, 1.0), (t + next, 1.0)]), 1.0));
    }
    Polytope { names, eq, le }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttendanceFunction, Bounds, CostParams, PoolSpec};
    use proptest::prelude::*;

    fn instance(nj: usize, pools: &[Vec<usize>]) -> Instance {
        let range = Bounds::new(0, 4);
        Instance {
            units: (0..nj)
                .map(|_| UnitSpec {
                    moments: vec![3.0, 10.0],
                    demand_bounds: Bounds::new(0, 10),
                    staffing_bounds: range,
                    attendance: AttendanceFunction::linear(0.9, range),
                })
                .collect(),
            pools: pools
                .iter()
                .map(|m| PoolSpec { members: m.clone(), staffing_bounds: range, attendance: AttendanceFunction::linear(0.99, range) })
                .collect(),
            costs: CostParams { c_w: 100.0, c_y: 130.0, c_x: 400.0, c_e: 50.0 },
            resource_cap: None,
            label: String::new(),
        }
    }

    fn coeffs(c_t: &[f64], c_r: &[f64], c_p: &[f64]) -> CutCoefficients {
        CutCoefficients { c_t: c_t.to_vec(), c_r: c_r.to_vec(), c_p: c_p.to_vec(), c_s: vec![0.0; c_p.len()] }
    }

    fn zero_iterate(inst: &Instance) -> Iterate {
        Iterate::at_staffing(
            inst,
            &Staffing::lower(inst),
            vec![0.0; inst.num_units()],
            vec![0.0; inst.num_pools()],
            vec![vec![0.0; 2]; inst.num_units()],
        )
    }

    #[test]
    fn linear_sup_sits_at_the_top_of_the_support() {
        let inst = instance(1, &[]);
        let c = coefficients(&inst, &zero_iterate(&inst));
        assert_eq!(c.c_t, vec![4000.0]);
    }

    #[test]
    fn quadratic_sup_by_enumeration() {
        let inst = instance(1, &[]);
        let mut it = zero_iterate(&inst);
        it.rho[0] = vec![0.0, 50.0];
        let c = coefficients(&inst, &it);
        // 400 d - 50 d^2 over d = 0..10 peaks at d = 4.
        let expected = (0..=10).map(|d| 400.0 * d as f64 - 50.0 * (d * d) as f64).fold(f64::MIN, f64::max);
        assert_eq!(expected, 800.0);
        assert_eq!(c.c_t[0], expected);
    }

    #[test]
    fn negative_hinge_is_clipped() {
        let mut inst = instance(1, &[]);
        inst.units[0].staffing_bounds = Bounds::new(2, 4);
        inst.units[0].attendance = AttendanceFunction::linear(0.9, inst.units[0].staffing_bounds);
        let c = coefficients(&inst, &zero_iterate(&inst));
        // Hinge part is [(-50) * 2]_+ = 0, leaving the sup of 50 d.
        assert_eq!(c.c_r[0], 500.0);
    }

    #[test]
    fn brute_force_examples() {
        let inst = instance(2, &[vec![0, 1]]);
        let zero = coeffs(&[0.0, 0.0], &[0.0, 0.0], &[0.0]);
        let pt = solve_bruteforce(&inst, &zero).unwrap();
        assert_eq!((pt.value, pt.t.clone()), (0.0, vec![false, false]));
        let c = coeffs(&[1.0, 0.0], &[0.0, 1.0], &[0.0]);
        let pt = solve_bruteforce(&inst, &c).unwrap();
        assert_eq!((pt.value, pt.t.clone()), (2.0, vec![true, false]));
        assert_eq!(solve_generic(&inst, &c).unwrap().value, 2.0);
    }

    #[test]
    fn one_pool_examples() {
        let pt = closed_one_pool(&coeffs(&[5.0, 1.0], &[0.0, 0.0], &[0.0])).unwrap();
        assert_eq!((pt.value, pt.t.clone(), pt.s[0].clone()), (6.0, vec![true, true], vec![false, true]));
        let pt = closed_one_pool(&coeffs(&[-1.0, -2.0, -3.0], &[0.0; 3], &[10.0])).unwrap();
        assert_eq!((pt.value, pt.t.clone(), pt.p.clone()), (10.0, vec![false; 3], vec![true]));
        // Tie between the branches goes to p.
        let pt = closed_one_pool(&coeffs(&[3.0], &[0.0], &[3.0])).unwrap();
        assert_eq!(pt.p, vec![true]);
    }

    #[test]
    fn disjoint_examples() {
        let inst = instance(3, &[vec![0], vec![1]]);
        let c = coeffs(&[2.0, 1.0, 7.0], &[1.0, 3.0, 4.0], &[0.5, 0.5]);
        let pt = closed_disjoint(&inst, &c).unwrap();
        // Pool {0}: max(0.5 + 1, 2) = 2; pool {1}: max(0.5 + 3, 1) = 3.5;
        // free unit 2 takes c_t = 7.
        assert_eq!(pt.value, 12.5);
        assert_eq!(pt.t, vec![true, false, true]);
        let overlapping = instance(3, &[vec![0, 1], vec![1, 2]]);
        assert!(matches!(closed_disjoint(&overlapping, &c), Err(Error::StructureMismatch { .. })));
    }

    #[test]
    fn chained_examples() {
        let pt = solve_chained(&coeffs(&[0.0; 3], &[0.0; 3], &[0.0; 3])).unwrap();
        assert_eq!(pt.value, 0.0);
        let pt = solve_chained(&coeffs(&[0.0; 3], &[0.0; 3], &[1.0; 3])).unwrap();
        assert_eq!((pt.value, pt.t.clone()), (3.0, vec![false; 3]));
    }

    #[test]
    fn chain_network_shape() {
        for n in 2..8 {
            let net = ChainNetwork::new(n);
            assert_eq!(net.num_nodes, 4 * n);
            assert_eq!(net.arcs.len(), 8 * n - 6);
            assert!(net.arcs.iter().all(|a| a.from < a.to));
            // Arcs only join nodes that agree on t_0.
            for a in &net.arcs {
                if let (Some(x), Some(y)) = (net.node_state(a.from), net.node_state(a.to)) {
                    assert_eq!(x.1, y.1);
                }
            }
        }
    }

    #[test]
    fn longest_path_lp_matches_dp() {
        // Unit-flow LP on the network; its optimum is integral and equals
        // the DP value.
        let c = coeffs(&[3.0, -1.0, 2.0, 0.5], &[1.0, 2.0, -1.0, 0.0], &[4.0, 0.0, 1.5, 2.0]);
        let net = ChainNetwork::new(4);
        let mut m = LinearModel::new(Sense::Maximize);
        let x: Vec<Var> = net.arcs.iter().enumerate().map(|(k, _)| m.add_var(format!("x{k}"), 0.0, 1.0)).collect();
        for (a, &v) in net.arcs.iter().zip(&x) {
            m.add_obj(v, net.arc_length(a, &c));
        }
        for node in 0..net.num_nodes {
            let mut terms = Vec::new();
            for (a, &v) in net.arcs.iter().zip(&x) {
                if a.from == node {
                    terms.push((v, 1.0));
                }
                if a.to == node {
                    terms.push((v, -1.0));
                }
            }
            let rhs = if node == net.source() { 1.0 } else if node == net.sink() { -1.0 } else { 0.0 };
            m.add_row(format!("flow{node}"), terms, Cmp::Eq, rhs);
        }
        let out = backend::solve(&m, &SolveParams::default()).unwrap();
        let dp = solve_chained(&c).unwrap();
        let inst = instance(4, &chain_members(4));
        assert!((out.objective - dp.value).abs() < 1e-9);
        assert!((dp.value - solve_bruteforce(&inst, &c).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn membership_rejects_non_canonical_points() {
        let members = vec![vec![0, 1]];
        let c = coeffs(&[0.0; 2], &[0.0; 2], &[0.0]);
        let mut pt = AdversaryPoint::from_t(&members, vec![true, true], &c);
        assert!(pt.is_member(&members));
        pt.s[0] = vec![true, false];
        assert!(!pt.is_member(&members));
        pt.s[0] = vec![false, false];
        pt.p[0] = true;
        assert!(!pt.is_member(&members));
    }

    fn arb_coeffs(nj: usize, ni: usize) -> impl Strategy<Value = CutCoefficients> {
        let v = |n| proptest::collection::vec(-10.0f64..10.0, n);
        (v(nj), v(nj), proptest::collection::vec(0.0f64..10.0, ni))
            .prop_map(move |(c_t, c_r, c_p)| CutCoefficients { c_t, c_r, c_s: vec![0.0; c_p.len()], c_p })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn one_pool_closed_form_matches_enumeration(c in (1usize..=8).prop_flat_map(|n| arb_coeffs(n, 1))) {
            let inst = instance(c.num_units(), &[(0..c.num_units()).collect()]);
            let a = closed_one_pool(&c).unwrap();
            let b = solve_bruteforce(&inst, &c).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
            prop_assert!(a.is_member(&members_of(&inst)));
            prop_assert!((a.objective(&c) - a.value).abs() < 1e-9);
        }

        #[test]
        fn chained_dp_matches_enumeration(c in (3usize..=10).prop_flat_map(|n| arb_coeffs(n, n))) {
            let inst = instance(c.num_units(), &chain_members(c.num_units()));
            let a = solve_chained(&c).unwrap();
            let b = solve_bruteforce(&inst, &c).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
            prop_assert!(a.is_member(&members_of(&inst)));
        }

        #[test]
        fn nonzero_pool_constants_fold_into_chain(mut c in arb_coeffs(5, 5), cs in proptest::collection::vec(-3.0f64..3.0, 5)) {
            c.c_s = cs;
            let inst = instance(5, &chain_members(5));
            let a = solve_chained(&c).unwrap();
            let b = solve_bruteforce(&inst, &c).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
        }
    }

    #[test]
    fn generic_matches_enumeration_on_random_overlapping_pools() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let nj = rng.random_range(2..=6);
            let ni = rng.random_range(1..=3);
            let pools: Vec<Vec<usize>> = (0..ni)
                .map(|_| {
                    let mut p: Vec<usize> = (0..nj).filter(|_| rng.random_bool(0.5)).collect();
                    if p.is_empty() {
                        p.push(rng.random_range(0..nj));
                    }
                    p
                })
                .collect();
            let inst = instance(nj, &pools);
            let c = CutCoefficients {
                c_t: (0..nj).map(|_| rng.random_range(-5.0..5.0)).collect(),
                c_r: (0..nj).map(|_| rng.random_range(-5.0..5.0)).collect(),
                c_p: (0..ni).map(|_| rng.random_range(0.0..5.0)).collect(),
                c_s: (0..ni).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let a = solve_generic(&inst, &c).unwrap();
            let b = solve_bruteforce(&inst, &c).unwrap();
            assert!((a.value - b.value).abs() < 1e-9, "{} vs {}", a.value, b.value);
            assert!(a.is_member(&members_of(&inst)));
        }
    }

    #[test]
    fn dual_vertex_oracle_matches_h() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for pools in [vec![vec![0, 1, 2]], vec![vec![0, 1], vec![1, 2]], vec![vec![0], vec![2]]] {
            let inst = instance(3, &pools);
            for _ in 0..20 {
                let st = Staffing::new((0..3).map(|_| rng.random_range(0..=4)).collect(), (0..pools.len()).map(|_| rng.random_range(0..=4)).collect());
                let gamma: Vec<f64> = (0..3).map(|_| rng.random_range(-400.0..=0.0)).collect();
                let lambda: Vec<f64> = (0..pools.len()).map(|_| rng.random_range(-400.0..=0.0)).collect();
                let rho: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-50.0..50.0), rng.random_range(0.0..20.0)]).collect();
                let it = Iterate::at_staffing(&inst, &st, gamma.clone(), lambda.clone(), rho.clone());
                let c = coefficients(&inst, &it);
                let h = solve_bruteforce(&inst, &c).unwrap().value;
                let direct = dual_vertex_max(&inst, &st, &gamma, &lambda, &rho).unwrap();
                assert!((h - direct).abs() <= 1e-9 * (1.0 + h.abs()), "{h} vs {direct}");
            }
        }
    }

    #[test]
    fn chained_relaxation_contains_half_point() {
        let poly = chained_relaxation(3);
        assert_eq!(poly.dim(), 12);
        let mut x = vec![0.5; 12];
        x[9..].iter_mut().for_each(|v| *v = 0.0);
        assert!(poly.contains(&x, 1e-12));
    }

    fn rank(mut rows: Vec<Vec<f64>>) -> usize {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut rank = 0;
        for col in 0..cols {
            let Some(piv) = (rank..rows.len()).max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs())) else {
                break;
            };
            if rows[piv][col].abs() < 1e-9 {
                continue;
            }
            rows.swap(rank, piv);
            for r in 0..rows.len() {
                if r != rank {
                    let f = rows[r][col] / rows[rank][col];
                    for c in 0..cols {
                        let sub = f * rows[rank][c];
                        rows[r][c] -= sub;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn chained_relaxation_has_a_fractional_vertex() {
        let poly = chained_relaxation(3);
        let mut x = vec![0.5; 12];
        x[9..].iter_mut().for_each(|v| *v = 0.0);
        let dot = |a: &[f64]| a.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let mut active: Vec<Vec<f64>> = poly.eq.iter().map(|(a, _)| a.clone()).collect();
        // Active inequalities as outward normals of `a x <= b`.
        let mut normals: Vec<Vec<f64>> = poly.le.iter().filter(|(a, b)| (dot(a) - b).abs() < 1e-12).map(|(a, _)| a.clone()).collect();
        for k in 0..12 {
            if x[k] == 0.0 {
                let mut e = vec![0.0; 12];
                e[k] = -1.0;
                normals.push(e);
            }
        }
        active.extend(normals.iter().cloned());
        assert_eq!(rank(active), 12);

        let objective: Vec<f64> = (0..12).map(|k| normals.iter().map(|n| n[k]).sum()).collect();
        let (m, _) = poly.to_model(&objective);
        let lp = backend::solve(&m, &SolveParams::default()).unwrap();
        let at_x: f64 = objective.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lp.objective - at_x).abs() < 1e-9);
        // Integral points of H: each t in {0,1}^3, with s_ii = t_i (1 - t_{i+1}).
        let best_integral = (0..8u32)
            .map(|mask| {
                let t: Vec<f64> = (0..3).map(|i| (mask >> i & 1) as f64).collect();
                let mut y = vec![0.0; 12];
                for i in 0..3 {
                    let next = t[(i + 1) % 3];
                    y[i] = t[i];
                    y[3 + i] = t[i] * (1.0 - next);
                    y[6 + i] = 1.0 - t[i];
                    y[9 + i] = 1.0 - y[3 + i] - next;
                }
                assert!(poly.contains(&y, 1e-12));
                objective.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(lp.objective > best_integral + 1e-6, "{} vs {best_integral}", lp.objective);
    }

    #[test]
    fn equal_coefficients_give_an_integral_chain_optimum() {
        let c = coeffs(&[1.0; 3], &[1.0; 3], &[1.0; 3]);
        let inst = instance(3, &chain_members(3));
        let dp = solve_chained(&c).unwrap();
        assert!(dp.is_member(&chain_members(3)));
        assert_eq!(dp.value, solve_bruteforce(&inst, &c).unwrap().value);
    }
}
