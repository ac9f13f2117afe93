//! Recourse cost after uncertainty is revealed: reassign pool nurses to
//! units, hire temporaries for what is left, and credit surplus staff.

use serde::{Deserialize, Serialize};

use crate::backend::{self, Cmp, LinearModel, Sense, SolveParams};
use crate::error::{Error, Result};
use crate::model::{Instance, Staffing};

/// One realisation of show-ups and demand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub w_show: Vec<u32>,
    pub y_show: Vec<u32>,
    pub demand: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecourseResult {
    pub value: f64,
    /// `z[i][k]`: pool `i` nurses sent to its `k`-th member unit.
    pub z: Vec<Vec<u32>>,
    pub x: Vec<u32>,
    pub e: Vec<u32>,
}

impl RecourseResult {
    pub fn temporaries(&self) -> u32 {
        self.x.iter().sum()
    }
}

/// Checks that `scenario` lies in the support for `staffing`.
pub fn check_scenario(instance: &Instance, staffing: &Staffing, scenario: &Scenario) -> Result<()> {
    let (nj, ni) = (instance.num_units(), instance.num_pools());
    if scenario.w_show.len() != nj || scenario.demand.len() != nj || scenario.y_show.len() != ni {
        return Err(Error::Invalid("scenario dimensions do not match the instance".into()));
    }
    if staffing.w.len() != nj || staffing.y.len() != ni {
        return Err(Error::Invalid("staffing dimensions do not match the instance".into()));
    }
    for j in 0..nj {
        if scenario.w_show[j] > staffing.w[j] {
            return Err(Error::Invalid(format!("unit {j}: {} show up but {} scheduled", scenario.w_show[j], staffing.w[j])));
        }
        if !instance.units[j].demand_bounds.contains(scenario.demand[j]) {
            return Err(Error::Invalid(format!("unit {j}: demand {} outside its bounds", scenario.demand[j])));
        }
    }
    for i in 0..ni {
        if scenario.y_show[i] > staffing.y[i] {
            return Err(Error::Invalid(format!("pool {i}: {} show up but {} scheduled", scenario.y_show[i], staffing.y[i])));
        }
    }
    Ok(())
}

fn cost(instance: &Instance, x: &[u32], e: &[u32]) -> f64 {
    let c = &instance.costs;
    x.iter().zip(e).map(|(&x, &e)| c.c_x * x as f64 - c.c_e * e as f64).sum()
}

fn to_count(v: f64, what: &str) -> Result<u32> {
    let r = v.round();
    if (v - r).abs() > 1e-6 || r < -0.5 {
        return Err(Error::Internal(format!("{what} = {v} is not integral at an LP vertex")));
    }
    Ok(r.max(0.0) as u32)
}

/// Recourse problem solved as its continuous relaxation, which has integral
/// vertices.
pub fn recourse_lp(instance: &Instance, staffing: &Staffing, scenario: &Scenario) -> Result<RecourseResult> {
    check_scenario(instance, staffing, scenario)?;
    let c = &instance.costs;
    let mut m = LinearModel::new(Sense::Minimize);
    let z: Vec<Vec<_>> = instance
        .pools
        .iter()
        .enumerate()
        .map(|(i, p)| p.members.iter().map(|&j| m.add_var(format!("z[{i},{j}]"), 0.0, f64::INFINITY)).collect())
        .collect();
    let x: Vec<_> = (0..instance.num_units()).map(|j| m.add_var(format!("x[{j}]"), 0.0, f64::INFINITY)).collect();
    let e: Vec<_> = (0..instance.num_units()).map(|j| m.add_var(format!("e[{j}]"), 0.0, f64::INFINITY)).collect();
    for j in 0..instance.num_units() {
        m.add_obj(x[j], c.c_x);
        m.add_obj(e[j], -c.c_e);
        let mut terms = vec![(x[j], 1.0), (e[j], -1.0)];
        for (i, p) in instance.pools.iter().enumerate() {
            if let Some(k) = p.members.iter().position(|&u| u == j) {
                terms.push((z[i][k], 1.0));
            }
        }
        let rhs = scenario.demand[j] as f64 - scenario.w_show[j] as f64;
        m.add_row(format!("demand[{j}]"), terms, Cmp::Eq, rhs);
    }
    for (i, zi) in z.iter().enumerate() {
        m.add_row(format!("pool[{i}]"), zi.iter().map(|&v| (v, 1.0)).collect(), Cmp::Le, scenario.y_show[i] as f64);
    }
    let out = backend::solve(&m, &SolveParams::default())?;
    let vals = out.expect_optimal("recourse LP")?;
    let zr = z
        .iter()
        .map(|zi| zi.iter().map(|v| to_count(vals[v.index()], "z")).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let xr = x.iter().map(|v| to_count(vals[v.index()], "x")).collect::<Result<Vec<_>>>()?;
    let er = e.iter().map(|v| to_count(vals[v.index()], "e")).collect::<Result<Vec<_>>>()?;
    let res = RecourseResult { value: cost(instance, &xr, &er), z: zr, x: xr, e: er };
    debug_assert!(satisfies_constraints(instance, scenario, &res));
    Ok(res)
}

/// Whether `res` satisfies the recourse constraints exactly.
pub fn satisfies_constraints(instance: &Instance, scenario: &Scenario, res: &RecourseResult) -> bool {
    let mut inflow = vec![0i64; instance.num_units()];
    for (i, p) in instance.pools.iter().enumerate() {
        let used: u64 = res.z[i].iter().map(|&v| v as u64).sum();
        if used > scenario.y_show[i] as u64 {
            return false;
        }
        for (k, &j) in p.members.iter().enumerate() {
            inflow[j] += res.z[i][k] as i64;
        }
    }
    (0..instance.num_units()).all(|j| {
        inflow[j] + res.x[j] as i64 - res.e[j] as i64 == scenario.demand[j] as i64 - scenario.w_show[j] as i64
    })
}

/// Exact recourse by a bipartite max-flow. Every pool nurse is worth at
/// least `c_e`, and covering a shortage is worth `c_x > c_e`, so the optimum
/// covers as much shortage as possible and sends the rest to any member unit.
pub fn recourse_flow(instance: &Instance, staffing: &Staffing, scenario: &Scenario) -> Result<RecourseResult> {
    check_scenario(instance, staffing, scenario)?;
    Ok(recourse_flow_unchecked(instance, scenario))
}

pub(crate) fn recourse_flow_unchecked(instance: &Instance, scenario: &Scenario) -> RecourseResult {
    let nj = instance.num_units();
    let mut short: Vec<u32> = (0..nj).map(|j| scenario.demand[j].saturating_sub(scenario.w_show[j])).collect();
    let mut e: Vec<u32> = (0..nj).map(|j| scenario.w_show[j].saturating_sub(scenario.demand[j])).collect();
    let mut left: Vec<u32> = scenario.y_show.clone();
    let mut z: Vec<Vec<u32>> = instance.pools.iter().map(|p| vec![0; p.members.len()]).collect();

    // Augmenting paths alternate pool -> unit (any capacity) and
    // unit -> pool (only along existing flow).
    loop {
        let Some(path) = augmenting_path(instance, &left, &short, &z) else { break };
        let (first_pool, _) = path[0];
        let (_, last_unit) = *path.last().unwrap();
        let mut amount = left[first_pool].min(short[last_unit]);
        // Each later pool frees itself by withdrawing from the previous unit.
        for w in path.windows(2) {
            let (_, u) = w[0];
            let (p_next, _) = w[1];
            let k = instance.pools[p_next].members.iter().position(|&m| m == u).unwrap();
            amount = amount.min(z[p_next][k]);
        }
        for (idx, &(p, u)) in path.iter().enumerate() {
            let k = instance.pools[p].members.iter().position(|&m| m == u).unwrap();
            z[p][k] += amount;
            if idx + 1 < path.len() {
                let (p_next, _) = path[idx + 1];
                let kb = instance.pools[p_next].members.iter().position(|&m| m == u).unwrap();
                z[p_next][kb] -= amount;
            }
        }
        left[first_pool] -= amount;
        short[last_unit] -= amount;
    }
    for (i, p) in instance.pools.iter().enumerate() {
        if left[i] > 0 {
            z[i][0] += left[i];
            e[p.members[0]] += left[i];
        }
    }
    let res = RecourseResult { value: cost(instance, &short, &e), z, x: short, e };
    debug_assert!(satisfies_constraints(instance, scenario, &res));
    res
}

/// Breadth-first search for a path starting at a pool with spare nurses and
/// ending at a unit with open shortage. Returned as a list of
/// `(pool, unit)` steps: pool `p_k` sends one more nurse to `u_k`, and
/// `p_{k+1}` withdraws one from `u_k` to free itself.
fn augmenting_path(instance: &Instance, left: &[u32], short: &[u32], z: &[Vec<u32>]) -> Option<Vec<(usize, usize)>> {
    let (ni, nj) = (instance.num_pools(), instance.num_units());
    let mut pool_prev: Vec<Option<Option<usize>>> = vec![None; ni]; // Some(None) = source
    let mut unit_prev: Vec<Option<usize>> = vec![None; nj];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..ni {
        if left[i] > 0 {
            pool_prev[i] = Some(None);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &instance.pools[i].members {
            if unit_prev[j].is_some() {
                continue;
            }
            unit_prev[j] = Some(i);
            if short[j] > 0 {
                let mut path = Vec::new();
                let mut u = j;
                loop {
                    let p = unit_prev[u].unwrap();
                    path.push((p, u));
                    match pool_prev[p].unwrap() {
                        None => break,
                        Some(prev_u) => u = prev_u,
                    }
                }
                path.reverse();
                return Some(path);
            }
            for (p2, pool) in instance.pools.iter().enumerate() {
                if pool_prev[p2].is_some() {
                    continue;
                }
                if let Some(k) = pool.members.iter().position(|&m| m == j) {
                    if z[p2][k] > 0 {
                        pool_prev[p2] = Some(Some(j));
                        queue.push_back(p2);
                    }
                }
            }
        }
    }
    None
}

/// Largest unit count for which the dual vertices are enumerated.
pub const DUAL_ENUMERATION_CAP: usize = 12;

/// Dual extreme points: `alpha_j` in `{c_e, c_x}` and each pool's `beta_i`
/// equal to minus the largest `alpha` over its members.
pub fn dual_vertices(instance: &Instance) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let nj = instance.num_units();
    if nj > DUAL_ENUMERATION_CAP {
        return Err(Error::TooLarge(format!("{nj} units exceed the dual enumeration cap {DUAL_ENUMERATION_CAP}")));
    }
    let c = &instance.costs;
    Ok((0u32..1 << nj)
        .map(|mask| {
            let alpha: Vec<f64> = (0..nj).map(|j| if mask >> j & 1 == 1 { c.c_x } else { c.c_e }).collect();
            let beta = instance
                .pools
                .iter()
                .map(|p| -p.members.iter().map(|&j| alpha[j]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            (alpha, beta)
        })
        .collect())
}

/// Recourse value from the best enumerated dual vertex.
pub fn recourse_dual(instance: &Instance, staffing: &Staffing, scenario: &Scenario) -> Result<f64> {
    check_scenario(instance, staffing, scenario)?;
    let best = dual_vertices(instance)?
        .into_iter()
        .map(|(alpha, beta)| {
            let a: f64 = (0..instance.num_units())
                .map(|j| (scenario.demand[j] as f64 - scenario.w_show[j] as f64) * alpha[j])
                .sum();
            let b: f64 = beta.iter().zip(&scenario.y_show).map(|(b, &y)| b * y as f64).sum();
            a + b
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

const BRUTE_FORCE_LIMIT: f64 = 2e7;

/// Exhaustive search over reassignments with every `z_ij <= cap`. The
/// temporaries are then forced: `x_j = max(0, shortage left)`, since a larger
/// `x_j` only adds `c_x - c_e > 0` per unit.
pub fn recourse_bruteforce(instance: &Instance, staffing: &Staffing, scenario: &Scenario, cap: u32) -> Result<f64> {
    check_scenario(instance, staffing, scenario)?;
    let max_du = instance.units.iter().map(|u| u.demand_bounds.upper).max().unwrap_or(0);
    if cap < max_du {
        return Err(Error::Invalid(format!("cap {cap} must be at least the largest demand bound {max_du}")));
    }
    let mut slots = Vec::new();
    let mut space = 1.0f64;
    for (i, p) in instance.pools.iter().enumerate() {
        let hi = cap.min(scenario.y_show[i]);
        for &j in &p.members {
            slots.push((i, j, hi));
            space *= hi as f64 + 1.0;
        }
    }
    if space > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!("brute-force recourse space {space:.3e}")));
    }
    let need: Vec<i64> = (0..instance.num_units()).map(|j| scenario.demand[j] as i64 - scenario.w_show[j] as i64).collect();
    let mut used = vec![0u32; instance.num_pools()];
    let mut inflow = vec![0i64; instance.num_units()];
    let mut best = f64::INFINITY;
    enumerate(instance, scenario, cap, &slots, 0, &mut used, &mut inflow, &need, &mut best);
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Infeasible("no recourse within the cap".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    instance: &Instance,
    scenario: &Scenario,
    cap: u32,
    slots: &[(usize, usize, u32)],
    k: usize,
    used: &mut [u32],
    inflow: &mut [i64],
    need: &[i64],
    best: &mut f64,
) {
    if k == slots.len() {
        let c = &instance.costs;
        let mut total = 0.0;
        for j in 0..need.len() {
            let x = (need[j] - inflow[j]).max(0);
            if x > cap as i64 {
                return;
            }
            let e = inflow[j] + x - need[j];
            total += c.c_x * x as f64 - c.c_e * e as f64;
        }
        *best = best.min(total);
        return;
    }
    let (i, j, hi) = slots[k];
    let room = scenario.y_show[i] - used[i];
    for v in 0..=hi.min(room) {
        used[i] += v;
        inflow[j] += v as i64;
        enumerate(instance, scenario, cap, slots, k + 1, used, inflow, need, best);
        used[i] -= v;
        inflow[j] -= v as i64;
    }
}
