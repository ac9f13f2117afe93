//! MILP building blocks shared by the master problem, the monolithic models
//! and pool design: binary staffing expansion with linearised products,
//! epigraph variables for the cut coefficients, and cut rows.

use std::collections::HashSet;

use crate::adversary::{AdversaryPoint, Iterate};
use crate::backend::{Cmp, LinearModel, Var};
use crate::error::{Error, Result};
use crate::model::{Instance, Staffing};

/// Demand points allowed per unit before epigraph generation refuses.
pub const MAX_SUPPORT_ROWS: usize = 10_000;

/// Widths above this use a base-2 expansion when the attendance function is
/// linear.
pub const UNARY_MAX_WIDTH: usize = 16;

#[derive(Clone, Debug)]
pub struct ExpansionVars {
    /// Unary blocks: `u[j][k] = 1` iff unit `j` staffs more than `w_L + k`
    /// nurses. Base-2 blocks: `w_j = w_L + sum_k u_weights[j][k] u[j][k]`.
    pub u: Vec<Vec<Var>>,
    pub v: Vec<Vec<Var>>,
    pub u_weights: Vec<Vec<f64>>,
    pub v_weights: Vec<Vec<f64>>,
    /// `phi[j][k]` stands for `u[j][k] * gamma[j]`.
    pub phi: Vec<Vec<Var>>,
    /// `nu[i][l]` stands for `v[i][l] * lambda[i]`.
    pub nu: Vec<Vec<Var>>,
    pub gamma: Vec<Var>,
    pub lambda: Vec<Var>,
    pub rho: Vec<Vec<Var>>,
}

impl ExpansionVars {
    /// The iterate in unary form. Base-2 blocks are decoded, which assumes
    /// integral binaries.
    pub fn iterate(&self, values: &[f64]) -> Iterate {
        let get = |vs: &[Var]| vs.iter().map(|v| values[v.index()]).collect::<Vec<f64>>();
        let unary = |bins: &[Vec<Var>], prods: &[Vec<Var>], weights: &[Vec<f64>], mult: &[Var]| {
            let mut us = Vec::with_capacity(bins.len());
            let mut ps = Vec::with_capacity(bins.len());
            for (k, ws) in weights.iter().enumerate() {
                if is_unary(ws) {
                    us.push(get(&bins[k]));
                    ps.push(get(&prods[k]));
                    continue;
                }
                let width = ws.iter().sum::<f64>() as usize;
                let level: f64 = bins[k].iter().zip(ws).map(|(b, w)| w * values[b.index()].round()).sum();
                let m = values[mult[k].index()];
                let u: Vec<f64> = (0..width).map(|l| if (l as f64) < level { 1.0 } else { 0.0 }).collect();
                ps.push(u.iter().map(|x| x * m).collect());
                us.push(u);
            }
            (us, ps)
        };
        let (u, phi) = unary(&self.u, &self.phi, &self.u_weights, &self.gamma);
        let (v, nu) = unary(&self.v, &self.nu, &self.v_weights, &self.lambda);
        Iterate { u, v, phi, nu, gamma: get(&self.gamma), lambda: get(&self.lambda), rho: self.rho.iter().map(|r| get(r)).collect() }
    }

    /// Pins the binaries to the expansion of `staffing`.
    pub fn fix(&self, model: &mut LinearModel, instance: &Instance, staffing: &Staffing) {
        let pin = |model: &mut LinearModel, vars: &[Var], weights: &[f64], on: usize| {
            for (&x, b) in vars.iter().zip(encode(weights, on)) {
                model.set_bounds(x, b, b);
            }
        };
        for (j, unit) in instance.units.iter().enumerate() {
            pin(model, &self.u[j], &self.u_weights[j], staffing.w[j].saturating_sub(unit.staffing_bounds.lower) as usize);
        }
        for (i, pool) in instance.pools.iter().enumerate() {
            pin(model, &self.v[i], &self.v_weights[i], staffing.y[i].saturating_sub(pool.staffing_bounds.lower) as usize);
        }
    }
}

fn is_unary(weights: &[f64]) -> bool {
    weights.iter().all(|&w| w == 1.0)
}

/// Weights `1, 2, 4, ..., rest` summing to `width`.
fn binary_weights(width: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut left = width;
    let mut w = 1;
    while left >= w {
        out.push(w as f64);
        left -= w;
        w *= 2;
    }
    if left > 0 {
        out.push(left as f64);
    }
    out
}

/// Binary values representing `level` under `weights`.
fn encode(weights: &[f64], level: usize) -> Vec<f64> {
    if is_unary(weights) {
        return (0..weights.len()).map(|k| if k < level { 1.0 } else { 0.0 }).collect();
    }
    let pow_count = weights.iter().enumerate().take_while(|&(k, &w)| w == (1u64 << k) as f64).count();
    let pow_sum = (1usize << pow_count) - 1;
    let mut out = vec![0.0; weights.len()];
    let mut left = level;
    // The trailing remainder weight is used only when the powers of two
    // alone cannot reach `level`.
    if left > pow_sum {
        out[pow_count] = 1.0;
        left -= weights[pow_count] as usize;
    }
    for (k, x) in out.iter_mut().enumerate().take(pow_count) {
        if left & (1 << k) != 0 {
            *x = 1.0;
        }
    }
    out
}

fn block_weights(width: usize, linear: bool) -> Vec<f64> {
    if linear && width > UNARY_MAX_WIDTH {
        binary_weights(width)
    } else {
        vec![1.0; width]
    }
}

/// Adds one expanded staffing block: binaries, their products with `mult`
/// (linearised over `mult in [-c_x, 0]`), and the monotone ordering for
/// unary blocks.
fn expand_block(model: &mut LinearModel, tag: &str, idx: usize, weights: &[f64], mult: Var, m_big: f64) -> (Vec<Var>, Vec<Var>) {
    let width = weights.len();
    let unary = is_unary(weights);
    let mut bins = Vec::with_capacity(width);
    let mut prods = Vec::with_capacity(width);
    for k in 0..width {
        let b = model.add_binary(format!("{tag}[{idx},{k}]"));
        let p = model.add_var(format!("{tag}_prod[{idx},{k}]"), -m_big, 0.0);
        model.add_row(format!("{tag}_mc_lo[{idx},{k}]"), vec![(p, 1.0), (mult, -1.0)], Cmp::Ge, 0.0);
        model.add_row(format!("{tag}_mc_b[{idx},{k}]"), vec![(p, 1.0), (b, m_big)], Cmp::Ge, 0.0);
        model.add_row(format!("{tag}_mc_up[{idx},{k}]"), vec![(p, 1.0), (mult, -1.0), (b, m_big)], Cmp::Le, m_big);
        if unary && k > 0 {
            model.add_row(format!("{tag}_ord[{idx},{k}]"), vec![(bins[k - 1], 1.0), (b, -1.0)], Cmp::Ge, 0.0);
        }
        bins.push(b);
        prods.push(p);
    }
    (bins, prods)
}

/// Expansion variables and the staffing part of the objective; also the
/// budget row when the instance carries a resource cap.
pub fn add_expansion(model: &mut LinearModel, instance: &Instance) -> ExpansionVars {
    let c = &instance.costs;
    let m_big = c.c_x;
    let q = instance.num_moments();
    let mut out = ExpansionVars {
        u: Vec::new(),
        v: Vec::new(),
        u_weights: Vec::new(),
        v_weights: Vec::new(),
        phi: Vec::new(),
        nu: Vec::new(),
        gamma: Vec::new(),
        lambda: Vec::new(),
        rho: Vec::new(),
    };
    let mut budget: Vec<(Var, f64)> = Vec::new();
    let mut budget_const = 0.0;

    for (j, unit) in instance.units.iter().enumerate() {
        let w_l = unit.staffing_bounds.lower;
        let gamma = model.add_var(format!("gamma[{j}]"), -m_big, 0.0);
        let rho: Vec<Var> = (0..q).map(|k| model.add_free_var(format!("rho[{j},{}]", k + 1))).collect();
        let width = (instance.effective_unit_upper(j) - w_l) as usize;
        let weights = block_weights(width, unit.attendance.linear_rate().is_some());
        let (u, phi) = expand_block(model, "u", j, &weights, gamma, m_big);

        model.add_obj_constant(c.c_w * w_l as f64);
        model.add_obj(gamma, unit.attendance.value(w_l));
        for (r, mu) in rho.iter().zip(&unit.moments) {
            model.add_obj(*r, *mu);
        }
        for k in 0..weights.len() {
            let inc = if is_unary(&weights) { unit.attendance.increment(k + 1) } else { weights[k] * unit.attendance.linear_rate().unwrap_or(0.0) };
            model.add_obj(u[k], c.c_w * weights[k]);
            model.add_obj(phi[k], inc);
            budget.push((u[k], weights[k]));
        }
        budget_const += w_l as f64;
        out.u.push(u);
        out.u_weights.push(weights);
        out.phi.push(phi);
        out.gamma.push(gamma);
        out.rho.push(rho);
    }
    for (i, pool) in instance.pools.iter().enumerate() {
        let y_l = pool.staffing_bounds.lower;
        let lambda = model.add_var(format!("lambda[{i}]"), -m_big, 0.0);
        let width = (instance.effective_pool_upper(i) - y_l) as usize;
        let weights = block_weights(width, pool.attendance.linear_rate().is_some());
        let (v, nu) = expand_block(model, "v", i, &weights, lambda, m_big);

        model.add_obj_constant(c.c_y * y_l as f64);
        model.add_obj(lambda, pool.attendance.value(y_l));
        for l in 0..weights.len() {
            let inc = if is_unary(&weights) { pool.attendance.increment(l + 1) } else { weights[l] * pool.attendance.linear_rate().unwrap_or(0.0) };
            model.add_obj(v[l], c.c_y * weights[l]);
            model.add_obj(nu[l], inc);
            budget.push((v[l], weights[l]));
        }
        budget_const += y_l as f64;
        out.v.push(v);
        out.v_weights.push(weights);
        out.nu.push(nu);
        out.lambda.push(lambda);
    }
    if let Some(cap) = instance.resource_cap {
        if !budget.is_empty() {
            model.add_row("budget", budget, Cmp::Le, cap as f64 - budget_const);
        }
    }
    out
}

/// Epigraph variables standing for the cut coefficients.
#[derive(Clone, Debug)]
pub struct Epigraphs {
    /// Hinge part of `c_r`.
    pub zeta: Vec<Var>,
    /// `c_t`.
    pub eta_x: Vec<Var>,
    /// Demand part of `c_r`.
    pub eta_e: Vec<Var>,
    /// `max(c_t, c_r)`.
    pub chi: Vec<Var>,
    /// `c_p` per pool.
    pub pool: Vec<Var>,
}

/// `eta >= slope * d - sum_q d^q rho_q` for every integer `d` in the support.
pub(crate) fn add_sup_rows(model: &mut LinearModel, name: &str, eta: Var, rho: &[Var], slope: f64, lo: u32, hi: u32) {
    for d in lo..=hi {
        let x = d as f64;
        let mut terms = vec![(eta, 1.0)];
        let mut pw = 1.0;
        for &r in rho {
            pw *= x;
            terms.push((r, pw));
        }
        model.add_row(format!("{name}[{d}]"), terms, Cmp::Ge, slope * x);
    }
}

/// Terms of `(-c_e - gamma) w_L - sum_k (phi_k + c_e u_k)` moved to the left of
/// `zeta >= ...`, returned with the right-hand side.
pub(crate) fn hinge_terms(lower: u32, c_e: f64, mult: Var, bins: &[Var], prods: &[Var], weights: &[f64]) -> (Vec<(Var, f64)>, f64) {
    let mut terms = vec![(mult, lower as f64)];
    for ((&b, &p), &w) in bins.iter().zip(prods).zip(weights) {
        terms.push((p, w));
        terms.push((b, c_e * w));
    }
    (terms, -c_e * lower as f64)
}

pub fn add_epigraphs(model: &mut LinearModel, instance: &Instance, ex: &ExpansionVars) -> Result<Epigraphs> {
    let c = &instance.costs;
    let mut out = Epigraphs { zeta: Vec::new(), eta_x: Vec::new(), eta_e: Vec::new(), chi: Vec::new(), pool: Vec::new() };
    for (j, unit) in instance.units.iter().enumerate() {
        let b = unit.demand_bounds;
        if b.width() + 1 > MAX_SUPPORT_ROWS {
            return Err(Error::TooLarge(format!(
                "unit {j} demand support [{}, {}] exceeds {MAX_SUPPORT_ROWS} points",
                b.lower, b.upper
            )));
        }
        let zeta = model.add_var(format!("zeta[{j}]"), 0.0, f64::INFINITY);
        let eta_x = model.add_free_var(format!("eta_x[{j}]"));
        let eta_e = model.add_free_var(format!("eta_e[{j}]"));
        let chi = model.add_free_var(format!("chi[{j}]"));

        let (mut terms, rhs) = hinge_terms(unit.staffing_bounds.lower, c.c_e, ex.gamma[j], &ex.u[j], &ex.phi[j], &ex.u_weights[j]);
        terms.push((zeta, 1.0));
        model.add_row(format!("zeta_hinge[{j}]"), terms, Cmp::Ge, rhs);
        add_sup_rows(model, &format!("eta_x[{j}]"), eta_x, &ex.rho[j], c.c_x, b.lower, b.upper);
        add_sup_rows(model, &format!("eta_e[{j}]"), eta_e, &ex.rho[j], c.c_e, b.lower, b.upper);
        model.add_row(format!("chi_x[{j}]"), vec![(chi, 1.0), (eta_x, -1.0)], Cmp::Ge, 0.0);
        model.add_row(format!("chi_r[{j}]"), vec![(chi, 1.0), (zeta, -1.0), (eta_e, -1.0)], Cmp::Ge, 0.0);

        out.zeta.push(zeta);
        out.eta_x.push(eta_x);
        out.eta_e.push(eta_e);
        out.chi.push(chi);
    }
    for (i, pool) in instance.pools.iter().enumerate() {
        let phi = model.add_var(format!("pool_hinge[{i}]"), 0.0, f64::INFINITY);
        let (mut terms, rhs) = hinge_terms(pool.staffing_bounds.lower, c.c_e, ex.lambda[i], &ex.v[i], &ex.nu[i], &ex.v_weights[i]);
        terms.push((phi, 1.0));
        model.add_row(format!("pool_hinge[{i}]"), terms, Cmp::Ge, rhs);
        out.pool.push(phi);
    }
    Ok(out)
}

/// Cuts already present in a master problem.
#[derive(Clone, Debug, Default)]
pub struct CutSet {
    seen: HashSet<(Vec<bool>, Vec<Vec<bool>>)>,
}

impl CutSet {
    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn contains(&self, point: &AdversaryPoint) -> bool {
        self.seen.contains(&point.key())
    }
}

/// `theta >= sum_j [t_j eta_x_j + r_j (zeta_j + eta_e_j)] + sum_i p_i pool_i`.
pub fn encode_cut(model: &mut LinearModel, theta: Var, ep: &Epigraphs, point: &AdversaryPoint, cuts: &mut CutSet) -> Result<()> {
    if !cuts.seen.insert(point.key()) {
        return Err(Error::DuplicateCut);
    }
    let mut terms = vec![(theta, 1.0)];
    for j in 0..point.t.len() {
        if point.t[j] {
            terms.push((ep.eta_x[j], -1.0));
        } else {
            terms.push((ep.zeta[j], -1.0));
            terms.push((ep.eta_e[j], -1.0));
        }
    }
    for (i, &p) in point.p.iter().enumerate() {
        if p {
            terms.push((ep.pool[i], -1.0));
        }
    }
    model.add_row(format!("cut[{}]", cuts.len() - 1), terms, Cmp::Ge, 0.0);
    Ok(())
}

/// The staffing-cost expression of the objective evaluated directly, as a
/// check on the model's objective.
pub fn staffing_objective(instance: &Instance, it: &Iterate) -> f64 {
    let c = &instance.costs;
    let mut total = 0.0;
    for (j, unit) in instance.units.iter().enumerate() {
        let w_l = unit.staffing_bounds.lower;
        total += unit.moments.iter().zip(&it.rho[j]).map(|(m, r)| m * r).sum::<f64>();
        total += c.c_w * w_l as f64 + unit.attendance.value(w_l) * it.gamma[j];
        for (k, (u, phi)) in it.u[j].iter().zip(&it.phi[j]).enumerate() {
            total += c.c_w * u + unit.attendance.increment(k + 1) * phi;
        }
    }
    for (i, pool) in instance.pools.iter().enumerate() {
        let y_l = pool.staffing_bounds.lower;
        total += c.c_y * y_l as f64 + pool.attendance.value(y_l) * it.lambda[i];
        for (l, (v, nu)) in it.v[i].iter().zip(&it.nu[i]).enumerate() {
            total += c.c_y * v + pool.attendance.increment(l + 1) * nu;
        }
    }
    total
}
