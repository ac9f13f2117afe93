//! Non-emptiness of the moment ambiguity set.
//!
//! The set is nonempty exactly when expected show-ups lie between zero and
//! the staffing level, and each unit's demand moments are attainable by some
//! distribution on its integer support. The last check is a small LP per
//! unit and does not depend on staffing.

use rayon::prelude::*;

use crate::backend::{self, Cmp, LinearModel, Sense, SolveParams};
use crate::error::{Error, Result};
use crate::model::{Instance, Staffing};

pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    /// Per unit: expected show-ups within `[0, w_j]`.
    pub condition1: Vec<bool>,
    /// Per pool: expected show-ups within `[0, y_i]`.
    pub condition2: Vec<bool>,
    /// Per unit: total moment mismatch of the best distribution on the
    /// demand support.
    pub condition3: Vec<f64>,
    pub tol: f64,
    pub overall: bool,
}

impl FeasibilityReport {
    /// Human-readable reasons for failure, empty when `overall` holds.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, ok) in self.condition1.iter().enumerate() {
            if !ok {
                out.push(format!("condition 1 (unit attendance within staffing) fails for unit {j}"));
            }
        }
        for (i, ok) in self.condition2.iter().enumerate() {
            if !ok {
                out.push(format!("condition 2 (pool attendance within staffing) fails for pool {i}"));
            }
        }
        for (j, v) in self.condition3.iter().enumerate() {
            if *v > self.tol {
                out.push(format!("condition 3 (demand moments attainable on support) fails for unit {j}: mismatch {v:.3e}"));
            }
        }
        out
    }
}

/// Per-unit witness distributions over the demand support.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandCertificate {
    pub mismatch: Vec<f64>,
    /// `support[j][k]` is the probability of demand `d_L + k`.
    pub support: Vec<Vec<f64>>,
}

fn power(k: u32, q: usize) -> f64 {
    (k as f64).powi(q as i32)
}

fn unit_moment_lp(instance: &Instance, j: usize) -> Result<(f64, Vec<f64>)> {
    let u = &instance.units[j];
    let levels: Vec<u32> = u.demand_bounds.levels().collect();
    let mut m = LinearModel::new(Sense::Minimize);
    let p: Vec<_> = levels.iter().map(|k| m.add_var(format!("p[{k}]"), 0.0, f64::INFINITY)).collect();
    m.add_row("total", p.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
    for (q, &mu) in u.moments.iter().enumerate() {
        let plus = m.add_var(format!("tau+[{q}]"), 0.0, f64::INFINITY);
        let minus = m.add_var(format!("tau-[{q}]"), 0.0, f64::INFINITY);
        m.add_obj(plus, 1.0);
        m.add_obj(minus, 1.0);
        let mut terms: Vec<_> = levels.iter().zip(&p).map(|(&k, &v)| (v, power(k, q + 1))).collect();
        terms.push((plus, 1.0));
        terms.push((minus, -1.0));
        m.add_row(format!("moment[{}]", q + 1), terms, Cmp::Eq, mu);
    }
    let params = SolveParams { feasibility_tol: 1e-10, ..SolveParams::default() };
    let out = backend::solve(&m, &params)?;
    let vals = out.expect_optimal("moment LP")?;
    let mut probs: Vec<f64> = p.iter().map(|v| vals[v.index()].max(0.0)).collect();
    let value = out.objective.max(0.0);
    if value <= DEFAULT_TOL {
        polish(&levels, &u.moments, &mut probs);
    }
    Ok((value, probs))
}

/// Re-solves the moment equations on the LP's support so the witness matches
/// the moments to rounding error rather than solver tolerance.
fn polish(levels: &[u32], moments: &[f64], probs: &mut [f64]) {
    let support: Vec<usize> = (0..probs.len()).filter(|&k| probs[k] > 1e-12).collect();
    let n = moments.len() + 1;
    if support.len() != n {
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|x| *x /= s);
        return;
    }
    // Row 0: total mass; row q: q-th moment.
    let mut a = vec![vec![0.0; n + 1]; n];
    for (r, row) in a.iter_mut().enumerate() {
        for (c, &k) in support.iter().enumerate() {
            row[c] = if r == 0 { 1.0 } else { power(levels[k], r) };
        }
        row[n] = if r == 0 { 1.0 } else { moments[r - 1] };
    }
    if let Some(x) = gauss_solve(a) {
        if x.iter().all(|&v| v >= 0.0) {
            probs.iter_mut().for_each(|v| *v = 0.0);
            for (c, &k) in support.iter().enumerate() {
                probs[k] = x[c];
            }
        }
    }
}

fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

/// Runs the per-unit moment LPs (in parallel).
pub fn certify_demand_moments(instance: &Instance) -> Result<DemandCertificate> {
    let per_unit: Vec<(f64, Vec<f64>)> =
        (0..instance.num_units()).into_par_iter().map(|j| unit_moment_lp(instance, j)).collect::<Result<_>>()?;
    let (mismatch, support) = per_unit.into_iter().unzip();
    Ok(DemandCertificate { mismatch, support })
}

fn within(value: f64, level: u32, tol: f64) -> bool {
    value >= -tol && value <= level as f64 + tol
}

/// Conditions 1 and 2 at `staffing`, condition 3 from a precomputed
/// certificate.
pub fn report_with_certificate(
    instance: &Instance,
    staffing: &Staffing,
    cert: &DemandCertificate,
    tol: f64,
) -> Result<FeasibilityReport> {
    if !instance.is_staffing_feasible(staffing) {
        return Err(Error::Invalid("staffing outside bounds".into()));
    }
    let condition1: Vec<bool> = instance
        .units
        .iter()
        .zip(&staffing.w)
        .map(|(u, &w)| within(u.attendance.value(w), w, tol))
        .collect();
    let condition2: Vec<bool> = instance
        .pools
        .iter()
        .zip(&staffing.y)
        .map(|(p, &y)| within(p.attendance.value(y), y, tol))
        .collect();
    let overall =
        condition1.iter().all(|&b| b) && condition2.iter().all(|&b| b) && cert.mismatch.iter().all(|&v| v <= tol);
    Ok(FeasibilityReport { condition1, condition2, condition3: cert.mismatch.clone(), tol, overall })
}

pub fn check_feasibility(instance: &Instance, staffing: &Staffing, tol: f64) -> Result<FeasibilityReport> {
    let cert = certify_demand_moments(instance)?;
    report_with_certificate(instance, staffing, &cert, tol)
}

/// Conditions 1 and 2 at every staffing level in range, condition 3 once.
/// Returns the certificate so callers can reuse it.
pub fn verify_assumption(instance: &Instance, tol: f64) -> Result<DemandCertificate> {
    for (j, u) in instance.units.iter().enumerate() {
        for w in u.staffing_bounds.levels() {
            if !within(u.attendance.value(w), w, tol) {
                return Err(Error::AmbiguityEmpty(format!(
                    "condition 1 (unit attendance within staffing) fails for unit {j} at level {w}"
                )));
            }
        }
    }
    for (i, p) in instance.pools.iter().enumerate() {
        for y in p.staffing_bounds.levels() {
            if !within(p.attendance.value(y), y, tol) {
                return Err(Error::AmbiguityEmpty(format!(
                    "condition 2 (pool attendance within staffing) fails for pool {i} at level {y}"
                )));
            }
        }
    }
    let cert = certify_demand_moments(instance)?;
    if let Some((j, v)) = cert.mismatch.iter().enumerate().find(|(_, &v)| v > tol) {
        return Err(Error::AmbiguityEmpty(format!(
            "condition 3 (demand moments attainable on support) fails for unit {j}: mismatch {v:.3e}"
        )));
    }
    Ok(cert)
}

/// Independent marginals: demand from the certificate, show-ups on the two
/// integers around their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductDistribution {
    pub demand: Vec<Vec<(u32, f64)>>,
    pub w_show: Vec<Vec<(u32, f64)>>,
    pub y_show: Vec<Vec<(u32, f64)>>,
}

fn two_point(mean: f64, level: u32) -> Vec<(u32, f64)> {
    let mean = mean.clamp(0.0, level as f64);
    let lo = mean.floor();
    let frac = mean - lo;
    if frac == 0.0 {
        vec![(lo as u32, 1.0)]
    } else {
        vec![(lo as u32, 1.0 - frac), (lo as u32 + 1, frac)]
    }
}

pub fn construct_distribution(
    instance: &Instance,
    staffing: &Staffing,
    cert: &DemandCertificate,
) -> ProductDistribution {
    let demand = instance
        .units
        .iter()
        .zip(&cert.support)
        .map(|(u, p)| {
            p.iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(k, &v)| (u.demand_bounds.lower + k as u32, v))
                .collect()
        })
        .collect();
    let w_show = instance
        .units
        .iter()
        .zip(&staffing.w)
        .map(|(u, &w)| two_point(u.attendance.value(w), w))
        .collect();
    let y_show = instance
        .pools
        .iter()
        .zip(&staffing.y)
        .map(|(p, &y)| two_point(p.attendance.value(y), y))
        .collect();
    ProductDistribution { demand, w_show, y_show }
}

impl ProductDistribution {
    /// Largest absolute gap between the distribution's moments and the
    /// prescribed ones (demand moments and expected show-ups).
    pub fn moment_error(&self, instance: &Instance, staffing: &Staffing) -> f64 {
        let mut worst: f64 = 0.0;
        let mean = |m: &[(u32, f64)], q: usize| m.iter().map(|&(k, p)| p * power(k, q)).sum::<f64>();
        for (j, u) in instance.units.iter().enumerate() {
            for (q, &mu) in u.moments.iter().enumerate() {
                worst = worst.max((mean(&self.demand[j], q + 1) - mu).abs());
            }
            let mass: f64 = self.demand[j].iter().map(|x| x.1).sum();
            worst = worst.max((mass - 1.0).abs());
            worst = worst.max((mean(&self.w_show[j], 1) - u.attendance.value(staffing.w[j])).abs());
        }
        for (i, p) in instance.pools.iter().enumerate() {
            worst = worst.max((mean(&self.y_show[i], 1) - p.attendance.value(staffing.y[i])).abs());
        }
        worst
    }

    /// Whether every atom lies in the support for `staffing`.
    pub fn within_support(&self, instance: &Instance, staffing: &Staffing) -> bool {
        let ok_d = self.demand.iter().zip(&instance.units).all(|(m, u)| m.iter().all(|&(k, _)| u.demand_bounds.contains(k)));
        let ok_w = self.w_show.iter().zip(&staffing.w).all(|(m, &w)| m.iter().all(|&(k, _)| k <= w));
        let ok_y = self.y_show.iter().zip(&staffing.y).all(|(m, &y)| m.iter().all(|&(k, _)| k <= y));
        ok_d && ok_w && ok_y
    }
}
