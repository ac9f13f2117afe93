//! Calibration from historical records and out-of-sample Monte Carlo
//! evaluation of staffing decisions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::SolveParams;
use crate::drns::solve_monolithic;
use crate::error::{Error, Result};
use crate::model::{check_version, classify_structure, read_text, write_text, AttendanceFunction, Bounds, Instance, Staffing, FILE_VERSION};
use crate::second_stage::{recourse_flow, recourse_lp, Scenario};

/// Raw sample moments `(1/N) sum d^q` for `q = 1..=num_moments`.
pub fn empirical_moments(demands: &[u32], num_moments: usize) -> Result<Vec<f64>> {
    if demands.is_empty() {
        return Err(Error::Invalid("empty demand history".into()));
    }
    let n = demands.len() as f64;
    Ok((1..=num_moments)
        .map(|q| demands.iter().map(|&d| (d as f64).powi(q as i32)).sum::<f64>() / n)
        .collect())
}

/// One day's staffing level and the number who showed up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attendance {
    pub staffed: u32,
    pub showed: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitHistory {
    pub attendance: Vec<Attendance>,
    pub demand: Vec<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttendanceRecords {
    pub units: Vec<UnitHistory>,
    pub pools: Vec<Vec<Attendance>>,
}

/// Piecewise-linear attendance over `range`: the mean show-up count at each
/// observed level, linear between observed levels and through `(0, 0)`,
/// proportional above the highest observed level, clamped to `[0, level]`.
pub fn fit_attendance(records: &[Attendance], range: Bounds) -> Result<AttendanceFunction> {
    if records.is_empty() {
        return Err(Error::Invalid("no attendance records to fit".into()));
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for r in records {
        if r.showed > r.staffed {
            return Err(Error::Invalid(format!("record shows {} of {} staffed", r.showed, r.staffed)));
        }
        let e = sums.entry(r.staffed).or_insert((0.0, 0));
        e.0 += r.showed as f64;
        e.1 += 1;
    }
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    knots.extend(sums.iter().filter(|(&l, _)| l > 0).map(|(&l, &(s, n))| (l as f64, s / n as f64)));
    let &(top_x, top_y) = knots.last().expect("origin knot");
    let eval = |x: f64| -> f64 {
        if x >= top_x {
            return if top_x > 0.0 { top_y / top_x * x } else { x };
        }
        let k = knots.partition_point(|&(kx, _)| kx <= x);
        let (x0, y0) = knots[k - 1];
        let (x1, y1) = knots[k];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    let values = range.levels().map(|l| eval(l as f64).clamp(0.0, l as f64)).collect();
    Ok(AttendanceFunction { base_level: range.lower, values })
}

/// `base` with moments and attendance refitted from `records`. Demand
/// bounds widen to cover the observed history.
pub fn calibrate(base: &Instance, records: &AttendanceRecords) -> Result<Instance> {
    if records.units.len() != base.num_units() || records.pools.len() != base.num_pools() {
        return Err(Error::Invalid("records do not match the instance's units and pools".into()));
    }
    let mut out = base.clone();
    for (unit, hist) in out.units.iter_mut().zip(&records.units) {
        unit.moments = empirical_moments(&hist.demand, unit.moments.len())?;
        let lo = hist.demand.iter().copied().min().unwrap_or(0).min(unit.demand_bounds.lower);
        let hi = hist.demand.iter().copied().max().unwrap_or(0).max(unit.demand_bounds.upper);
        unit.demand_bounds = Bounds::new(lo, hi);
        unit.attendance = fit_attendance(&hist.attendance, unit.staffing_bounds)?;
    }
    for (pool, hist) in out.pools.iter_mut().zip(&records.pools) {
        pool.attendance = fit_attendance(hist, pool.staffing_bounds)?;
    }
    Ok(out)
}

/// Show-up rates for binomial sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub units: Vec<f64>,
    pub pools: Vec<f64>,
}

impl Rates {
    /// Rates of linear attendance functions; fails on any other shape.
    pub fn of(instance: &Instance) -> Result<Rates> {
        let rate = |f: &AttendanceFunction, what: String| {
            f.linear_rate().ok_or_else(|| Error::Invalid(format!("{what} has nonlinear attendance; supply explicit show-up rates")))
        };
        Ok(Rates {
            units: instance.units.iter().enumerate().map(|(j, u)| rate(&u.attendance, format!("unit {j}"))).collect::<Result<_>>()?,
            pools: instance.pools.iter().enumerate().map(|(i, p)| rate(&p.attendance, format!("pool {i}"))).collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMetadata {
    pub demand: String,
    pub attendance: String,
    pub rates: Rates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBatch {
    pub seed: u64,
    pub staffing: Staffing,
    pub metadata: SamplingMetadata,
    pub scenarios: Vec<Scenario>,
}

/// Word offset between the random streams of a scenario's demand block and
/// of each unit's and pool's nurses.
const BLOCK_WORDS: u128 = 1 << 24;

/// Demand with the given mean and standard deviation, log-normal with
/// matched moments, rounded and clamped to the support.
fn demand_sampler(mean: f64, sd: f64) -> Option<LogNormal<f64>> {
    if sd <= 0.0 || mean <= 0.0 {
        return None;
    }
    let s2 = (1.0 + sd * sd / (mean * mean)).ln();
    LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt()).ok()
}

fn binomial(rng: &mut ChaCha8Rng, n: u32, p: f64) -> u32 {
    // One uniform per nurse keeps draws for different staffing levels
    // coupled: adding a nurse never removes a show-up.
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u32
}

fn stream(seed: u64, scenario: usize, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scenario as u64);
    rng.set_word_pos(block as u128 * BLOCK_WORDS);
    rng
}

/// `n` scenarios at `staffing`, using the instance's linear attendance rates.
pub fn sample_scenarios(instance: &Instance, staffing: &Staffing, n: usize, seed: u64) -> Result<ScenarioBatch> {
    sample_scenarios_with_rates(instance, staffing, &Rates::of(instance)?, n, seed)
}

/// Each scenario draws from its own streams, so scenario `k` is the same
/// whatever `n` and however the work is split; demand draws do not depend
/// on the staffing.
pub fn sample_scenarios_with_rates(instance: &Instance, staffing: &Staffing, rates: &Rates, n: usize, seed: u64) -> Result<ScenarioBatch> {
    if n == 0 {
        return Err(Error::Invalid("need at least one scenario".into()));
    }
    if !instance.is_staffing_feasible(staffing) {
        return Err(Error::Invalid("staffing is outside its bounds or the resource cap".into()));
    }
    if rates.units.len() != instance.num_units() || rates.pools.len() != instance.num_pools() {
        return Err(Error::Invalid("rates do not match the instance".into()));
    }
    if let Some(r) = rates.units.iter().chain(&rates.pools).find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Invalid(format!("show-up rate {r} outside [0, 1]")));
    }
    let samplers: Vec<_> = instance.units.iter().map(|u| demand_sampler(u.mean(), u.std_dev())).collect();
    let nj = instance.num_units();
    let scenarios = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k, 0);
            let demand = instance
                .units
                .iter()
                .zip(&samplers)
                .map(|(u, s)| {
                    let raw = match s {
                        Some(s) => s.sample(&mut rng),
                        None => u.mean(),
                    };
                    let b = u.demand_bounds;
                    (raw.round().max(0.0) as u32).clamp(b.lower, b.upper)
                })
                .collect();
            let w_show = (0..nj).map(|j| binomial(&mut stream(seed, k, 1 + j), staffing.w[j], rates.units[j])).collect();
            let y_show = (0..instance.num_pools())
                .map(|i| binomial(&mut stream(seed, k, 1 + nj + i), staffing.y[i], rates.pools[i]))
                .collect();
            Scenario { w_show, y_show, demand }
        })
        .collect();
    Ok(ScenarioBatch {
        seed,
        staffing: staffing.clone(),
        metadata: SamplingMetadata {
            demand: "log-normal matching each unit's mean and standard deviation, rounded, clamped to the demand bounds".into(),
            attendance: "binomial(staffed, rate)".into(),
            rates: rates.clone(),
        },
        scenarios,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub recourse: f64,
    pub temporaries: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfSample {
    pub samples: usize,
    pub seed: u64,
    pub first_stage_cost: f64,
    pub avg_cost: f64,
    /// 95% normal-approximation half-width of `avg_cost`.
    pub cost_half_width: f64,
    pub avg_temporaries: f64,
    pub temporaries_half_width: f64,
    pub per_scenario: Vec<ScenarioOutcome>,
}

fn mean_and_half_width(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Average staffing cost of the batch's staffing over its scenarios. The
/// recourse problems are solved as flows unless `use_lp` is set.
pub fn out_of_sample(instance: &Instance, batch: &ScenarioBatch, use_lp: bool) -> Result<OutOfSample> {
    let st = &batch.staffing;
    let per_scenario = batch
        .scenarios
        .par_iter()
        .map(|s| {
            let r = if use_lp { recourse_lp(instance, st, s)? } else { recourse_flow(instance, st, s)? };
            Ok(ScenarioOutcome { recourse: r.value, temporaries: r.temporaries() })
        })
        .collect::<Result<Vec<_>>>()?;
    if per_scenario.is_empty() {
        return Err(Error::Invalid("empty scenario batch".into()));
    }
    let first_stage_cost = instance.first_stage_cost(st);
    let (avg_recourse, cost_half_width) = mean_and_half_width(per_scenario.iter().map(|o| o.recourse));
    let (avg_temporaries, temporaries_half_width) = mean_and_half_width(per_scenario.iter().map(|o| o.temporaries as f64));
    Ok(OutOfSample {
        samples: per_scenario.len(),
        seed: batch.seed,
        first_stage_cost,
        avg_cost: first_stage_cost + avg_recourse,
        cost_half_width,
        avg_temporaries,
        temporaries_half_width,
        per_scenario,
    })
}

/// Out-of-sample comparison of staffing that models absenteeism against
/// staffing that assumes every scheduled nurse shows up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsenteeismComparison {
    pub aware: Staffing,
    pub blind: Staffing,
    pub z_abs: f64,
    pub z_wo: f64,
    pub x_abs: f64,
    pub x_wo: f64,
    pub z_abs_half_width: f64,
    pub z_wo_half_width: f64,
}

/// Both staffings are evaluated under the instance's true rates with the
/// same seed, so they see identical demands and coupled show-ups.
pub fn absenteeism_experiment(instance: &Instance, samples: usize, seed: u64, params: &SolveParams) -> Result<AbsenteeismComparison> {
    let structure = classify_structure(instance);
    let rates = Rates::of(instance)?;
    let aware = solve_monolithic(instance, structure, params)?.staffing();
    let blind = solve_monolithic(&instance.absenteeism_blind(), structure, params)?.staffing();
    let eval = |st: &Staffing| -> Result<OutOfSample> {
        out_of_sample(instance, &sample_scenarios_with_rates(instance, st, &rates, samples, seed)?, false)
    };
    let a = eval(&aware)?;
    let b = eval(&blind)?;
    Ok(AbsenteeismComparison {
        aware,
        blind,
        z_abs: a.avg_cost,
        z_wo: b.avg_cost,
        x_abs: a.avg_temporaries,
        x_wo: b.avg_temporaries,
        z_abs_half_width: a.cost_half_width,
        z_wo_half_width: b.cost_half_width,
    })
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

fn to_text<T: Serialize + Clone>(body: &T) -> String {
    serde_json::to_string_pretty(&Versioned { version: FILE_VERSION, body: body.clone() }).expect("serialises")
}

fn from_text<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    check_version(text)?;
    let v: Versioned<T> = serde_json::from_str(text).map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    Ok(v.body)
}

pub fn write_batch(batch: &ScenarioBatch, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &to_text(batch))
}

pub fn read_batch(path: impl AsRef<Path>) -> Result<ScenarioBatch> {
    from_text(&read_text(path.as_ref())?)
}

pub fn write_report(report: &OutOfSample, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &to_text(report))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<OutOfSample> {
    from_text(&read_text(path.as_ref())?)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<AttendanceRecords> {
    from_text(&read_text(path.as_ref())?)
}

pub fn write_records(records: &AttendanceRecords, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &to_text(records))
}
