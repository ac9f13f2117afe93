//! Problem data: units, pools, costs and attendance tables, plus file I/O
//! and the random instance generator.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Per unit nurse.
    pub c_w: f64,
    /// Per pool nurse.
    pub c_y: f64,
    /// Per temporary nurse hired after demand is revealed.
    pub c_x: f64,
    /// Benefit per excess nurse.
    pub c_e: f64,
}

/// Closed integer interval `[lower, upper]`, written as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Bounds {
    pub lower: u32,
    pub upper: u32,
}

impl Bounds {
    pub fn new(lower: u32, upper: u32) -> Self {
        Bounds { lower, upper }
    }

    /// Number of integer steps above the lower bound.
    pub fn width(&self) -> usize {
        self.upper.saturating_sub(self.lower) as usize
    }

    pub fn contains(&self, v: u32) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<u32> {
        self.lower..=self.upper
    }
}

impl From<[u32; 2]> for Bounds {
    fn from(a: [u32; 2]) -> Self {
        Bounds::new(a[0], a[1])
    }
}

impl From<Bounds> for [u32; 2] {
    fn from(b: Bounds) -> Self {
        [b.lower, b.upper]
    }
}

/// Expected number of nurses showing up, tabulated at every integer staffing
/// level from `base_level` upward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttendanceFunction {
    pub base_level: u32,
    pub values: Vec<f64>,
}

impl AttendanceFunction {
    /// `f(n) = rate * n` over the given range.
    pub fn linear(rate: f64, range: Bounds) -> Self {
        AttendanceFunction {
            base_level: range.lower,
            values: range.levels().map(|n| rate * n as f64).collect(),
        }
    }

    /// Identity table; every scheduled nurse shows up.
    pub fn identity(range: Bounds) -> Self {
        Self::linear(1.0, range)
    }

    pub fn top_level(&self) -> u32 {
        self.base_level + self.values.len().saturating_sub(1) as u32
    }

    pub fn get(&self, level: u32) -> Option<f64> {
        level
            .checked_sub(self.base_level)
            .and_then(|k| self.values.get(k as usize).copied())
    }

    /// Value at `level`; panics outside the tabulated range.
    pub fn value(&self, level: u32) -> f64 {
        self.get(level)
            .unwrap_or_else(|| panic!("attendance level {level} outside table"))
    }

    /// `f(L + k) - f(L + k - 1)` for `k >= 1`.
    pub fn increment(&self, k: usize) -> f64 {
        self.values[k] - self.values[k - 1]
    }

    /// The common show-up rate if the table is `rate * n` everywhere.
    pub fn linear_rate(&self) -> Option<f64> {
        let mut rate = None;
        for (k, &v) in self.values.iter().enumerate() {
            let n = (self.base_level as usize + k) as f64;
            if n == 0.0 {
                if v.abs() > 1e-12 {
                    return None;
                }
                continue;
            }
            let r = v / n;
            match rate {
                None => rate = Some(r),
                Some(r0) if (r - r0).abs() > 1e-9 => return None,
                _ => {}
            }
        }
        // A table holding only level 0 carries no rate information.
        Some(rate.unwrap_or(1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSpec {
    /// Raw moments `E[d^q]`, q = 1..Q.
    pub moments: Vec<f64>,
    pub demand_bounds: Bounds,
    pub staffing_bounds: Bounds,
    pub attendance: AttendanceFunction,
}

impl UnitSpec {
    pub fn mean(&self) -> f64 {
        self.moments[0]
    }

    /// Standard deviation implied by the first two moments (0 if Q = 1).
    pub fn std_dev(&self) -> f64 {
        if self.moments.len() < 2 {
            return 0.0;
        }
        let m = self.moments[0];
        (self.moments[1] - m * m).max(0.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    /// Zero-based unit indices, strictly increasing.
    pub members: Vec<usize>,
    pub staffing_bounds: Bounds,
    pub attendance: AttendanceFunction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub units: Vec<UnitSpec>,
    pub pools: Vec<PoolSpec>,
    pub costs: CostParams,
    pub resource_cap: Option<u32>,
    pub label: String,
}

impl Instance {
    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn num_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn num_moments(&self) -> usize {
        self.units.first().map_or(0, |u| u.moments.len())
    }

    /// Upper staffing level of unit `j` after accounting for the resource cap
    /// and everyone else's lower bound. Never below the unit's lower bound.
    pub fn effective_unit_upper(&self, j: usize) -> u32 {
        let b = self.units[j].staffing_bounds;
        match self.resource_cap {
            None => b.upper,
            Some(cap) => {
                let others = self.lower_total() - b.lower as u64;
                let room = (cap as u64).saturating_sub(others);
                b.upper.min(room.min(u32::MAX as u64) as u32).max(b.lower)
            }
        }
    }

    pub fn effective_pool_upper(&self, i: usize) -> u32 {
        let b = self.pools[i].staffing_bounds;
        match self.resource_cap {
            None => b.upper,
            Some(cap) => {
                let others = self.lower_total() - b.lower as u64;
                let room = (cap as u64).saturating_sub(others);
                b.upper.min(room.min(u32::MAX as u64) as u32).max(b.lower)
            }
        }
    }

    fn lower_total(&self) -> u64 {
        self.units.iter().map(|u| u.staffing_bounds.lower as u64).sum::<u64>()
            + self.pools.iter().map(|p| p.staffing_bounds.lower as u64).sum::<u64>()
    }

    pub fn first_stage_cost(&self, staffing: &Staffing) -> f64 {
        let (w, y) = (&staffing.w, &staffing.y);
        self.costs.c_w * w.iter().map(|&v| v as f64).sum::<f64>()
            + self.costs.c_y * y.iter().map(|&v| v as f64).sum::<f64>()
    }

    /// Pools containing unit `j`.
    pub fn pools_of(&self, j: usize) -> Vec<usize> {
        self.pools
            .iter()
            .enumerate()
            .filter(|(_, p)| p.members.contains(&j))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with every pool dropped.
    pub fn without_pools(&self) -> Instance {
        let mut out = self.clone();
        out.pools.clear();
        out
    }

    /// Copy whose pools are replaced by one pool over all units, taking its
    /// bounds and attendance from `template`.
    pub fn with_single_pool(&self, template: &PoolSpec) -> Instance {
        let mut out = self.clone();
        out.pools = vec![PoolSpec {
            members: (0..self.num_units()).collect(),
            staffing_bounds: template.staffing_bounds,
            attendance: template.attendance.clone(),
        }];
        out
    }

    /// Copy in which every scheduled nurse is assumed to show up.
    pub fn absenteeism_blind(&self) -> Instance {
        let mut out = self.clone();
        for u in &mut out.units {
            u.attendance = AttendanceFunction::identity(u.staffing_bounds);
        }
        for p in &mut out.pools {
            p.attendance = AttendanceFunction::identity(p.staffing_bounds);
        }
        out
    }

    pub fn is_staffing_feasible(&self, staffing: &Staffing) -> bool {
        let (w, y) = (&staffing.w, &staffing.y);
        w.len() == self.num_units()
            && y.len() == self.num_pools()
            && w.iter().zip(&self.units).all(|(&v, u)| u.staffing_bounds.contains(v))
            && y.iter().zip(&self.pools).all(|(&v, p)| p.staffing_bounds.contains(v))
            && self.resource_cap.is_none_or(|cap| {
                w.iter().map(|&v| v as u64).sum::<u64>() + y.iter().map(|&v| v as u64).sum::<u64>()
                    <= cap as u64
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolStructureKind {
    NoPool,
    OnePool,
    Disjoint,
    Chained,
    Arbitrary,
}

impl fmt::Display for PoolStructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PoolStructureKind::NoPool => "no-pool",
            PoolStructureKind::OnePool => "one-pool",
            PoolStructureKind::Disjoint => "disjoint",
            PoolStructureKind::Chained => "chained",
            PoolStructureKind::Arbitrary => "arbitrary",
        };
        f.write_str(s)
    }
}

impl FromStr for PoolStructureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "no-pool" | "nopool" | "none" | "0" => Ok(PoolStructureKind::NoPool),
            "one-pool" | "onepool" | "1" => Ok(PoolStructureKind::OnePool),
            "disjoint" | "d" => Ok(PoolStructureKind::Disjoint),
            "chained" | "chain" | "c" => Ok(PoolStructureKind::Chained),
            "arbitrary" => Ok(PoolStructureKind::Arbitrary),
            other => Err(format!("unknown pool structure '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Separation,
    Monolithic,
}

/// First-stage decision: nurses scheduled per unit and per pool.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Staffing {
    pub w: Vec<u32>,
    pub y: Vec<u32>,
}

impl Staffing {
    pub fn new(w: Vec<u32>, y: Vec<u32>) -> Self {
        Staffing { w, y }
    }

    /// Everyone at their lower bound.
    pub fn lower(instance: &Instance) -> Self {
        Staffing {
            w: instance.units.iter().map(|u| u.staffing_bounds.lower).collect(),
            y: instance.pools.iter().map(|p| p.staffing_bounds.lower).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaffingSolution {
    pub w: Vec<u32>,
    pub y: Vec<u32>,
    pub dr_cost: f64,
    pub first_stage_cost: f64,
    pub worst_case_expectation: f64,
    pub method: SolveMethod,
    pub structure: PoolStructureKind,
    pub cuts_used: usize,
    pub wall_time: f64,
}

impl StaffingSolution {
    pub fn staffing(&self) -> Staffing {
        Staffing { w: self.w.clone(), y: self.y.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn check_attendance(out: &mut Vec<Violation>, path: &str, att: &AttendanceFunction, range: Bounds) {
    if att.base_level != range.lower || att.values.len() != range.width() + 1 {
        out.push(Violation {
            path: format!("{path}.attendance"),
            message: format!(
                "AttendanceFunction must tabulate levels {}..={} (has base {} with {} values)",
                range.lower,
                range.upper,
                att.base_level,
                att.values.len()
            ),
        });
        return;
    }
    for (k, &v) in att.values.iter().enumerate() {
        let level = att.base_level as f64 + k as f64;
        if !v.is_finite() || v < 0.0 || v > level {
            out.push(Violation {
                path: format!("{path}.attendance.values[{k}]"),
                message: format!("AttendanceFunction value {v} outside [0, {level}]"),
            });
        }
    }
}

/// Every invariant violation, sorted by field path.
pub fn validate(instance: &Instance) -> Vec<Violation> {
    let mut out = Vec::new();
    let c = &instance.costs;
    for (name, v) in [("c_w", c.c_w), ("c_y", c.c_y), ("c_x", c.c_x), ("c_e", c.c_e)] {
        if !v.is_finite() || v < 0.0 {
            out.push(Violation {
                path: format!("costs.{name}"),
                message: format!("CostParams entry must be finite and nonnegative, got {v}"),
            });
        }
    }
    if !(c.c_e < c.c_x) {
        out.push(Violation {
            path: "costs.c_e".into(),
            message: format!("CostParams requires c_e < c_x (c_e = {}, c_x = {})", c.c_e, c.c_x),
        });
    }
    if instance.units.is_empty() {
        out.push(Violation { path: "units".into(), message: "at least one unit is required".into() });
    }
    let q = instance.num_moments();
    for (j, u) in instance.units.iter().enumerate() {
        let path = format!("units[{j}]");
        if u.moments.is_empty() {
            out.push(Violation { path: format!("{path}.moments"), message: "UnitSpec needs Q >= 1 moments".into() });
        } else if u.moments.len() != q {
            out.push(Violation {
                path: format!("{path}.moments"),
                message: format!("all units must share the same Q (expected {q}, got {})", u.moments.len()),
            });
        }
        if u.moments.iter().any(|m| !m.is_finite()) {
            out.push(Violation { path: format!("{path}.moments"), message: "moments must be finite".into() });
        }
        if u.demand_bounds.lower > u.demand_bounds.upper {
            out.push(Violation { path: format!("{path}.demand_bounds"), message: "UnitSpec requires d_L <= d_U".into() });
        }
        if u.staffing_bounds.lower > u.staffing_bounds.upper {
            out.push(Violation { path: format!("{path}.staffing_bounds"), message: "UnitSpec requires w_L <= w_U".into() });
        } else {
            check_attendance(&mut out, &path, &u.attendance, u.staffing_bounds);
        }
    }
    let nu = instance.num_units();
    for (i, p) in instance.pools.iter().enumerate() {
        let path = format!("pools[{i}]");
        if p.members.is_empty() {
            out.push(Violation { path: format!("{path}.members"), message: "PoolSpec.members must be nonempty".into() });
        }
        if p.members.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Violation {
                path: format!("{path}.members"),
                message: "PoolSpec.members must be strictly increasing".into(),
            });
        }
        if let Some(&bad) = p.members.iter().find(|&&m| m >= nu) {
            out.push(Violation {
                path: format!("{path}.members"),
                message: format!("PoolSpec.members index {bad} out of range (J = {nu})"),
            });
        }
        if p.staffing_bounds.lower > p.staffing_bounds.upper {
            out.push(Violation { path: format!("{path}.staffing_bounds"), message: "PoolSpec requires y_L <= y_U".into() });
        } else {
            check_attendance(&mut out, &path, &p.attendance, p.staffing_bounds);
        }
    }
    if let Some(cap) = instance.resource_cap {
        let lows = instance.lower_total();
        if lows > cap as u64 {
            out.push(Violation {
                path: "resource_cap".into(),
                message: format!("sum of lower staffing bounds {lows} exceeds resource cap {cap}"),
            });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path).then_with(|| a.message.cmp(&b.message)));
    out
}

/// Recognise the special pool structures that admit dedicated solvers.
pub fn classify_structure(instance: &Instance) -> PoolStructureKind {
    let j = instance.num_units();
    let pools = &instance.pools;
    if pools.is_empty() || pools.iter().all(|p| p.staffing_bounds.upper == 0) {
        return PoolStructureKind::NoPool;
    }
    if pools.len() == 1 && pools[0].members.len() == j && pools[0].members.iter().enumerate().all(|(k, &m)| k == m) {
        return PoolStructureKind::OnePool;
    }
    if j >= 3 && pools.len() == j {
        let chained = pools.iter().enumerate().all(|(i, p)| {
            let mut pair = vec![i, (i + 1) % j];
            pair.sort_unstable();
            p.members == pair
        });
        if chained {
            return PoolStructureKind::Chained;
        }
    }
    let mut seen = vec![false; j];
    let mut disjoint = true;
    'outer: for p in pools {
        for &m in &p.members {
            if m < j {
                if seen[m] {
                    disjoint = false;
                    break 'outer;
                }
                seen[m] = true;
            }
        }
    }
    if disjoint {
        PoolStructureKind::Disjoint
    } else {
        PoolStructureKind::Arbitrary
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    version: u32,
    label: String,
    costs: CostParams,
    resource_cap: Option<u32>,
    units: Vec<UnitSpec>,
    pools: Vec<PoolSpec>,
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    version: u32,
    #[serde(flatten)]
    solution: StaffingSolution,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

/// Checks the `version` key before a full parse so an old or new file gets a
/// clear message instead of a missing-field error.
pub(crate) fn check_version(text: &str) -> Result<()> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match probe.version {
        Some(FILE_VERSION) => Ok(()),
        Some(found) => Err(Error::Version { found, expected: FILE_VERSION }),
        None => Err(Error::Parse("missing top-level field `version`".into())),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn instance_from_str(text: &str) -> Result<Instance> {
    check_version(text)?;
    let f: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(Instance {
        units: f.units,
        pools: f.pools,
        costs: f.costs,
        resource_cap: f.resource_cap,
        label: f.label,
    })
}

pub fn instance_to_string(instance: &Instance) -> String {
    let f = InstanceFile {
        version: FILE_VERSION,
        label: instance.label.clone(),
        costs: instance.costs,
        resource_cap: instance.resource_cap,
        units: instance.units.clone(),
        pools: instance.pools.clone(),
    };
    serde_json::to_string_pretty(&f).expect("instance serialises")
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    instance_from_str(&read_text(path)?).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &instance_to_string(instance))
}

pub fn solution_from_str(text: &str) -> Result<StaffingSolution> {
    check_version(text)?;
    let f: SolutionFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(f.solution)
}

pub fn solution_to_string(solution: &StaffingSolution) -> String {
    serde_json::to_string_pretty(&SolutionFile { version: FILE_VERSION, solution: solution.clone() })
        .expect("solution serialises")
}

pub fn read_solution(path: impl AsRef<Path>) -> Result<StaffingSolution> {
    solution_from_str(&read_text(path.as_ref())?)
}

pub fn write_solution(solution: &StaffingSolution, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &solution_to_string(solution))
}

/// Integer demand box of mean `mu` and standard deviation `sd`:
/// three standard deviations either side, widened upward when the box is too
/// narrow to carry the variance.
pub fn demand_box(mu: f64, sd: f64) -> Bounds {
    let lo = (mu - 3.0 * sd).floor().max(0.0);
    let mut hi = (mu + 3.0 * sd).ceil();
    if sd > 0.0 && mu > lo {
        // The largest variance of a distribution on [lo, hi] with mean mu is
        // (mu - lo)(hi - mu).
        hi = hi.max((mu + sd * sd / (mu - lo)).ceil());
    }
    Bounds::new(lo as u32, hi.max(lo) as u32)
}

/// Sampling ranges for the random instance generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub mean_range: (f64, f64),
    pub sd_range: (f64, f64),
    pub unit_attendance_range: (f64, f64),
    pub pool_attendance_range: (f64, f64),
    pub unit_upper: u32,
    pub pool_upper: u32,
    pub safety: (f64, f64),
    pub costs: CostParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mean_range: (5.0, 20.0),
            sd_range: (0.0, 20.0),
            unit_attendance_range: (0.60, 0.98),
            pool_attendance_range: (0.98, 1.00),
            unit_upper: 200,
            pool_upper: 200,
            safety: (0.1, 1.5),
            costs: CostParams { c_w: 100.0, c_y: 130.0, c_x: 400.0, c_e: 50.0 },
        }
    }
}

/// Per-unit draws, kept so callers can mix several recipes in one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitDraw {
    pub mean: f64,
    pub sd: f64,
    pub attendance: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn min_integer_variance(mu: f64) -> f64 {
    let frac = mu - mu.floor();
    frac * (1.0 - frac)
}

impl GeneratorConfig {
    pub fn draw_unit(&self, rng: &mut ChaCha8Rng) -> UnitDraw {
        let mean = uniform(rng, self.mean_range);
        // An integer-valued demand with a fractional mean cannot have
        // arbitrarily small variance; redraw such standard deviations.
        let mut sd = uniform(rng, self.sd_range);
        let mut tries = 0;
        while sd * sd < min_integer_variance(mean) + 1e-6 && tries < 1000 {
            sd = uniform(rng, self.sd_range);
            tries += 1;
        }
        if sd * sd < min_integer_variance(mean) + 1e-6 {
            sd = (min_integer_variance(mean) + 1e-6).sqrt();
        }
        let attendance = uniform(rng, self.unit_attendance_range);
        UnitDraw { mean, sd, attendance }
    }

    /// Build an instance from explicit per-unit draws, pool rates and
    /// memberships.
    pub fn assemble(&self, draws: &[UnitDraw], pool_rates: &[f64], members: Vec<Vec<usize>>, label: String) -> Instance {
        let (s_low, s_high) = self.safety;
        let units: Vec<UnitSpec> = draws
            .iter()
            .map(|d| {
                let w_l = (s_low * d.attendance * d.mean).floor() as u32;
                let range = Bounds::new(w_l, self.unit_upper.max(w_l));
                UnitSpec {
                    moments: vec![d.mean, d.mean * d.mean + d.sd * d.sd],
                    demand_bounds: demand_box(d.mean, d.sd),
                    staffing_bounds: range,
                    attendance: AttendanceFunction::linear(d.attendance, range),
                }
            })
            .collect();
        let pools: Vec<PoolSpec> = members
            .into_iter()
            .zip(pool_rates)
            .map(|(m, &rate)| {
                let range = Bounds::new(0, self.pool_upper);
                PoolSpec { members: m, staffing_bounds: range, attendance: AttendanceFunction::linear(rate, range) }
            })
            .collect();
        let rate_sum: f64 = draws.iter().map(|d| d.attendance).sum::<f64>() + pool_rates.iter().sum::<f64>();
        let avg_rate = rate_sum / (draws.len() + pool_rates.len()) as f64;
        let cap = (s_high * draws.iter().map(|d| avg_rate * d.mean).sum::<f64>()).ceil() as u32;
        let lows: u32 = units.iter().map(|u| u.staffing_bounds.lower).sum();
        Instance { units, pools, costs: self.costs, resource_cap: Some(cap.max(lows)), label }
    }

    pub fn generate(&self, seed: u64, j: usize, i: usize, structure: PoolStructureKind) -> Result<Instance> {
        let members = pool_layout(seed, j, i, structure)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<UnitDraw> = (0..j).map(|_| self.draw_unit(&mut rng)).collect();
        let rates: Vec<f64> = (0..i).map(|_| uniform(&mut rng, self.pool_attendance_range)).collect();
        let label = format!("generated seed={seed} J={j} I={i} structure={structure}");
        let inst = self.assemble(&draws, &rates, members, label);
        debug_assert_eq!(classify_structure(&inst), structure);
        Ok(inst)
    }
}

fn pool_layout(seed: u64, j: usize, i: usize, structure: PoolStructureKind) -> Result<Vec<Vec<usize>>> {
    let bad = |why: &str| Err(Error::Generator(format!("{structure} with J={j}, I={i}: {why}")));
    if j == 0 {
        return bad("need at least one unit");
    }
    match structure {
        PoolStructureKind::NoPool => {
            if i != 0 {
                return bad("a no-pool instance has I = 0");
            }
            Ok(vec![])
        }
        PoolStructureKind::OnePool => {
            if i != 1 {
                return bad("a one-pool instance has I = 1");
            }
            Ok(vec![(0..j).collect()])
        }
        PoolStructureKind::Disjoint => {
            if i < 2 || i > j {
                return bad("need 2 <= I <= J");
            }
            // Contiguous blocks whose sizes differ by at most one.
            let mut out = Vec::with_capacity(i);
            let mut start = 0;
            for b in 0..i {
                let size = j / i + usize::from(b < j % i);
                out.push((start..start + size).collect());
                start += size;
            }
            Ok(out)
        }
        PoolStructureKind::Chained => {
            if j < 3 || i != j {
                return bad("need I = J >= 3");
            }
            Ok((0..j)
                .map(|k| {
                    let mut p = vec![k, (k + 1) % j];
                    p.sort_unstable();
                    p
                })
                .collect())
        }
        PoolStructureKind::Arbitrary => {
            if i < 2 || j < 3 {
                return bad("need I >= 2 and J >= 3");
            }
            // Separate stream so memberships do not shift the unit draws.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            for _ in 0..10_000 {
                let pools: Vec<Vec<usize>> = (0..i)
                    .map(|_| {
                        let size = rng.random_range(2..=j);
                        let mut all: Vec<usize> = (0..j).collect();
                        for k in 0..size {
                            let pick = rng.random_range(k..j);
                            all.swap(k, pick);
                        }
                        let mut p = all[..size].to_vec();
                        p.sort_unstable();
                        p
                    })
                    .collect();
                let probe = Instance {
                    units: vec![
                        UnitSpec {
                            moments: vec![0.0],
                            demand_bounds: Bounds::new(0, 0),
                            staffing_bounds: Bounds::new(0, 0),
                            attendance: AttendanceFunction { base_level: 0, values: vec![0.0] },
                        };
                        j
                    ],
                    pools: pools
                        .iter()
                        .map(|m| PoolSpec {
                            members: m.clone(),
                            staffing_bounds: Bounds::new(0, 1),
                            attendance: AttendanceFunction::identity(Bounds::new(0, 1)),
                        })
                        .collect(),
                    costs: CostParams { c_w: 0.0, c_y: 0.0, c_x: 1.0, c_e: 0.0 },
                    resource_cap: None,
                    label: String::new(),
                };
                if classify_structure(&probe) == PoolStructureKind::Arbitrary {
                    return Ok(pools);
                }
            }
            bad("could not draw overlapping pools")
        }
    }
}

/// Random instance with the default sampling ranges and the given safety
/// factors `(S_low, S_high)`.
pub fn generate_instance(
    seed: u64,
    j: usize,
    i: usize,
    structure: PoolStructureKind,
    safety: (f64, f64),
) -> Result<Instance> {
    GeneratorConfig { safety, ..GeneratorConfig::default() }.generate(seed, j, i, structure)
}

/// Seven units sharing one pool, with the published means, standard
/// deviations and attendance rates.
pub fn representative_instance() -> Instance {
    const DATA: [(f64, f64, f64); 7] = [
        (11.42, 5.05, 0.97),
        (6.34, 4.03, 0.98),
        (17.73, 6.44, 0.98),
        (19.15, 17.06, 0.61),
        (19.69, 16.39, 0.75),
        (15.67, 16.52, 0.67),
        (14.84, 15.92, 0.67),
    ];
    let config = GeneratorConfig {
        costs: CostParams { c_w: 100.0, c_y: 130.0, c_x: 400.0, c_e: 50.0 },
        ..GeneratorConfig::default()
    };
    let draws: Vec<UnitDraw> = DATA.iter().map(|&(mean, sd, attendance)| UnitDraw { mean, sd, attendance }).collect();
    config.assemble(&draws, &[0.99], vec![(0..7).collect()], "representative 7-unit, one pool".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Instance {
        let range = Bounds::new(0, 3);
        Instance {
            units: vec![
                UnitSpec {
                    moments: vec![2.0, 5.0],
                    demand_bounds: Bounds::new(0, 5),
                    staffing_bounds: range,
                    attendance: AttendanceFunction::linear(0.9, range),
                };
                4
            ],
            pools: vec![],
            costs: CostParams { c_w: 1.0, c_y: 1.2, c_x: 4.0, c_e: 0.5 },
            resource_cap: None,
            label: "tiny".into(),
        }
    }

    fn with_pools(mut inst: Instance, pools: &[&[usize]]) -> Instance {
        let range = Bounds::new(0, 2);
        inst.pools = pools
            .iter()
            .map(|m| PoolSpec { members: m.to_vec(), staffing_bounds: range, attendance: AttendanceFunction::linear(1.0, range) })
            .collect();
        inst
    }

    #[test]
    fn representative_instance_is_valid() {
        let inst = representative_instance();
        assert_eq!(validate(&inst), vec![]);
        assert_eq!(classify_structure(&inst), PoolStructureKind::OnePool);
        assert_eq!(inst.units[0].moments[0], 11.42);
        assert!((inst.units[0].std_dev() - 5.05).abs() < 1e-12);
        assert_eq!(inst.units[0].attendance.linear_rate(), Some(0.97));
    }

    #[test]
    fn equal_excess_and_temporary_cost_is_rejected() {
        let mut inst = tiny();
        inst.costs.c_e = inst.costs.c_x;
        let v = validate(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].path.starts_with("costs") && v[0].message.contains("CostParams"));
    }

    #[test]
    fn out_of_range_member_is_rejected() {
        let inst = with_pools(tiny(), &[&[0, 4]]);
        let v = validate(&inst);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].path, "pools[0].members");
        assert!(v[0].message.contains("PoolSpec.members"));
    }

    #[test]
    fn attendance_above_level_is_rejected() {
        let mut inst = tiny();
        inst.units[1].attendance.values[2] = 2.5;
        let v = validate(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "units[1].attendance.values[2]");
    }

    #[test]
    fn lower_bounds_above_cap_are_rejected() {
        let mut inst = tiny();
        for u in &mut inst.units {
            u.staffing_bounds.lower = 2;
            u.attendance = AttendanceFunction::linear(0.9, u.staffing_bounds);
        }
        inst.resource_cap = Some(7);
        let v = validate(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "resource_cap");
    }

    #[test]
    fn violations_are_sorted_by_path() {
        let mut inst = with_pools(tiny(), &[&[2, 1]]);
        inst.costs.c_w = -1.0;
        inst.units[3].demand_bounds = Bounds::new(5, 1);
        let v = validate(&inst);
        let paths: Vec<_> = v.iter().map(|x| x.path.clone()).collect();
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_structure(&tiny()), PoolStructureKind::NoPool);
        assert_eq!(classify_structure(&with_pools(tiny(), &[&[0, 1, 2, 3]])), PoolStructureKind::OnePool);
        assert_eq!(classify_structure(&with_pools(tiny(), &[&[0, 1], &[2, 3]])), PoolStructureKind::Disjoint);
        assert_eq!(classify_structure(&with_pools(tiny(), &[&[0, 1], &[1, 2]])), PoolStructureKind::Arbitrary);
        let mut three = tiny();
        three.units.truncate(3);
        assert_eq!(classify_structure(&with_pools(three, &[&[0, 1], &[1, 2], &[0, 2]])), PoolStructureKind::Chained);
        // A single pool that misses a unit is disjoint, not one-pool.
        assert_eq!(classify_structure(&with_pools(tiny(), &[&[0, 1, 2]])), PoolStructureKind::Disjoint);
        let mut zero = with_pools(tiny(), &[&[0, 1], &[1, 2]]);
        for p in &mut zero.pools {
            p.staffing_bounds = Bounds::new(0, 0);
            p.attendance = AttendanceFunction::identity(p.staffing_bounds);
        }
        assert_eq!(classify_structure(&zero), PoolStructureKind::NoPool);
    }

    #[test]
    fn generator_examples() {
        let inst = generate_instance(1, 5, 1, PoolStructureKind::OnePool, (0.1, 1.5)).unwrap();
        assert_eq!(validate(&inst), vec![]);
        assert_eq!(classify_structure(&inst), PoolStructureKind::OnePool);
        for u in &inst.units {
            assert_eq!(u.staffing_bounds.upper, 200);
            assert!((5.0..20.0).contains(&u.mean()));
            let rate = u.attendance.linear_rate().unwrap();
            assert!((0.60..0.98).contains(&rate));
            assert_eq!(u.staffing_bounds.lower, (0.1 * rate * u.mean()).floor() as u32);
        }
        assert_eq!(inst.pools[0].staffing_bounds, Bounds::new(0, 200));
        assert_eq!(inst, generate_instance(1, 5, 1, PoolStructureKind::OnePool, (0.1, 1.5)).unwrap());

        let chain = generate_instance(2, 4, 4, PoolStructureKind::Chained, (0.1, 1.5)).unwrap();
        let members: Vec<_> = chain.pools.iter().map(|p| p.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![0, 3]]);
        assert_eq!(classify_structure(&chain), PoolStructureKind::Chained);

        assert!(generate_instance(3, 4, 2, PoolStructureKind::Chained, (0.1, 1.5)).is_err());
        assert!(generate_instance(3, 4, 2, PoolStructureKind::OnePool, (0.1, 1.5)).is_err());
    }

    #[test]
    fn resource_cap_matches_formula() {
        let inst = generate_instance(11, 6, 2, PoolStructureKind::Disjoint, (0.2, 1.3)).unwrap();
        let rates: Vec<f64> = inst
            .units
            .iter()
            .map(|u| u.attendance.linear_rate().unwrap())
            .chain(inst.pools.iter().map(|p| p.attendance.linear_rate().unwrap()))
            .collect();
        let avg = rates.iter().sum::<f64>() / rates.len() as f64;
        let expected = (1.3 * inst.units.iter().map(|u| avg * u.mean()).sum::<f64>()).ceil() as u32;
        assert_eq!(inst.resource_cap, Some(expected));
    }

    #[test]
    fn demand_box_is_three_sigma_when_wide_enough() {
        assert_eq!(demand_box(20.0, 2.0), Bounds::new(14, 26));
        assert_eq!(demand_box(10.0, 0.0), Bounds::new(10, 10));
        // Mean 5 with sd 20: the plain box [0, 65] cannot hold variance 400.
        let b = demand_box(5.0, 20.0);
        assert_eq!(b.lower, 0);
        assert!(5.0 * (b.upper as f64 - 5.0) >= 400.0);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let inst = generate_instance(7, 4, 2, PoolStructureKind::Disjoint, (0.1, 1.5)).unwrap();
        let text = instance_to_string(&inst);
        assert_eq!(instance_from_str(&text).unwrap(), inst);
        assert!(matches!(instance_from_str(""), Err(Error::Parse(_))));
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(instance_from_str(&bumped), Err(Error::Version { found: 2, .. })));
        let broken = text.replacen("\"c_x\"", "\"c_z\"", 1);
        match instance_from_str(&broken) {
            Err(Error::Parse(msg)) => assert!(msg.contains("c_x") && msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn attendance_helpers() {
        let f = AttendanceFunction::linear(0.8, Bounds::new(2, 5));
        assert_eq!(f.top_level(), 5);
        assert!((f.value(4) - 3.2).abs() < 1e-12);
        assert!((f.increment(2) - 0.8).abs() < 1e-12);
        assert_eq!(f.get(6), None);
        let g = AttendanceFunction { base_level: 1, values: vec![1.0, 1.5, 3.0] };
        assert_eq!(g.linear_rate(), None);
    }
}
