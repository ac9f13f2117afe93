use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use drns::ambiguity::{check_feasibility, verify_assumption, DEFAULT_TOL};
use drns::backend::SolveParams;
use drns::drns::{solve_monolithic, solve_separation, SeparationParams};
use drns::evaluate::{absenteeism_experiment, out_of_sample, sample_scenarios, write_batch, write_report};
use drns::model::{
    classify_structure, generate_instance, instance_to_string, read_instance, read_solution, solution_to_string, validate, Instance,
    PoolStructureKind, Staffing, StaffingSolution,
};
use drns::pool_design::{design_to_string, frontier, solve_opd, OpdOptions};
use drns::Error;

#[derive(Parser)]
#[command(name = "drns", version, about = "Distributionally robust nurse staffing and pool design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute worst-case optimal staffing for an instance.
    Solve(SolveArgs),
    /// Choose a pool design with the fewest cross-trained unit pairs under a cost target.
    Design(DesignArgs),
    /// Out-of-sample Monte Carlo evaluation of a staffing decision.
    Simulate(SimulateArgs),
    /// Write a random instance.
    Generate(GenerateArgs),
    /// Validate an instance and its moment conditions.
    Check(CheckArgs),
    /// Pairs against cost target, from the one-pool optimum to the no-pool optimum.
    Frontier(FrontierArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Auto,
    Separation,
    Milp,
}

#[derive(Args)]
struct SolverFlags {
    /// Relative and absolute MIP gap.
    #[arg(long, default_value_t = 1e-9)]
    mip_gap: f64,
    /// Seconds per solve.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Moment-feasibility tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    feasibility_tol: f64,
}

impl SolverFlags {
    fn params(&self) -> SolveParams {
        SolveParams { time_limit: self.time_limit, mip_gap: self.mip_gap, ..SolveParams::default() }
    }

    fn echo(&self) {
        info!("mip_gap={:e} feasibility_tol={:e} time_limit={:?}", self.mip_gap, self.feasibility_tol, self.time_limit);
    }
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    method: Method,
    /// Expected pool structure (no-pool, one-pool, disjoint, chained, arbitrary) or auto.
    #[arg(long, default_value = "auto")]
    structure: String,
    /// Separation tolerance.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[command(flatten)]
    solver: SolverFlags,
    /// Solution file; standard output when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Iteration log of the separation method.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    instance: PathBuf,
    /// Worst-case cost the design must reach.
    #[arg(long)]
    target: f64,
    /// Candidate pools; defaults to half the number of units.
    #[arg(long)]
    pools: Option<usize>,
    #[arg(long)]
    big_m: Option<f64>,
    /// Drop the symmetry-breaking rows.
    #[arg(long)]
    no_symmetry: bool,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    instance: PathBuf,
    /// Staffing to evaluate; solved from the instance when absent.
    #[arg(long, conflicts_with = "blind")]
    solution: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate the staffing solved as if every scheduled nurse shows up.
    #[arg(long)]
    blind: bool,
    /// Report both the absenteeism-aware and the blind staffing on common scenarios.
    #[arg(long, conflicts_with_all = ["solution", "blind"])]
    compare: bool,
    /// Solve recourse problems as LPs instead of flows.
    #[arg(long)]
    lp: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Report file; standard output when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the sampled scenarios.
    #[arg(long)]
    batch_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    units: usize,
    #[arg(long, default_value_t = 1)]
    pools: usize,
    /// no-pool, one-pool, disjoint, chained or arbitrary.
    #[arg(long, default_value = "one-pool")]
    structure: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Safety factor for the unit staffing lower bounds.
    #[arg(long, default_value_t = 0.1)]
    s_low: f64,
    /// Safety factor for the total staffing cap.
    #[arg(long, default_value_t = 1.5)]
    s_high: f64,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    instance: PathBuf,
    /// Also check the moment conditions at this solution's staffing.
    #[arg(long)]
    solution: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct FrontierArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 6)]
    points: usize,
    #[arg(long)]
    pools: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Failures the user can fix; anything else exits with 1.
fn is_user_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Io { .. }
            | Error::Parse(_)
            | Error::Version { .. }
            | Error::Invalid(_)
            | Error::StructureMismatch { .. }
            | Error::Generator(_)
            | Error::TooLarge(_)
            | Error::AmbiguityEmpty(_)
            | Error::Infeasible(_)
    )
}

/// Exit status 2 for a failed check without a library error.
struct CheckFailed;

impl std::fmt::Debug for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<CheckFailed>().is_some() {
                2
            } else if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
                if is_user_error(err) {
                    2
                } else {
                    1
                }
            } else {
                1
            };
            if e.downcast_ref::<CheckFailed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Design(a) => cmd_design(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Check(a) => cmd_check(a),
        Command::Frontier(a) => cmd_frontier(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => Ok(other?),
            }
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Instance> {
    Ok(read_instance(path)?)
}

fn parse_structure(s: &str) -> anyhow::Result<Option<PoolStructureKind>> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match s.parse() {
        Ok(k) => Ok(Some(k)),
        Err(msg) => Err(Error::Invalid(msg).into()),
    }
}

fn thread_pool(jobs: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn solve_instance(inst: &Instance, method: Method, structure: Option<PoolStructureKind>, sep: &SeparationParams, log_path: Option<&Path>) -> anyhow::Result<StaffingSolution> {
    let found = classify_structure(inst);
    if let Some(expected) = structure {
        if expected != found {
            return Err(Error::StructureMismatch { expected, found }.into());
        }
    }
    let use_milp = match method {
        Method::Milp => true,
        Method::Separation => false,
        Method::Auto => found != PoolStructureKind::Arbitrary,
    };
    if use_milp {
        info!("method=milp structure={found}");
        return Ok(solve_monolithic(inst, found, &sep.backend)?);
    }
    info!("method=separation structure={found} eps={:e} max_iter={}", sep.eps, sep.max_iter);
    let res = solve_separation(inst, sep)?;
    let mut lines = String::new();
    for r in &res.log {
        lines.push_str(&format!("{r}\n"));
    }
    if let Some(p) = log_path {
        fs::write(p, lines).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(res.solution)
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<()> {
    let inst = load(&a.instance)?;
    a.solver.echo();
    let sep = SeparationParams {
        eps: a.eps,
        max_iter: a.max_iter,
        time_limit: None,
        backend: a.solver.params(),
        feasibility_tol: a.solver.feasibility_tol,
    };
    let sol = solve_instance(&inst, a.method, parse_structure(&a.structure)?, &sep, a.log.as_deref())?;
    info!("dr_cost={:.6} first_stage_cost={:.6} wall_time={:.3}s", sol.dr_cost, sol.first_stage_cost, sol.wall_time);
    emit(a.out.as_deref(), &solution_to_string(&sol))
}

fn cmd_design(a: DesignArgs) -> anyhow::Result<()> {
    let inst = load(&a.instance)?;
    a.solver.echo();
    let opts = OpdOptions {
        num_pools: a.pools,
        big_m: a.big_m,
        symmetry_breaking: !a.no_symmetry,
        pool_template: None,
        backend: a.solver.params(),
    };
    let d = solve_opd(&inst, a.target, &opts)?;
    info!("target={} big_m={} pairs={} achieved_dr_cost={:.6}", d.target, d.big_m, d.cross_training_pairs, d.achieved_dr_cost);
    emit(a.out.as_deref(), &design_to_string(&d))
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let inst = load(&a.instance)?;
    a.solver.echo();
    info!("samples={} seed={} recourse={}", a.samples, a.seed, if a.lp { "lp" } else { "flow" });
    let pool = thread_pool(a.jobs)?;
    let params = a.solver.params();
    if a.compare {
        let cmp = pool.install(|| absenteeism_experiment(&inst, a.samples, a.seed, &params))?;
        info!("z_abs={:.4} z_wo={:.4} x_abs={:.4} x_wo={:.4}", cmp.z_abs, cmp.z_wo, cmp.x_abs, cmp.x_wo);
        return emit(a.out.as_deref(), &serde_json::to_string_pretty(&cmp)?);
    }
    let staffing: Staffing = match &a.solution {
        Some(p) => read_solution(p)?.staffing(),
        None => {
            let target = if a.blind { inst.absenteeism_blind() } else { inst.clone() };
            solve_monolithic(&target, classify_structure(&target), &params)?.staffing()
        }
    };
    let batch = pool.install(|| sample_scenarios(&inst, &staffing, a.samples, a.seed))?;
    if let Some(p) = &a.batch_out {
        write_batch(&batch, p)?;
    }
    let report = pool.install(|| out_of_sample(&inst, &batch, a.lp))?;
    info!(
        "avg_cost={:.4} +/- {:.4} avg_temporaries={:.4} +/- {:.4}",
        report.avg_cost, report.cost_half_width, report.avg_temporaries, report.temporaries_half_width
    );
    match &a.out {
        Some(p) => Ok(write_report(&report, p)?),
        None => emit(None, &serde_json::to_string_pretty(&report)?),
    }
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<()> {
    let structure = parse_structure(&a.structure)?.context("generate needs an explicit --structure")?;
    let pools = if structure == PoolStructureKind::NoPool { 0 } else { a.pools };
    info!("seed={} units={} pools={} structure={structure} s_low={} s_high={}", a.seed, a.units, pools, a.s_low, a.s_high);
    let inst = generate_instance(a.seed, a.units, pools, structure, (a.s_low, a.s_high))?;
    emit(a.out.as_deref(), &instance_to_string(&inst))
}

fn cmd_check(a: CheckArgs) -> anyhow::Result<()> {
    let inst = load(&a.instance)?;
    info!("tol={:e}", a.tol);
    let violations = validate(&inst);
    for v in &violations {
        println!("invalid: {v}");
    }
    if !violations.is_empty() {
        bail!(CheckFailed);
    }
    println!("structure: {}", classify_structure(&inst));
    let mut ok = true;
    match verify_assumption(&inst, a.tol) {
        Ok(_) => println!("demand moments: attainable on every unit's support"),
        Err(e) => {
            println!("demand moments: {e}");
            ok = false;
        }
    }
    if let Some(p) = &a.solution {
        let st = read_solution(p)?.staffing();
        if !inst.is_staffing_feasible(&st) {
            println!("staffing: outside its bounds or the resource cap");
            ok = false;
        } else {
            let report = check_feasibility(&inst, &st, a.tol)?;
            for f in report.failures() {
                println!("staffing: {f}");
            }
            ok &= report.overall;
        }
    }
    if !ok {
        bail!(CheckFailed);
    }
    println!("ok");
    Ok(())
}

fn cmd_frontier(a: FrontierArgs) -> anyhow::Result<()> {
    let inst = load(&a.instance)?;
    a.solver.echo();
    let opts = OpdOptions { num_pools: a.pools, backend: a.solver.params(), ..OpdOptions::default() };
    let pts = thread_pool(a.jobs)?.install(|| frontier(&inst, a.points, &opts))?;
    for p in &pts {
        info!("target={:.4} pairs={} achieved_dr_cost={:.4}", p.target, p.pairs, p.achieved_dr_cost);
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&pts)?)
}
