//! Command-line front end: scenario reproductions, single-characteristic
//! bound checks and plain simulations of ensemble files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shellcollapse::dynamics::StepView;
use shellcollapse::io::{read_ensemble_csv, to_json_string, write_ensemble_csv, write_series_csv};
use shellcollapse::{
    check_lemma1, lemma1_quantities, plan_theorem1, plan_theorem2, run, run_scenario_with,
    Ensemble, Error, FieldCoupling, FieldModel, Integrator, Particle, SamplingGrid,
    ScenarioOptions, Setup, StepperConfig, Theorem1Setup, Theorem2Setup, TimeBound,
    TrajectorySample,
};

use config::{ConfigFile, Resolver};

/// Process exit codes.
mod code {
    pub const CHECKS_FAILED: u8 = 1;
    pub const PRECONDITION: u8 = 2;
    pub const INTEGRATION: u8 = 3;
    pub const USAGE: u8 = 64;
    pub const DATA: u8 = 65;
    pub const NO_INPUT: u8 = 66;
    pub const IO: u8 = 74;
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(code::USAGE, error)
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self::new(code::IO, error)
    }

    /// Setup-phase library errors: bad parameters and planner failures.
    fn setup(e: Error) -> Self {
        let code = match &e {
            Error::StepUnderflow { .. } => code::INTEGRATION,
            Error::Format(_) => code::DATA,
            Error::Io(_) => code::IO,
            _ => code::PRECONDITION,
        };
        Self::new(code, e)
    }

    /// Library errors raised while integrating.
    fn integration(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => code::IO,
            Error::EmptySample | Error::Plan { .. } => code::PRECONDITION,
            _ => code::INTEGRATION,
        };
        Self::new(code, e)
    }
}

type CmdResult = Result<u8, Failure>;

#[derive(Parser, Debug)]
#[command(
    name = "shellcollapse",
    version,
    about = "Shell concentration in the spherically symmetric relativistic Vlasov-Poisson system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and run one of the two concentration constructions.
    Scenario {
        #[command(subcommand)]
        which: Scenario,
    },
    /// Integrate one characteristic in a constant enclosed mass and check
    /// the five characteristic bounds.
    CheckBounds(CheckBoundsArgs),
    /// Run the self-consistent system from an ensemble file.
    Simulate(SimulateArgs),
}

#[derive(Subcommand, Debug)]
enum Scenario {
    /// Density above C2 from data with density and field at most C1.
    Theorem1(Theorem1Args),
    /// Field above C2 at time T from data of total mass exactly C1.
    Theorem2(Theorem2Args),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct Theorem1Args {
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    /// Use this ε instead of planning one.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct Theorem2Args {
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    /// Concentration time T.
    #[arg(long)]
    time: Option<f64>,
    /// Use this ε instead of planning one.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// `key=value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct StepperArgs {
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    dt_init: Option<f64>,
    #[arg(long)]
    dt_min: Option<f64>,
    #[arg(long)]
    dt_max: Option<f64>,
    #[arg(long)]
    safety: Option<f64>,
    /// Cap on dt as a fraction of min R/speed.
    #[arg(long)]
    close_approach: Option<f64>,
    #[arg(long)]
    origin_floor: Option<f64>,
    /// `averaged` (default) or `frozen` enclosed mass within a step.
    #[arg(long)]
    coupling: Option<FieldCoupling>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Radial cells of the sampling grid.
    #[arg(long)]
    nr: Option<usize>,
    /// Momentum cells per radial slab.
    #[arg(long)]
    nw: Option<usize>,
    /// Angular momentum cells per (r, w) column.
    #[arg(long)]
    nl: Option<usize>,
    #[command(flatten)]
    stepper: StepperArgs,
    #[arg(long)]
    lemma_slack: Option<f64>,
    #[arg(long)]
    mass_margin: Option<f64>,
    #[arg(long)]
    radius_slack: Option<f64>,
    #[arg(long)]
    energy_drift_tolerance: Option<f64>,
    #[arg(long)]
    monotonicity_tolerance: Option<f64>,
    /// Keep integrating to this time and fit the decay of the density.
    #[arg(long)]
    extend_to: Option<f64>,
    /// Include per-particle bound records in report.json.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct CheckBoundsArgs {
    #[arg(long)]
    r: f64,
    #[arg(long)]
    w: f64,
    /// Squared angular momentum ℓ.
    #[arg(long)]
    l: f64,
    /// Mass bound M entering the estimates.
    #[arg(long)]
    mass: f64,
    /// Constant enclosed mass seen by the particle, in [0, M].
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Relative slack of the checks.
    #[arg(long, default_value_t = 1e-8)]
    slack: f64,
    #[arg(long, default_value_t = 1e-12)]
    rel_tol: f64,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    /// Ensemble CSV with columns index,R,W,L,weight.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    t_end: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    stepper: StepperArgs,
}

fn resolve_stepper(res: &mut Resolver, a: &StepperArgs) -> anyhow::Result<StepperConfig> {
    let d = StepperConfig::default();
    let cfg = StepperConfig {
        rel_tol: res.or("rel_tol", a.rel_tol, d.rel_tol)?,
        abs_tol: res.or("abs_tol", a.abs_tol, d.abs_tol)?,
        dt_init: res.or("dt_init", a.dt_init, d.dt_init)?,
        dt_min: res.or("dt_min", a.dt_min, d.dt_min)?,
        dt_max: res.or("dt_max", a.dt_max, d.dt_max)?,
        safety: res.or("safety", a.safety, d.safety)?,
        close_approach: res.or("close_approach", a.close_approach, d.close_approach)?,
        origin_floor: res.or("origin_floor", a.origin_floor, d.origin_floor)?,
        coupling: res.or("coupling", a.coupling, d.coupling)?,
    };
    Ok(cfg)
}

fn resolve_options(res: &mut Resolver, a: &RunArgs) -> anyhow::Result<ScenarioOptions> {
    let d = ScenarioOptions::default();
    let grid = SamplingGrid {
        nr: res.or("nr", a.nr, d.grid.nr)?,
        nw: res.or("nw", a.nw, d.grid.nw)?,
        nl: res.or("nl", a.nl, d.grid.nl)?,
    };
    Ok(ScenarioOptions {
        grid,
        stepper: resolve_stepper(res, &a.stepper)?,
        lemma_slack: res.or("lemma_slack", a.lemma_slack, d.lemma_slack)?,
        mass_margin: res.or("mass_margin", a.mass_margin, d.mass_margin)?,
        radius_slack: res.or("radius_slack", a.radius_slack, d.radius_slack)?,
        energy_drift_tolerance: res.or(
            "energy_drift_tolerance",
            a.energy_drift_tolerance,
            d.energy_drift_tolerance,
        )?,
        monotonicity_tolerance: res.or(
            "monotonicity_tolerance",
            a.monotonicity_tolerance,
            d.monotonicity_tolerance,
        )?,
        extend_to: res.get("extend_to", a.extend_to)?,
        verbose: res.or("verbose", a.verbose.then_some(true), false)?,
    })
}

/// Output directory and thread count shared by the commands that write files.
struct Common {
    out: PathBuf,
    threads: usize,
}

fn resolve_common(res: &mut Resolver, a: &CommonArgs) -> anyhow::Result<Common> {
    Ok(Common {
        out: res.or("out", a.out.clone(), PathBuf::from("."))?,
        threads: res.or("threads", a.threads, 0)?,
    })
}

fn init_threads(threads: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::io(anyhow!("cannot start worker threads: {e}")))
}

fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::io)
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> shellcollapse::Result<()>,
) -> Result<(), Failure> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(Failure::io)?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|()| w.flush().map_err(Error::from))
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

fn cmd_scenario(which: Scenario) -> CmdResult {
    let (run_args, file) = match &which {
        Scenario::Theorem1(a) => (&a.run, &a.run.common.config),
        Scenario::Theorem2(a) => (&a.run, &a.run.common.config),
    };
    let mut res = Resolver::new(ConfigFile::load(file.as_deref()).map_err(Failure::usage)?);
    let common = resolve_common(&mut res, &run_args.common).map_err(Failure::usage)?;
    let opts = resolve_options(&mut res, run_args).map_err(Failure::usage)?;

    let setup = match &which {
        Scenario::Theorem1(a) => {
            let c1 = res.required("c1", a.c1).map_err(Failure::usage)?;
            let c2 = res.required("c2", a.c2).map_err(Failure::usage)?;
            let eps = res.get("epsilon", a.epsilon).map_err(Failure::usage)?;
            res.finish().map_err(Failure::usage)?;
            let s = match eps {
                Some(e) => Theorem1Setup::at_epsilon(c1, c2, e),
                None => plan_theorem1(c1, c2, None),
            };
            Setup::Theorem1(s.map_err(Failure::setup)?)
        }
        Scenario::Theorem2(a) => {
            let c1 = res.required("c1", a.c1).map_err(Failure::usage)?;
            let c2 = res.required("c2", a.c2).map_err(Failure::usage)?;
            let time = res.required("time", a.time).map_err(Failure::usage)?;
            let eps = res.get("epsilon", a.epsilon).map_err(Failure::usage)?;
            res.finish().map_err(Failure::usage)?;
            let s = match eps {
                Some(e) => Theorem2Setup::at_epsilon(c1, c2, time, e),
                None => plan_theorem2(c1, c2, time, None),
            };
            Setup::Theorem2(s.map_err(Failure::setup)?)
        }
    };
    opts.stepper.validate().map_err(Failure::setup)?;

    init_threads(common.threads)?;
    create_out_dir(&common.out)?;
    let outcome = run_scenario_with(&setup, &opts).map_err(Failure::integration)?;

    let pairs = opts.config_pairs(&setup);
    let mut report = outcome.report.clone();
    report.time_series_path = Some("series.csv".into());
    let json = to_json_string(&report).map_err(Failure::io)?;
    write_file(&common.out.join("report.json"), |w| {
        w.write_all(json.as_bytes()).map_err(Error::from)
    })?;
    write_file(&common.out.join("series.csv"), |w| {
        write_series_csv(w, &outcome.series, &pairs)
    })?;
    write_file(&common.out.join("initial.csv"), |w| {
        write_ensemble_csv(w, &outcome.initial, &pairs)
    })?;
    write_file(&common.out.join("final.csv"), |w| {
        write_ensemble_csv(w, &outcome.at_target, &pairs)
    })?;

    for c in report.failed_checks() {
        eprintln!(
            "check failed: {} = {:e} (bound {:e})",
            c.name, c.value, c.bound
        );
    }
    eprintln!(
        "{}: {} ({} particles, {} steps), output in {}",
        setup.name(),
        if report.passed { "PASS" } else { "FAIL" },
        report.diagnostics.particles,
        report.diagnostics.accepted_steps,
        common.out.display()
    );
    Ok(if report.passed {
        0
    } else {
        code::CHECKS_FAILED
    })
}

fn cmd_check_bounds(a: CheckBoundsArgs) -> CmdResult {
    let q = lemma1_quantities(a.r, a.w, a.l, a.mass).map_err(Failure::setup)?;
    if !(a.mu >= 0.0 && a.mu <= a.mass) {
        return Err(Failure::new(
            code::PRECONDITION,
            anyhow!("0 <= mu <= M required, got mu = {}, M = {}", a.mu, a.mass),
        ));
    }
    let cfg = StepperConfig {
        rel_tol: a.rel_tol,
        ..StepperConfig::default()
    };
    let e = Ensemble::new(vec![Particle::new(a.r, a.w, a.l, 1.0)], 0.0).map_err(Failure::setup)?;
    let mut integ =
        Integrator::new(e, cfg, FieldModel::Prescribed(a.mu)).map_err(Failure::setup)?;

    let mut samples = Vec::new();
    let mut record = |view: &StepView<'_>| {
        let p = view.ensemble.particles()[0];
        samples.push(TrajectorySample {
            t: view.time(),
            radius: p.radius,
            momentum: p.momentum,
        });
    };
    let extra = 0.25 * a.r;
    let horizon = match q.t0_upper {
        TimeBound::Finite(t) => t + extra,
        TimeBound::Unbounded => {
            let gamma = (1.0 + a.w * a.w).sqrt();
            1e3 * (a.r * gamma / a.w.abs() + a.r)
        }
    };
    integ.notify(None, &mut [&mut record]);
    integ
        .advance_until(horizon, &mut [&mut record], |i| {
            i.all_turned() || i.frozen()[0]
        })
        .map_err(Failure::integration)?;
    let turning = integ.turning_events()[0];
    if let Some(ev) = turning {
        integ
            .advance_to(ev.time + extra, &mut [&mut record])
            .map_err(Failure::integration)?;
    }
    let origin = integ.origin_events()[0];

    let lemma = if a.l > 0.0 {
        Some(
            check_lemma1((a.r, a.w, a.l), a.mass, &samples, turning.as_ref(), a.slack)
                .map_err(Failure::setup)?,
        )
    } else {
        None
    };
    let passed = lemma.as_ref().is_none_or(|r| r.all_pass());
    let out = json!({
        "inputs": { "r": a.r, "w": a.w, "l": a.l, "mass": a.mass, "mu": a.mu, "slack": a.slack },
        "quantities": q,
        "t0": turning.map(|e| e.time),
        "radius_at_t0": turning.map(|e| e.radius),
        "origin_crossing": origin.map(|e| e.time),
        "lemma1": lemma,
        "passed": passed,
    });
    let text = to_json_string(&out).map_err(Failure::io)?;
    print!("{text}");
    Ok(if passed { 0 } else { code::CHECKS_FAILED })
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let mut res =
        Resolver::new(ConfigFile::load(a.common.config.as_deref()).map_err(Failure::usage)?);
    let common = resolve_common(&mut res, &a.common).map_err(Failure::usage)?;
    let t_end: f64 = res.required("t_end", a.t_end).map_err(Failure::usage)?;
    let cfg = resolve_stepper(&mut res, &a.stepper).map_err(Failure::usage)?;
    res.finish().map_err(Failure::usage)?;
    cfg.validate().map_err(Failure::setup)?;

    let mut input = File::open(&a.input)
        .with_context(|| format!("cannot open {}", a.input.display()))
        .map_err(|e| Failure::new(code::NO_INPUT, e))?;
    let ensemble = read_ensemble_csv(&mut input)
        .with_context(|| format!("in {}", a.input.display()))
        .map_err(|e| Failure::new(code::DATA, e))?;
    if !(t_end >= ensemble.time()) {
        return Err(Failure::new(
            code::PRECONDITION,
            anyhow!(
                "--t-end {t_end} precedes the snapshot time {}",
                ensemble.time()
            ),
        ));
    }

    init_threads(common.threads)?;
    create_out_dir(&common.out)?;
    let output = run(ensemble, t_end, &cfg, FieldModel::SelfConsistent, &mut [])
        .map_err(Failure::integration)?;

    let mut pairs = vec![
        ("input".to_string(), a.input.display().to_string()),
        ("t_end".to_string(), shellcollapse::io::fmt_f64(t_end)),
    ];
    pairs.extend(cfg.config_pairs());
    write_file(&common.out.join("series.csv"), |w| {
        write_series_csv(w, &output.series, &pairs)
    })?;
    write_file(&common.out.join("final.csv"), |w| {
        write_ensemble_csv(w, &output.ensemble, &pairs)
    })?;
    eprintln!(
        "simulated {} particles to t = {t_end} in {} steps, output in {}",
        output.ensemble.len(),
        output.accepted_steps,
        common.out.display()
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Scenario { which } => cmd_scenario(which),
        Command::CheckBounds(a) => cmd_check_bounds(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
