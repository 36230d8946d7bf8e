//! Acceptance suite. Each test prints one `criterion N ...: PASS|FAIL` line
//! straight to stderr, so the verdicts show up even when output capture is
//! on, and then asserts.
//!
//! The heavy scenario runs are shared between criteria and the tests take a
//! global lock, so wall-clock timings are not distorted by tests running
//! side by side.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shellcollapse::bounds::ParticleLemmaRecord;
use shellcollapse::dynamics::{StepView, TurningEvent};
use shellcollapse::io::write_series_csv;
use shellcollapse::scenarios::Check;
use shellcollapse::{
    check_lemma1, density_ball_average, lemma1_quantities, plan_theorem1, run_scenario_with,
    Ensemble, FieldModel, Integrator, Particle, ScenarioOptions, ScenarioOutcome, Setup,
    StepperConfig, Theorem1Setup, Theorem2Setup, TimeBound, TrajectorySample,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {n} ({name}): {status}  {detail}");
}

struct ScenarioRun {
    setup: Setup,
    opts: ScenarioOptions,
    outcome: ScenarioOutcome,
    elapsed: Duration,
    series_csv: Vec<u8>,
}

fn run_in_pool(setup: Setup, opts: ScenarioOptions, threads: usize) -> ScenarioRun {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let start = Instant::now();
    let outcome = pool.install(|| run_scenario_with(&setup, &opts)).unwrap();
    let elapsed = start.elapsed();
    let mut series_csv = Vec::new();
    write_series_csv(&mut series_csv, &outcome.series, &opts.config_pairs(&setup)).unwrap();
    ScenarioRun {
        setup,
        opts,
        outcome,
        elapsed,
        series_csv,
    }
}

fn theorem1_setup() -> (Setup, ScenarioOptions) {
    let setup = Setup::Theorem1(Theorem1Setup::at_epsilon(32.0, 500.0, 0.05).unwrap());
    (setup, ScenarioOptions::default())
}

/// The Theorem 1 run on a single worker thread.
fn theorem1_run() -> &'static ScenarioRun {
    static RUN: OnceLock<ScenarioRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let (setup, opts) = theorem1_setup();
        run_in_pool(setup, opts, 1)
    })
}

/// The Theorem 2 run, continued to five times the target time.
fn theorem2_run() -> &'static ScenarioRun {
    static RUN: OnceLock<ScenarioRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let setup = Setup::Theorem2(Theorem2Setup::at_epsilon(1.0, 20.0, 1.0, 0.01).unwrap());
        let opts = ScenarioOptions {
            extend_to: Some(5.0),
            ..ScenarioOptions::default()
        };
        let threads = rayon::current_num_threads();
        run_in_pool(setup, opts, threads)
    })
}

fn check<'a>(run: &'a ScenarioRun, name: &str) -> &'a Check {
    run.outcome
        .report
        .check(name)
        .unwrap_or_else(|| panic!("report has no check named {name}"))
}

fn describe(c: &Check) -> String {
    let rel = serde_json::to_value(c.relation).unwrap();
    format!(
        "{}={:.6e} {} {:.6e}",
        c.name,
        c.value,
        rel.as_str().unwrap(),
        c.bound
    )
}

fn summarize(checks: &[&Check]) -> (bool, String) {
    let pass = checks.iter().all(|c| c.pass);
    let detail = checks
        .iter()
        .map(|c| format!("[{}{}]", if c.pass { "" } else { "x " }, describe(c)))
        .collect::<Vec<_>>()
        .join(" ");
    (pass, detail)
}

/// `R(t)²` of a free particle: straight-line motion in Cartesian space.
fn free_radius_sq(r: f64, w: f64, l: f64, t: f64) -> f64 {
    let g = (1.0 + w * w + l / (r * r)).sqrt();
    r * r + 2.0 * r * (w / g) * t + ((w * w + l / (r * r)) / (g * g)) * t * t
}

fn free_turning_time(r: f64, w: f64, l: f64) -> f64 {
    let g = (1.0 + w * w + l / (r * r)).sqrt();
    -r * w * g / (w * w + l / (r * r))
}

#[test]
fn criterion_1_free_streaming_oracle() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut particles = Vec::new();
    let mut t0 = Vec::new();
    for _ in 0..100 {
        let r = rng.gen_range(0.5..2.0);
        let w = rng.gen_range(-3.0..-0.2);
        let l = rng.gen_range(0.05..2.0);
        t0.push(free_turning_time(r, w, l));
        particles.push(Particle::new(r, w, l, 1.0));
    }
    let initial = particles.clone();
    let t_end = 2.0 * t0.iter().copied().fold(0.0, f64::max);
    let ensemble = Ensemble::new(particles, 0.0).unwrap();

    let start = Instant::now();
    let mut integ = Integrator::new(
        ensemble,
        StepperConfig::default(),
        FieldModel::Prescribed(0.0),
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut observer = |view: &StepView<'_>| {
        let t = view.time();
        for (i, (p, p0)) in view.ensemble.particles().iter().zip(&initial).enumerate() {
            if t <= 2.0 * t0[i] {
                let exact = free_radius_sq(p0.radius, p0.momentum, p0.ang_mom_sq, t);
                worst = worst.max((p.radius * p.radius - exact).abs() / exact);
            }
        }
    };
    integ.notify(None, &mut [&mut observer]);
    integ.advance_to(t_end, &mut [&mut observer]).unwrap();
    let elapsed = start.elapsed();

    let pass = worst <= 1e-8 && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "free-streaming oracle",
        pass,
        &format!(
            "max relative error of R^2 = {worst:.3e} (<= 1e-8), runtime {elapsed:.2?} (< 10 s)"
        ),
    );
    assert!(pass);
}

/// Fixed-fraction RK4 integration of one characteristic in a constant
/// enclosed mass, written independently of the library stepper.
struct ReferenceTrajectory {
    samples: Vec<TrajectorySample>,
    turning: Option<TurningEvent>,
}

fn reference_rhs(y: [f64; 2], l: f64, mu: f64) -> [f64; 2] {
    let [r, w] = y;
    let g = (1.0 + w * w + l / (r * r)).sqrt();
    [w / g, l / (r * r * r * g) + mu / (r * r)]
}

fn rk4(y: [f64; 2], h: f64, l: f64, mu: f64) -> [f64; 2] {
    let add = |a: [f64; 2], k: [f64; 2], s: f64| [a[0] + s * k[0], a[1] + s * k[1]];
    let k1 = reference_rhs(y, l, mu);
    let k2 = reference_rhs(add(y, k1, h / 2.0), l, mu);
    let k3 = reference_rhs(add(y, k2, h / 2.0), l, mu);
    let k4 = reference_rhs(add(y, k3, h), l, mu);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Steps of `1e-3·R` until the turning time plus `extra`. The turning time
/// is refined by bisection on a partial RK4 step from the last state with
/// negative momentum.
fn reference_trajectory(r: f64, w: f64, l: f64, mu: f64, extra: f64) -> ReferenceTrajectory {
    let mut t = 0.0;
    let mut y = [r, w];
    let mut samples = vec![TrajectorySample {
        t,
        radius: r,
        momentum: w,
    }];
    let mut turning = None;
    let mut stop = f64::INFINITY;
    while t < stop {
        let h = (1e-3 * y[0]).min(stop - t);
        let next = rk4(y, h, l, mu);
        if turning.is_none() && y[1] < 0.0 && next[1] >= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rk4(y, mid, l, mu)[1] < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            turning = Some(TurningEvent {
                index: 0,
                time: t + tau,
                radius: rk4(y, tau, l, mu)[0],
            });
            stop = t + tau + extra;
        }
        t += h;
        y = next;
        samples.push(TrajectorySample {
            t,
            radius: y[0],
            momentum: y[1],
        });
    }
    ReferenceTrajectory { samples, turning }
}

fn library_trajectory(
    r: f64,
    w: f64,
    l: f64,
    mu: f64,
    extra: f64,
) -> (Vec<TrajectorySample>, Option<TurningEvent>) {
    let cfg = StepperConfig {
        rel_tol: 1e-12,
        ..StepperConfig::default()
    };
    let e = Ensemble::new(vec![Particle::new(r, w, l, 1.0)], 0.0).unwrap();
    let mut integ = Integrator::new(e, cfg, FieldModel::Prescribed(mu)).unwrap();
    let mut samples = Vec::new();
    let mut observer = |view: &StepView<'_>| {
        let p = view.ensemble.particles()[0];
        samples.push(TrajectorySample {
            t: view.time(),
            radius: p.radius,
            momentum: p.momentum,
        });
    };
    integ.notify(None, &mut [&mut observer]);
    let horizon = match lemma1_quantities(r, w, l, mu).unwrap().t0_upper {
        TimeBound::Finite(t) => t + extra,
        TimeBound::Unbounded => unreachable!("l > 0"),
    };
    integ
        .advance_until(horizon, &mut [&mut observer], |i| i.all_turned())
        .unwrap();
    let turning = integ.turning_events()[0];
    if let Some(ev) = turning {
        integ
            .advance_to(ev.time + extra, &mut [&mut observer])
            .unwrap();
    }
    (samples, turning)
}

#[test]
fn criterion_2_lemma1_property_suite() {
    let _guard = serial();
    const SLACK: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut checked = 0;
    let mut worst_t0 = 0.0f64;
    for draw in 0..1000 {
        let r = rng.gen_range(0.2..2.0);
        let w = rng.gen_range(-5.0..-0.1);
        let l = rng.gen_range(1e-3..2.0) * r * r;
        let mass = rng.gen_range(0.0..3.0);
        for mu in [0.0, 0.5 * mass, mass] {
            let extra = 0.25 * r;
            let reference = reference_trajectory(r, w, l, mu, extra);
            let (samples, turning) = library_trajectory(r, w, l, mu, extra);
            let records: [ParticleLemmaRecord; 2] = [
                check_lemma1(
                    (r, w, l),
                    mass,
                    &reference.samples,
                    reference.turning.as_ref(),
                    SLACK,
                )
                .unwrap(),
                check_lemma1((r, w, l), mass, &samples, turning.as_ref(), SLACK).unwrap(),
            ];
            let agreement = match (reference.turning, turning) {
                (Some(a), Some(b)) => {
                    let d = (a.time - b.time).abs() / r;
                    worst_t0 = worst_t0.max(d);
                    d <= 1e-7
                }
                _ => false,
            };
            checked += 1;
            for (label, rec) in ["reference", "integrator"].iter().zip(&records) {
                if !rec.all_pass() {
                    failures.push(format!(
                        "draw {draw} {label} r={r} w={w} l={l} M={mass} mu={mu}: {:?}",
                        rec.parts
                    ));
                }
            }
            if !agreement {
                failures.push(format!("draw {draw} turning times disagree: mu={mu}"));
            }
        }
    }
    let elapsed = start.elapsed();
    for f in failures.iter().take(5) {
        eprintln!("{f}");
    }
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    verdict(
        2,
        "Lemma 1 property suite",
        pass,
        &format!(
            "{checked} characteristics, {} failures at slack {SLACK:e}, \
             max |T0 - T0_ref|/r = {worst_t0:.2e}, runtime {elapsed:.1?} (< 120 s)",
            failures.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_theorem1_reproduction() {
    let _guard = serial();
    let run = theorem1_run();
    let planner = plan_theorem1(32.0, 500.0, Some(0.05));
    let mut checks: Vec<&Check> = [
        "initial_density_sup",
        "initial_field_sup",
        "sampled_mass_lower",
        "sampled_mass_upper",
    ]
    .iter()
    .map(|n| check(run, n))
    .collect();
    checks.extend(
        [
            "min_turning_time",
            "unturned_particles",
            "max_radius_at_target",
            "certified_density",
            "certified_field",
        ]
        .iter()
        .map(|n| check(run, n)),
    );
    let (checks_pass, detail) = summarize(&checks);
    let planner_note = match &planner {
        Ok(s) => format!("planner ok at epsilon={}", s.epsilon),
        Err(e) => format!("planner failed: {e}"),
    };
    let in_time = run.elapsed < Duration::from_secs(600);
    let pass = checks_pass && planner.is_ok() && in_time;
    verdict(
        3,
        "Theorem 1 reproduction",
        pass,
        &format!(
            "{} particles; {detail}; {planner_note}; runtime {:.1?} (< 600 s)",
            run.outcome.initial.len(),
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_theorem2_reproduction() {
    let _guard = serial();
    let run = theorem2_run();
    let exact = run.outcome.initial.total_mass() == 1.0;
    let checks: Vec<&Check> = [
        "total_mass_exact",
        "max_radius_at_target",
        "certified_field_vs_prediction",
    ]
    .iter()
    .map(|n| check(run, n))
    .collect();
    let (checks_pass, detail) = summarize(&checks);
    let in_time = run.elapsed < Duration::from_secs(600);
    let pass = exact && checks_pass && in_time;
    verdict(
        4,
        "Theorem 2 reproduction",
        pass,
        &format!("{detail}; runtime to t = 5T {:.1?} (< 600 s)", run.elapsed),
    );
    assert!(pass);
}

#[test]
fn criterion_5_conservation_suite() {
    let _guard = serial();
    let run = theorem1_run();
    let checks: Vec<&Check> = [
        "mass_changes",
        "angular_momentum_changes",
        "energy_drift",
        "max_speed",
    ]
    .iter()
    .map(|n| check(run, n))
    .collect();
    let (pass, detail) = summarize(&checks);
    let d = &run.outcome.report.diagnostics;
    verdict(
        5,
        "conservation suite",
        pass,
        &format!(
            "{detail}; drift without shell self-energy {:.3e}",
            d.interaction_energy_drift
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_lemma3_estimator_identity() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = rng.gen_range(1e-3..10.0);
        let n = rng.gen_range(1..200);
        let particles: Vec<Particle> = (0..n)
            .map(|_| {
                Particle::new(
                    b * rng.gen_range(1e-6..=1.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(1e-6..2.0),
                )
            })
            .collect();
        let e = Ensemble::new(particles, 0.0).unwrap();
        let expected = 3.0 * e.total_mass() / (4.0 * std::f64::consts::PI * b.powi(3));
        let got = density_ball_average(&e, b).unwrap();
        worst = worst.max((got - expected).abs() / expected);
    }
    let pass = worst <= 1e-12;
    verdict(
        6,
        "Lemma 3 estimator identity",
        pass,
        &format!("max relative deviation {worst:.3e} over 1000 ensembles (<= 1e-12)"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_inbound_energy_monotonicity() {
    let _guard = serial();
    let run = theorem1_run();
    let c = check(run, "inbound_energy_increase");
    verdict(
        7,
        "inbound kinetic-energy monotonicity",
        c.pass,
        &describe(c),
    );
    assert!(c.pass);
}

#[test]
fn criterion_8_decay_diagnostic() {
    let _guard = serial();
    let run = theorem2_run();
    let decay = run
        .outcome
        .report
        .diagnostics
        .decay
        .clone()
        .expect("extended run has a decay summary");
    let exponent = decay.rho_exponent.unwrap_or(f64::NAN);
    let pass = decay.ratio < 0.01 && exponent < 0.0;
    verdict(
        8,
        "decay diagnostic",
        pass,
        &format!(
            "sup rho(5T)/sup rho(T) = {:.3e} (< 0.01), fitted rho exponent {exponent:.3} (< 0), \
             field exponent {:.3} (reported only)",
            decay.ratio,
            decay.field_exponent.unwrap_or(f64::NAN)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_thread_count_determinism() {
    let _guard = serial();
    let single = theorem1_run();
    let many = run_in_pool(single.setup.clone(), single.opts.clone(), 8);
    let identical = single.series_csv == many.series_csv;
    verdict(
        9,
        "determinism across thread counts",
        identical,
        &format!(
            "series.csv with 1 and 8 threads: {} vs {} bytes, identical = {identical}",
            single.series_csv.len(),
            many.series_csv.len()
        ),
    );
    assert!(identical);
}
