//! Self-consistent advancement of the radial characteristics.
//!
//! Each accepted step freezes the enclosed mass seen by every particle at
//! its value at the start of the step, advances all particles with a common
//! Dormand–Prince 5(4) step, and rebuilds the mass profile afterwards. The
//! first upward zero crossing of each particle's radial momentum is located
//! on a cubic Hermite interpolant of the step.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{TimeSeries, TimeSeriesRecorder};
use crate::error::{domain, Error, Result};
use crate::field::{build_mass_profile, MassProfile};
use crate::phase::{lorentz, Ensemble, Particle};

/// Absolute tolerance on refined turning times.
pub const TURNING_TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepperConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub safety: f64,
    /// Steps are capped by this fraction of `min_i R_i / speed_i`.
    pub close_approach: f64,
    /// Radial (ℓ = 0) particles below this radius are frozen.
    pub origin_floor: f64,
    pub coupling: FieldCoupling,
}

/// Which enclosed mass a particle sees during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldCoupling {
    /// The mass at the start of the step.
    Frozen,
    /// The mean of the masses at the start of the step and at the end of a
    /// frozen predictor step. Costs a second trial and profile rebuild per
    /// step and makes the splitting error one order higher.
    Averaged,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            dt_init: 1e-4,
            dt_min: 1e-15,
            dt_max: 0.05,
            safety: 0.9,
            close_approach: 0.1,
            origin_floor: 1e-12,
            coupling: FieldCoupling::Averaged,
        }
    }
}

impl FieldCoupling {
    pub fn name(&self) -> &'static str {
        match self {
            FieldCoupling::Frozen => "frozen",
            FieldCoupling::Averaged => "averaged",
        }
    }
}

impl std::str::FromStr for FieldCoupling {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(FieldCoupling::Frozen),
            "averaged" => Ok(FieldCoupling::Averaged),
            other => Err(domain(format!(
                "coupling must be `frozen` or `averaged`, got {other:?}"
            ))),
        }
    }
}

impl StepperConfig {
    /// `key=value` pairs for file headers, floats with 17 digits.
    pub fn config_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("dt_max", self.dt_max),
            ("safety", self.safety),
            ("close_approach", self.close_approach),
            ("origin_floor", self.origin_floor),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), crate::io::fmt_f64(v)))
        .collect();
        out.push(("coupling".into(), self.coupling.name().into()));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.rel_tol,
            self.abs_tol,
            self.dt_init,
            self.dt_min,
            self.dt_max,
            self.close_approach,
            self.origin_floor,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(domain(
                "stepper tolerances and step bounds must be positive",
            ));
        }
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(domain("stepper requires dt_min <= dt_init <= dt_max"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(domain("safety factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Source of the enclosed mass driving each particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldModel {
    /// m from the ensemble's own mass profile (self-force excluded).
    SelfConsistent,
    /// Every particle sees the same constant enclosed mass.
    Prescribed(f64),
}

/// Right-hand side `(Ṙ, Ẇ)` of the characteristic system; `ℓ̇ = 0` is
/// implicit.
pub fn rhs(p: &Particle, enclosed_mass: f64) -> Result<(f64, f64)> {
    if !(p.radius > 0.0) {
        return Err(domain(format!("radius must be positive, got {}", p.radius)));
    }
    if !(enclosed_mass >= 0.0) {
        return Err(domain(format!(
            "enclosed mass must be >= 0, got {enclosed_mass}"
        )));
    }
    Ok(rhs_raw(p.radius, p.momentum, p.ang_mom_sq, enclosed_mass))
}

#[inline]
fn rhs_raw(r: f64, w: f64, l: f64, m: f64) -> (f64, f64) {
    let inv_r = 1.0 / r;
    let gamma = (1.0 + w * w + l * inv_r * inv_r).sqrt();
    let dr = w / gamma;
    let dw = l * inv_r * inv_r * inv_r / gamma + m * inv_r * inv_r;
    (dr, dw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurningEvent {
    pub index: usize,
    /// First time the radial momentum crosses zero from below.
    pub time: f64,
    pub radius: f64,
}

/// A radial (ℓ = 0) particle that fell through the origin floor and was frozen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginEvent {
    pub index: usize,
    /// Linear extrapolation of the time the radius reaches zero.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub t_start: f64,
    pub dt: f64,
    pub rejected: usize,
}

/// Read-only state handed to observers after each accepted step.
pub struct StepView<'a> {
    pub ensemble: &'a Ensemble,
    pub profile: &'a MassProfile,
    /// `None` for the initial notification.
    pub step: Option<StepInfo>,
    pub turning: &'a [Option<TurningEvent>],
    pub frozen: &'a [bool],
}

impl StepView<'_> {
    pub fn time(&self) -> f64 {
        self.ensemble.time()
    }
}

pub trait Observer {
    fn observe(&mut self, view: &StepView<'_>);
}

impl<F: FnMut(&StepView<'_>)> Observer for F {
    fn observe(&mut self, view: &StepView<'_>) {
        self(view)
    }
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    r1: f64,
    w1: f64,
    k_start: (f64, f64),
    k_end: (f64, f64),
    err: f64,
    ok: bool,
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn dp5_trial(r0: f64, w0: f64, l: f64, m: f64, h: f64, cfg: &StepperConfig) -> Trial {
    let fail = Trial {
        r1: r0,
        w1: w0,
        k_start: (0.0, 0.0),
        k_end: (0.0, 0.0),
        err: f64::INFINITY,
        ok: false,
    };
    let k1 = rhs_raw(r0, w0, l, m);

    macro_rules! stage {
        ($($a:expr, $k:expr);+) => {{
            let r = r0 + h * (0.0 $(+ $a * $k.0)+);
            let w = w0 + h * (0.0 $(+ $a * $k.1)+);
            if !(r > 0.0) {
                return fail;
            }
            rhs_raw(r, w, l, m)
        }};
    }

    let k2 = stage!(A21, k1);
    let k3 = stage!(A31, k1; A32, k2);
    let k4 = stage!(A41, k1; A42, k2; A43, k3);
    let k5 = stage!(A51, k1; A52, k2; A53, k3; A54, k4);
    let k6 = stage!(A61, k1; A62, k2; A63, k3; A64, k4; A65, k5);

    let r1 = r0 + h * (B1 * k1.0 + B3 * k3.0 + B4 * k4.0 + B5 * k5.0 + B6 * k6.0);
    let w1 = w0 + h * (B1 * k1.1 + B3 * k3.1 + B4 * k4.1 + B5 * k5.1 + B6 * k6.1);
    if !(r1 > 0.0) || !w1.is_finite() {
        return fail;
    }
    let k7 = rhs_raw(r1, w1, l, m);

    let err_r = h * (E1 * k1.0 + E3 * k3.0 + E4 * k4.0 + E5 * k5.0 + E6 * k6.0 + E7 * k7.0);
    let err_w = h * (E1 * k1.1 + E3 * k3.1 + E4 * k4.1 + E5 * k5.1 + E6 * k6.1 + E7 * k7.1);

    let p0 = (w0 * w0 + l / (r0 * r0)).sqrt();
    let p1 = (w1 * w1 + l / (r1 * r1)).sqrt();
    let sc_r = cfg.abs_tol + cfg.rel_tol * r0.max(r1);
    let sc_w = cfg.abs_tol + cfg.rel_tol * p0.max(p1);
    let err = (err_r.abs() / sc_r).max(err_w.abs() / sc_w);

    Trial {
        r1,
        w1,
        k_start: k1,
        k_end: k7,
        err,
        ok: err.is_finite(),
    }
}

/// Cubic Hermite interpolant on `[0, h]` at `s ∈ [0, h]`.
#[inline]
fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let t = s / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// Locates the zero of the momentum interpolant on a step where it goes
/// from negative to non-negative.
fn refine_turning(w0: f64, w1: f64, dw0: f64, dw1: f64, h: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = h;
    let mut f_lo = w0;
    let mut f_hi = w1;
    while hi - lo > TURNING_TIME_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = hermite(w0, w1, dw0, dw1, h, mid);
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    if f_hi > f_lo {
        lo + (hi - lo) * (-f_lo / (f_hi - f_lo))
    } else {
        hi
    }
}

/// Owns an ensemble and advances it step by step.
pub struct Integrator {
    ensemble: Ensemble,
    profile: MassProfile,
    cfg: StepperConfig,
    model: FieldModel,
    dt_next: f64,
    turning: Vec<Option<TurningEvent>>,
    upward_crossings: Vec<u32>,
    downward_crossings: Vec<u32>,
    frozen: Vec<bool>,
    origin: Vec<Option<OriginEvent>>,
    accepted: usize,
    rejected: usize,
}

impl Integrator {
    pub fn new(ensemble: Ensemble, cfg: StepperConfig, model: FieldModel) -> Result<Self> {
        cfg.validate()?;
        if let FieldModel::Prescribed(m) = model {
            if !(m >= 0.0) || !m.is_finite() {
                return Err(domain(format!(
                    "prescribed enclosed mass must be >= 0, got {m}"
                )));
            }
        }
        let n = ensemble.len();
        let profile = build_mass_profile(&ensemble);
        Ok(Self {
            ensemble,
            profile,
            dt_next: cfg.dt_init,
            cfg,
            model,
            turning: vec![None; n],
            upward_crossings: vec![0; n],
            downward_crossings: vec![0; n],
            frozen: vec![false; n],
            origin: vec![None; n],
            accepted: 0,
            rejected: 0,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    pub fn profile(&self) -> &MassProfile {
        &self.profile
    }

    pub fn time(&self) -> f64 {
        self.ensemble.time()
    }

    pub fn turning_events(&self) -> &[Option<TurningEvent>] {
        &self.turning
    }

    /// Number of negative-to-non-negative momentum crossings per particle.
    pub fn upward_crossings(&self) -> &[u32] {
        &self.upward_crossings
    }

    /// Number of positive-to-non-positive momentum crossings per particle.
    pub fn downward_crossings(&self) -> &[u32] {
        &self.downward_crossings
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn origin_events(&self) -> &[Option<OriginEvent>] {
        &self.origin
    }

    pub fn accepted_steps(&self) -> usize {
        self.accepted
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    pub fn all_turned(&self) -> bool {
        self.turning
            .iter()
            .zip(&self.frozen)
            .all(|(t, &f)| t.is_some() || f)
    }

    pub fn view(&self, step: Option<StepInfo>) -> StepView<'_> {
        StepView {
            ensemble: &self.ensemble,
            profile: &self.profile,
            step,
            turning: &self.turning,
            frozen: &self.frozen,
        }
    }

    pub fn notify(&self, step: Option<StepInfo>, observers: &mut [&mut dyn Observer]) {
        let view = self.view(step);
        for o in observers.iter_mut() {
            o.observe(&view);
        }
    }

    fn enclosed_masses(&self) -> Vec<f64> {
        match self.model {
            FieldModel::SelfConsistent => self.profile.enclosed_masses().to_vec(),
            FieldModel::Prescribed(m) => vec![m; self.ensemble.len()],
        }
    }

    fn close_approach_cap(&self) -> f64 {
        let ps = self.ensemble.particles();
        let mut best = f64::INFINITY;
        for (p, &frozen) in ps.iter().zip(&self.frozen) {
            if frozen {
                continue;
            }
            let p_sq = p.momentum * p.momentum + p.ang_mom_sq / (p.radius * p.radius);
            if p_sq > 0.0 {
                let speed = p_sq.sqrt() / (1.0 + p_sq).sqrt();
                best = best.min(p.radius / speed);
            }
        }
        self.cfg.close_approach * best
    }

    /// One trial step of size `h` for every particle; returns the trials,
    /// the largest scaled error and whether every trial stayed admissible.
    fn trial_all(&self, masses: &[f64], h: f64) -> (Vec<Trial>, f64, bool) {
        let cfg = self.cfg;
        let frozen = &self.frozen;
        let trials: Vec<Trial> = self
            .ensemble
            .particles()
            .par_iter()
            .zip(masses.par_iter())
            .enumerate()
            .map(|(i, (p, &m))| {
                if frozen[i] {
                    Trial {
                        r1: p.radius,
                        w1: p.momentum,
                        k_start: (0.0, 0.0),
                        k_end: (0.0, 0.0),
                        err: 0.0,
                        ok: true,
                    }
                } else {
                    dp5_trial(p.radius, p.momentum, p.ang_mom_sq, m, h, &cfg)
                }
            })
            .collect();
        let mut err: f64 = 0.0;
        let mut ok = true;
        for t in &trials {
            ok &= t.ok;
            err = err.max(t.err);
        }
        (trials, err, ok)
    }

    /// Takes one accepted step that does not pass `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<StepInfo> {
        let t0 = self.ensemble.time();
        let remaining = t_limit - t0;
        if !(remaining > 0.0) {
            return Err(domain(format!(
                "step limit {t_limit} is not after t = {t0}"
            )));
        }
        let masses = self.enclosed_masses();
        let cap = self.close_approach_cap();
        let mut dt = self.dt_next.min(self.cfg.dt_max).min(cap);
        let mut clipped = false;
        if dt >= remaining {
            dt = remaining;
            clipped = true;
        }

        let ps = self.ensemble.particles();
        let averaged = self.cfg.coupling == FieldCoupling::Averaged
            && self.model == FieldModel::SelfConsistent;
        let mut rejected = 0;
        let (trials, err) = loop {
            let h = dt;
            let (mut trials, mut err, mut ok) = self.trial_all(&masses, h);
            if ok && err <= 1.0 && averaged {
                let states: Vec<(f64, f64)> = trials.iter().map(|t| (t.r1, t.w1)).collect();
                let mut predicted = self.ensemble.clone();
                predicted.advance(t0 + h, &states);
                let end = build_mass_profile(&predicted);
                let mean: Vec<f64> = masses
                    .iter()
                    .zip(end.enclosed_masses())
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                (trials, err, ok) = self.trial_all(&mean, h);
            }
            if ok && err <= 1.0 {
                break (trials, err);
            }
            rejected += 1;
            self.rejected += 1;
            let shrink = if ok {
                (self.cfg.safety * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.25
            };
            dt *= shrink;
            clipped = false;
            if dt < self.cfg.dt_min {
                return Err(Error::StepUnderflow {
                    t: t0,
                    dt_min: self.cfg.dt_min,
                });
            }
        };

        let h = dt;
        let t1 = if clipped { t_limit } else { t0 + h };
        for (i, (p, trial)) in ps.iter().zip(&trials).enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (w0, w1) = (p.momentum, trial.w1);
            if w0 < 0.0 && w1 >= 0.0 {
                self.upward_crossings[i] += 1;
                if self.turning[i].is_none() {
                    let s = refine_turning(w0, w1, trial.k_start.1, trial.k_end.1, h);
                    let radius = hermite(p.radius, trial.r1, trial.k_start.0, trial.k_end.0, h, s);
                    self.turning[i] = Some(TurningEvent {
                        index: i,
                        time: t0 + s,
                        radius,
                    });
                }
            } else if w0 > 0.0 && w1 <= 0.0 {
                self.downward_crossings[i] += 1;
            }
        }

        let states: Vec<(f64, f64)> = trials.iter().map(|t| (t.r1, t.w1)).collect();
        self.ensemble.advance(t1, &states);

        let floor = self.cfg.origin_floor;
        for (i, p) in self.ensemble.particles().iter().enumerate() {
            if !self.frozen[i] && p.ang_mom_sq == 0.0 && p.radius < floor && p.momentum < 0.0 {
                self.frozen[i] = true;
                let speed = -p.momentum / lorentz(p.radius, p.momentum, 0.0);
                self.origin[i] = Some(OriginEvent {
                    index: i,
                    time: t1 + p.radius / speed,
                });
            }
        }

        self.profile = build_mass_profile(&self.ensemble);
        self.accepted += 1;
        let grow = if err > 0.0 {
            (self.cfg.safety * err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        self.dt_next = (h * grow).clamp(self.cfg.dt_min, self.cfg.dt_max);
        Ok(StepInfo {
            t_start: t0,
            dt: t1 - t0,
            rejected,
        })
    }

    /// Advances to exactly `t_end`, notifying observers after every
    /// accepted step.
    pub fn advance_to(&mut self, t_end: f64, observers: &mut [&mut dyn Observer]) -> Result<()> {
        while self.ensemble.time() < t_end {
            let info = self.step(t_end)?;
            self.notify(Some(info), observers);
        }
        Ok(())
    }

    /// Advances until `done` holds or `t_max` is reached. Returns whether
    /// `done` was satisfied.
    pub fn advance_until(
        &mut self,
        t_max: f64,
        observers: &mut [&mut dyn Observer],
        mut done: impl FnMut(&Self) -> bool,
    ) -> Result<bool> {
        while !done(self) {
            if self.ensemble.time() >= t_max {
                return Ok(false);
            }
            let info = self.step(t_max)?;
            self.notify(Some(info), observers);
        }
        Ok(true)
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensemble: Ensemble,
    pub series: TimeSeries,
    pub turning: Vec<Option<TurningEvent>>,
    pub origin: Vec<Option<OriginEvent>>,
    pub accepted_steps: usize,
}

/// One adaptive step starting from `cfg.dt_init`.
pub fn step(e: &Ensemble, cfg: &StepperConfig, model: FieldModel) -> Result<(Ensemble, StepInfo)> {
    let mut integ = Integrator::new(e.clone(), *cfg, model)?;
    let info = integ.step(f64::INFINITY)?;
    Ok((integ.into_ensemble(), info))
}

/// Advances to exactly `t_end`, recording a time series row at the start
/// and after every accepted step.
pub fn run(
    e: Ensemble,
    t_end: f64,
    cfg: &StepperConfig,
    model: FieldModel,
    observers: &mut [&mut dyn Observer],
) -> Result<RunOutput> {
    if !(t_end >= e.time()) {
        return Err(domain(format!(
            "t_end = {t_end} precedes the ensemble time {}",
            e.time()
        )));
    }
    let mut integ = Integrator::new(e, *cfg, model)?;
    let mut recorder = TimeSeriesRecorder::default();
    {
        let mut all = |view: &StepView<'_>| {
            recorder.observe(view);
            for o in observers.iter_mut() {
                o.observe(view);
            }
        };
        integ.notify(None, &mut [&mut all]);
        integ.advance_to(t_end, &mut [&mut all])?;
    }
    let accepted_steps = integ.accepted_steps();
    let turning = integ.turning_events().to_vec();
    let origin = integ.origin_events().to_vec();
    let mut ensemble = integ.into_ensemble();
    ensemble.set_time(ensemble.time().max(t_end));
    Ok(RunOutput {
        ensemble,
        series: recorder.into_series(),
        turning,
        origin,
        accepted_steps,
    })
}
