//! Closed-form characteristic bounds and their verification along
//! simulated trajectories.
//!
//! For an inbound start `(r, w < 0, ℓ)` driven by any enclosed mass with
//! `0 <= m <= M`, the radial momentum turns positive exactly once at `T₀`,
//! the turning time and radius are bracketed in closed form, the energy
//! `W² + ℓR⁻²` never exceeds its initial value before `T₀`, and `R(t)²`
//! stays under a parabola in `t`.
//!
//! Every comparison is reported as a normalised margin `(bound - value) /
//! scale`, positive when the bound holds; a check passes when the margin is
//! at least `-slack`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{Observer, StepView, TurningEvent, TURNING_TIME_TOLERANCE};
use crate::error::{domain, Result};
use crate::phase::Ensemble;

/// An upper bound that may be absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeBound {
    Finite(f64),
    Unbounded,
}

impl TimeBound {
    pub fn value(&self) -> Option<f64> {
        match self {
            TimeBound::Finite(v) => Some(*v),
            TimeBound::Unbounded => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, TimeBound::Unbounded)
    }
}

impl Serialize for TimeBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeBound::Finite(v) => s.serialize_f64(*v),
            TimeBound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma1Quantities {
    /// `ℓ + M r sqrt(1 + w² + ℓ/r²)`.
    pub d: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub t0_lower: f64,
    pub t0_upper: TimeBound,
    /// Vertex of the radius envelope parabola.
    pub t_min: f64,
}

fn check_inputs(r: f64, w: f64, l: f64, mass: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(domain(format!("r > 0 required, got {r}")));
    }
    if !(w < 0.0) || !w.is_finite() {
        return Err(domain(format!("w < 0 required, got {w}")));
    }
    if !(l >= 0.0) || !l.is_finite() {
        return Err(domain(format!("l >= 0 required, got {l}")));
    }
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(domain(format!("M >= 0 required, got {mass}")));
    }
    Ok(())
}

pub fn lemma1_quantities(r: f64, w: f64, l: f64, mass: f64) -> Result<Lemma1Quantities> {
    check_inputs(r, w, l, mass)?;
    let energy = (1.0 + w * w + l / (r * r)).sqrt();
    let d = l + mass * r * energy;
    let rw2 = r * r * w * w;
    let r_minus = r * (l / (rw2 + l)).sqrt();
    let r_plus = r * (d / (rw2 + d)).sqrt();
    let t0_lower = r * (1.0 - (d / (rw2 + d)).sqrt());
    let t0_upper = if l > 0.0 {
        TimeBound::Finite(-w * r * r * r * energy / l)
    } else {
        TimeBound::Unbounded
    };
    let t_min = r * w.abs() * energy / (w * w + d / (r * r));
    Ok(Lemma1Quantities {
        d,
        r_minus,
        r_plus,
        t0_lower,
        t0_upper,
        t_min,
    })
}

/// Upper envelope for `R(t)²` on `[0, T₀]`:
/// `(r - |w| t / γ₀)² + D t² / (r² γ₀²)`.
pub fn energy_upper_envelope(r: f64, w: f64, l: f64, mass: f64, t: f64) -> Result<f64> {
    check_inputs(r, w, l, mass)?;
    if !(t >= 0.0) {
        return Err(domain(format!("t >= 0 required, got {t}")));
    }
    Ok(envelope(r, w, l, mass, t))
}

fn envelope(r: f64, w: f64, l: f64, mass: f64, t: f64) -> f64 {
    let energy_sq = 1.0 + w * w + l / (r * r);
    let energy = energy_sq.sqrt();
    let d = l + mass * r * energy;
    let lin = r - w.abs() * t / energy;
    lin * lin + d * t * t / (r * r * energy_sq)
}

/// Lower bounds on `‖ρ(T)‖∞` and `‖E(T)‖∞` when all mass `M` lies within
/// radius `B`: `(3M / (4πB³), M / B²)`.
pub fn lemma3_bounds(mass: f64, radius: f64) -> Result<(f64, f64)> {
    if !(mass > 0.0) || !(radius > 0.0) {
        return Err(domain(format!(
            "mass and radius must be positive, got M = {mass}, B = {radius}"
        )));
    }
    Ok((
        3.0 * mass / (4.0 * PI * radius.powi(3)),
        mass / (radius * radius),
    ))
}

/// Pass/fail of one part for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartOutcome {
    pub pass: bool,
    /// Smallest normalised margin seen; `None` when nothing was evaluated.
    pub worst_margin: Option<f64>,
}

impl PartOutcome {
    fn failed_unevaluated() -> Self {
        Self {
            pass: false,
            worst_margin: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub radius: f64,
    pub momentum: f64,
}

/// Streaming check of all five parts for one particle. Memory is O(1) so
/// it can run alongside a large ensemble.
#[derive(Debug, Clone)]
pub struct Lemma1Monitor {
    r: f64,
    w: f64,
    l: f64,
    mass: f64,
    quantities: Lemma1Quantities,
    initial_momentum: f64,
    initial_energy: f64,
    before: Option<f64>,
    after: Option<f64>,
    energy_lower: Option<f64>,
    energy_upper: Option<f64>,
}

fn fold_min(acc: &mut Option<f64>, v: f64) {
    *acc = Some(match *acc {
        Some(a) => a.min(v),
        None => v,
    });
}

impl Lemma1Monitor {
    pub fn new(r: f64, w: f64, l: f64, mass: f64) -> Result<Self> {
        let quantities = lemma1_quantities(r, w, l, mass)?;
        let initial_energy = w * w + l / (r * r);
        Ok(Self {
            r,
            w,
            l,
            mass,
            quantities,
            initial_momentum: initial_energy.sqrt(),
            initial_energy,
            before: None,
            after: None,
            energy_lower: None,
            energy_upper: None,
        })
    }

    pub fn quantities(&self) -> &Lemma1Quantities {
        &self.quantities
    }

    fn check_on_interval(&mut self, t: f64, radius: f64, momentum: f64) {
        let value = momentum * momentum + self.l / (radius * radius);
        fold_min(
            &mut self.energy_lower,
            (self.initial_energy - value) / self.initial_energy,
        );
        let env = envelope(self.r, self.w, self.l, self.mass, t);
        fold_min(
            &mut self.energy_upper,
            (env - radius * radius) / (self.r * self.r),
        );
    }

    /// Records one trajectory sample; `turning` is the event known so far.
    pub fn observe(&mut self, sample: TrajectorySample, turning: Option<&TurningEvent>) {
        let t0 = turning.map(|e| e.time);
        let TrajectorySample {
            t,
            radius,
            momentum,
        } = sample;
        if t0.is_none_or(|t0| t <= t0) {
            self.check_on_interval(t, radius, momentum);
        }
        let scale = self.initial_momentum;
        match t0 {
            Some(t0) if t > t0 + TURNING_TIME_TOLERANCE => {
                fold_min(&mut self.after, momentum / scale)
            }
            Some(t0) if t >= t0 - TURNING_TIME_TOLERANCE => {}
            _ => fold_min(&mut self.before, -momentum / scale),
        }
    }

    /// Closes the record with the detected turning event, if any.
    pub fn finish(
        mut self,
        index: usize,
        turning: Option<&TurningEvent>,
        slack: f64,
    ) -> ParticleLemmaRecord {
        let pass_slack = |m: Option<f64>| PartOutcome {
            pass: m.is_some_and(|m| m >= -slack),
            worst_margin: m,
        };
        let Some(ev) = turning else {
            return ParticleLemmaRecord {
                index,
                t0: None,
                radius_at_t0: None,
                parts: [
                    PartOutcome::failed_unevaluated(),
                    PartOutcome::failed_unevaluated(),
                    PartOutcome::failed_unevaluated(),
                    pass_slack(self.energy_lower),
                    pass_slack(self.energy_upper),
                ],
            };
        };
        self.check_on_interval(ev.time, ev.radius, 0.0);

        let strict = |m: Option<f64>| m.is_none_or(|m| m > 0.0);
        let part1 = PartOutcome {
            pass: ev.time > 0.0 && strict(self.before) && strict(self.after),
            worst_margin: match (self.before, self.after) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            },
        };

        let q = &self.quantities;
        let mut bracket = (ev.time - q.t0_lower) / self.r;
        if let TimeBound::Finite(up) = q.t0_upper {
            bracket = bracket.min((up - ev.time) / self.r);
        }
        let sandwich = ((ev.radius - q.r_minus) / self.r).min((q.r_plus - ev.radius) / self.r);

        ParticleLemmaRecord {
            index,
            t0: Some(ev.time),
            radius_at_t0: Some(ev.radius),
            parts: [
                part1,
                pass_slack(Some(bracket)),
                pass_slack(Some(sandwich)),
                pass_slack(self.energy_lower),
                pass_slack(self.energy_upper),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleLemmaRecord {
    pub index: usize,
    pub t0: Option<f64>,
    pub radius_at_t0: Option<f64>,
    /// Parts 1 through 5 in order.
    pub parts: [PartOutcome; 5],
}

impl ParticleLemmaRecord {
    pub fn all_pass(&self) -> bool {
        self.parts.iter().all(|p| p.pass)
    }
}

/// Batch form of [`Lemma1Monitor`] over stored samples.
pub fn check_lemma1(
    initial: (f64, f64, f64),
    mass: f64,
    samples: &[TrajectorySample],
    turning: Option<&TurningEvent>,
    slack: f64,
) -> Result<ParticleLemmaRecord> {
    let (r, w, l) = initial;
    let mut monitor = Lemma1Monitor::new(r, w, l, mass)?;
    for s in samples {
        monitor.observe(*s, turning);
    }
    Ok(monitor.finish(turning.map_or(0, |e| e.index), turning, slack))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PartAggregate {
    pub pass_count: usize,
    pub fail_count: usize,
    pub worst_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub slack: f64,
    pub parts: [PartAggregate; 5],
    pub records: Vec<ParticleLemmaRecord>,
}

impl LemmaReport {
    /// Merges per-particle records in index order.
    pub fn from_records(records: Vec<ParticleLemmaRecord>, slack: f64) -> Self {
        let mut parts = [PartAggregate::default(); 5];
        for rec in &records {
            for (agg, part) in parts.iter_mut().zip(&rec.parts) {
                if part.pass {
                    agg.pass_count += 1;
                } else {
                    agg.fail_count += 1;
                }
                if let Some(m) = part.worst_margin {
                    agg.worst_margin = Some(agg.worst_margin.map_or(m, |w: f64| w.min(m)));
                }
            }
        }
        Self {
            slack,
            parts,
            records,
        }
    }

    pub fn passed(&self) -> bool {
        self.parts.iter().all(|p| p.fail_count == 0)
    }

    pub fn particles_passing_all(&self) -> usize {
        self.records.iter().filter(|r| r.all_pass()).count()
    }

    pub fn to_json(&self, verbose: bool) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("slack".into(), serde_json::json!(self.slack));
        obj.insert("passed".into(), serde_json::json!(self.passed()));
        obj.insert("particles".into(), serde_json::json!(self.records.len()));
        for (k, agg) in self.parts.iter().enumerate() {
            obj.insert(format!("part{}", k + 1), serde_json::json!(agg));
        }
        if verbose {
            obj.insert("per_particle".into(), serde_json::json!(self.records));
        }
        serde_json::Value::Object(obj)
    }
}

/// Observer running one [`Lemma1Monitor`] per particle of an ensemble,
/// with `M` taken as the ensemble's total mass.
pub struct LemmaObserver {
    monitors: Vec<Option<Lemma1Monitor>>,
}

impl LemmaObserver {
    /// Particles with `w >= 0` or `ℓ = 0` at the start are outside the
    /// hypotheses and are skipped.
    pub fn new(initial: &Ensemble) -> Self {
        let mass = initial.total_mass();
        let monitors = initial
            .particles()
            .iter()
            .map(|p| {
                if p.ang_mom_sq > 0.0 {
                    Lemma1Monitor::new(p.radius, p.momentum, p.ang_mom_sq, mass).ok()
                } else {
                    None
                }
            })
            .collect();
        Self { monitors }
    }

    pub fn finish(self, turning: &[Option<TurningEvent>], slack: f64) -> LemmaReport {
        let records: Vec<ParticleLemmaRecord> = self
            .monitors
            .into_par_iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| m.finish(i, turning[i].as_ref(), slack)))
            .collect();
        LemmaReport::from_records(records, slack)
    }
}

impl Observer for LemmaObserver {
    fn observe(&mut self, view: &StepView<'_>) {
        let t = view.time();
        let ps = view.ensemble.particles();
        let turning = view.turning;
        self.monitors.par_iter_mut().enumerate().for_each(|(i, m)| {
            if let Some(m) = m {
                let p = &ps[i];
                m.observe(
                    TrajectorySample {
                        t,
                        radius: p.radius,
                        momentum: p.momentum,
                    },
                    turning[i].as_ref(),
                );
            }
        });
    }
}
