//! Density and field estimators, per-step time series, and the late-time
//! decay fit.
//!
//! Density estimates are built to certify lower bounds: the ball average
//! `m(B) / (4πB³/3)` never exceeds the true supremum of a density whose
//! mass inside `B` is `m(B)`. The shell histogram is advisory.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dynamics::{Observer, StepView};
use crate::error::{domain, Error, Result};
use crate::field::{build_mass_profile, MassProfile};
use crate::phase::{index_order_sum, lorentz, Ensemble};

/// Exact sup over r of m(r)/r² for the discrete profile.
pub fn sup_field(profile: &MassProfile) -> f64 {
    profile.sup_field()
}

/// Mass inside radius `b` divided by the ball volume.
pub fn density_ball_average(e: &Ensemble, b: f64) -> Result<f64> {
    ball_average(&build_mass_profile(e), b)
}

pub fn ball_average(profile: &MassProfile, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(domain(format!("ball radius must be positive, got {b}")));
    }
    Ok(profile.mass_at(b) / (4.0 / 3.0 * PI * b * b * b))
}

/// Shell-histogram estimate of sup ρ, combined with ball averages at
/// `r_max`, `2 r_max` and the median radius.
pub fn sup_rho_estimate(e: &Ensemble) -> f64 {
    sup_rho_estimate_with(e, &build_mass_profile(e))
}

pub fn sup_rho_estimate_with(e: &Ensemble, profile: &MassProfile) -> f64 {
    let radii = profile.sorted_radii();
    let n = radii.len();
    let r_min = radii[0];
    let r_max = radii[n - 1];
    let mut best: f64 = 0.0;

    if r_max > r_min {
        let k = ((n as f64).sqrt().ceil() as usize).max(16);
        let width = (r_max - r_min) / k as f64;
        let mut mass = vec![0.0; k];
        let ps = e.particles();
        for &i in profile.order() {
            let p = &ps[i];
            let bin = (((p.radius - r_min) / width) as usize).min(k - 1);
            mass[bin] += p.weight;
        }
        for (j, m) in mass.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let a = r_min + j as f64 * width;
            let b = if j + 1 == k { r_max } else { a + width };
            let volume = 4.0 / 3.0 * PI * (b - a) * (b * b + a * b + a * a);
            best = best.max(m / volume);
        }
    }

    for b in [r_max, 2.0 * r_max, profile.median_radius()] {
        if let Ok(v) = ball_average(profile, b) {
            best = best.max(v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub sup_rho: f64,
    pub sup_field: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub kinetic: f64,
    pub field_energy: f64,
    pub total_energy: f64,
}

impl SeriesRow {
    pub fn measure(e: &Ensemble, profile: &MassProfile) -> Self {
        let (r_min, r_max) = e.radius_range();
        let kinetic = e.kinetic_total();
        let field_energy = profile.field_energy();
        Self {
            t: e.time(),
            sup_rho: sup_rho_estimate_with(e, profile),
            sup_field: profile.sup_field(),
            r_min,
            r_max,
            kinetic,
            field_energy,
            total_energy: kinetic + field_energy,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    rows: Vec<SeriesRow>,
}

impl TimeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[SeriesRow] {
        &self.rows
    }

    /// Appends a row; times must be strictly increasing.
    pub fn push(&mut self, row: SeriesRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(domain(format!(
                    "time series rows must be strictly increasing ({} after {})",
                    row.t, last.t
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// Row whose time is closest to `t`.
    pub fn nearest(&self, t: f64) -> Option<&SeriesRow> {
        self.rows
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// Largest relative deviation of the total energy from its first value.
    pub fn energy_drift(&self) -> f64 {
        let Some(first) = self.rows.first() else {
            return 0.0;
        };
        let e0 = first.total_energy;
        self.rows
            .iter()
            .map(|r| ((r.total_energy - e0) / e0).abs())
            .fold(0.0, f64::max)
    }
}

/// Observer that records one [`SeriesRow`] per notification.
#[derive(Debug, Default)]
pub struct TimeSeriesRecorder {
    series: TimeSeries,
}

impl TimeSeriesRecorder {
    pub fn into_series(self) -> TimeSeries {
        self.series
    }

    pub fn series(&self) -> &TimeSeries {
        &self.series
    }
}

impl Observer for TimeSeriesRecorder {
    fn observe(&mut self, view: &StepView<'_>) {
        let row = SeriesRow::measure(view.ensemble, view.profile);
        // a repeated notification at the same time carries no new information
        if self.series.rows.last().is_some_and(|r| r.t >= row.t) {
            return;
        }
        self.series.rows.push(row);
    }
}

/// Tracks quantities the dynamics must preserve: the total weight and every
/// `ℓ` bit for bit, and a particle speed strictly below one.
#[derive(Debug, Clone)]
pub struct ConservationMonitor {
    mass_bits: u64,
    ang_mom_bits: Vec<u64>,
    mass_violations: usize,
    ang_mom_violations: usize,
    max_speed: f64,
    observations: usize,
    /// Initial `Σwγ + ½∫m²/r²` and `Σwγ + interaction energy`.
    reference: Option<(f64, f64)>,
    energy_drift: f64,
    interaction_drift: f64,
}

impl ConservationMonitor {
    pub fn new(initial: &Ensemble) -> Self {
        Self {
            mass_bits: index_order_sum(initial.particles().iter().map(|p| p.weight)).to_bits(),
            ang_mom_bits: initial
                .particles()
                .iter()
                .map(|p| p.ang_mom_sq.to_bits())
                .collect(),
            mass_violations: 0,
            ang_mom_violations: 0,
            max_speed: 0.0,
            observations: 0,
            reference: None,
            energy_drift: 0.0,
            interaction_drift: 0.0,
        }
    }

    /// Observations at which the recomputed total weight changed.
    pub fn mass_violations(&self) -> usize {
        self.mass_violations
    }

    /// Particle observations at which `ℓ` changed.
    pub fn ang_mom_violations(&self) -> usize {
        self.ang_mom_violations
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Largest relative change of `Σwγ + ½∫m²/r²`.
    pub fn energy_drift(&self) -> f64 {
        self.energy_drift
    }

    /// Largest relative change of `Σwγ` plus the mutual interaction energy,
    /// which excludes the shells' self-energy.
    pub fn interaction_energy_drift(&self) -> f64 {
        self.interaction_drift
    }
}

impl Observer for ConservationMonitor {
    fn observe(&mut self, view: &StepView<'_>) {
        let ps = view.ensemble.particles();
        if index_order_sum(ps.iter().map(|p| p.weight)).to_bits() != self.mass_bits {
            self.mass_violations += 1;
        }
        let bits = &self.ang_mom_bits;
        let (changed, fastest) = ps
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let speed = lorentz_speed(p.radius, p.momentum, p.ang_mom_sq);
                (usize::from(p.ang_mom_sq.to_bits() != bits[i]), speed)
            })
            .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
        self.ang_mom_violations += changed;
        self.max_speed = self.max_speed.max(fastest);
        self.observations += 1;

        let kinetic = view.ensemble.kinetic_total();
        let total = kinetic + view.profile.field_energy();
        let interaction = kinetic + view.profile.interaction_energy(view.ensemble);
        let (t0, i0) = *self.reference.get_or_insert((total, interaction));
        self.energy_drift = self.energy_drift.max(((total - t0) / t0).abs());
        self.interaction_drift = self.interaction_drift.max(((interaction - i0) / i0).abs());
    }
}

fn lorentz_speed(r: f64, w: f64, l: f64) -> f64 {
    let p_sq = w * w + l / (r * r);
    (p_sq / (1.0 + p_sq)).sqrt()
}

/// Largest step-to-step increase of a particle's `γ` while its radial
/// momentum is still non-positive and it has not yet turned.
#[derive(Debug, Clone)]
pub struct InboundEnergyMonitor {
    previous: Vec<(f64, f64)>,
    max_increase: f64,
    max_relative_increase: f64,
}

impl InboundEnergyMonitor {
    pub fn new(initial: &Ensemble) -> Self {
        Self {
            previous: initial
                .particles()
                .iter()
                .map(|p| (lorentz(p.radius, p.momentum, p.ang_mom_sq), p.momentum))
                .collect(),
            max_increase: 0.0,
            max_relative_increase: 0.0,
        }
    }

    /// Largest absolute increase of `γ` between consecutive observations.
    pub fn max_increase(&self) -> f64 {
        self.max_increase
    }

    pub fn max_relative_increase(&self) -> f64 {
        self.max_relative_increase
    }
}

impl Observer for InboundEnergyMonitor {
    fn observe(&mut self, view: &StepView<'_>) {
        let ps = view.ensemble.particles();
        let turning = view.turning;
        let (abs, rel) = self
            .previous
            .par_iter_mut()
            .enumerate()
            .map(|(i, prev)| {
                let p = &ps[i];
                let gamma = lorentz(p.radius, p.momentum, p.ang_mom_sq);
                let (g0, w0) = *prev;
                *prev = (gamma, p.momentum);
                if w0 <= 0.0 && p.momentum <= 0.0 && turning[i].is_none() {
                    let inc = gamma - g0;
                    (inc, inc / g0)
                } else {
                    (0.0, 0.0)
                }
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        self.max_increase = self.max_increase.max(abs);
        self.max_relative_increase = self.max_relative_increase.max(rel);
    }
}

/// Fitted log-log slopes of sup ρ and sup |E| against t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rho_exponent: f64,
    pub field_exponent: f64,
    pub rows_used: usize,
}

/// Least-squares slopes of `log sup_rho` and `log sup_field` against
/// `log t` over rows with `t ∈ [t_start, t_end]`.
pub fn decay_fit(series: &TimeSeries, t_start: f64, t_end: f64) -> Result<DecayFit> {
    if !(t_start > 0.0 && t_end > t_start) {
        return Err(domain("decay fit needs 0 < t_start < t_end"));
    }
    let rows: Vec<&SeriesRow> = series
        .rows
        .iter()
        .filter(|r| r.t >= t_start && r.t <= t_end && r.sup_rho > 0.0 && r.sup_field > 0.0)
        .collect();
    if rows.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 10 rows in [{t_start}, {t_end}], found {}",
            rows.len()
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let rho: Vec<f64> = rows.iter().map(|r| r.sup_rho.ln()).collect();
    let field: Vec<f64> = rows.iter().map(|r| r.sup_field.ln()).collect();
    Ok(DecayFit {
        rho_exponent: slope(&xs, &rho),
        field_exponent: slope(&xs, &field),
        rows_used: rows.len(),
    })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
