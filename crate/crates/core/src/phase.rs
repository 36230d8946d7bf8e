//! Reduced phase-space coordinates and the weighted particle ensemble.
//!
//! Units are dimensionless with particle mass, charge and the speed of light
//! set to one. A particle is one sample of the distribution in the reduced
//! coordinates (radius, radial momentum, squared angular momentum).

use crate::error::{domain, Error, Result};

/// One characteristic sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Radial position, `> 0`.
    pub radius: f64,
    /// Radial momentum `x·p / |x|`.
    pub momentum: f64,
    /// Squared angular momentum `|x × p|²`, conserved along the motion.
    pub ang_mom_sq: f64,
    /// Contribution to the total mass, conserved along the motion.
    pub weight: f64,
}

impl Particle {
    pub fn new(radius: f64, momentum: f64, ang_mom_sq: f64, weight: f64) -> Self {
        Self {
            radius,
            momentum,
            ang_mom_sq,
            weight,
        }
    }

    pub fn kinetic_energy(&self) -> Result<f64> {
        kinetic_energy(self.radius, self.momentum, self.ang_mom_sq)
    }

    pub fn speed(&self) -> Result<f64> {
        speed(self.radius, self.momentum, self.ang_mom_sq)
    }
}

/// `sqrt(1 + w² + ℓ/r²)`, the relativistic energy of a unit-mass particle.
pub fn kinetic_energy(radius: f64, momentum: f64, ang_mom_sq: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(domain(format!("radius must be positive, got {radius}")));
    }
    Ok(lorentz(radius, momentum, ang_mom_sq))
}

/// Magnitude of the relativistic velocity `|p| / sqrt(1 + |p|²)`.
pub fn speed(radius: f64, momentum: f64, ang_mom_sq: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(domain(format!("radius must be positive, got {radius}")));
    }
    let p_sq = momentum * momentum + ang_mom_sq / (radius * radius);
    Ok(p_sq.sqrt() / (1.0 + p_sq).sqrt())
}

#[inline]
pub(crate) fn lorentz(radius: f64, momentum: f64, ang_mom_sq: f64) -> f64 {
    (1.0 + momentum * momentum + ang_mom_sq / (radius * radius)).sqrt()
}

/// Ordered particle collection. Particle indices are positions in
/// `particles` and never change during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Vec<Particle>,
    time: f64,
    total_mass: f64,
}

impl Ensemble {
    /// Builds an ensemble; the total mass is the index-order sum of weights.
    pub fn new(particles: Vec<Particle>, time: f64) -> Result<Self> {
        if particles.is_empty() {
            return Err(domain("ensemble must contain at least one particle"));
        }
        if !(time >= 0.0) || !time.is_finite() {
            return Err(domain(format!("ensemble time must be >= 0, got {time}")));
        }
        for (i, p) in particles.iter().enumerate() {
            let finite = p.radius.is_finite()
                && p.momentum.is_finite()
                && p.ang_mom_sq.is_finite()
                && p.weight.is_finite();
            if !finite || !(p.radius > 0.0) || !(p.ang_mom_sq >= 0.0) || !(p.weight > 0.0) {
                return Err(domain(format!(
                    "particle {i} invalid: R={}, W={}, L={}, weight={}",
                    p.radius, p.momentum, p.ang_mom_sq, p.weight
                )));
            }
        }
        let total_mass = index_order_sum(particles.iter().map(|p| p.weight));
        Ok(Self {
            particles,
            time,
            total_mass,
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Replaces phase-space positions in place, keeping `ang_mom_sq` and
    /// `weight` untouched so both stay bit-identical across a run.
    pub(crate) fn advance(&mut self, time: f64, states: &[(f64, f64)]) {
        debug_assert_eq!(states.len(), self.particles.len());
        for (p, &(r, w)) in self.particles.iter_mut().zip(states) {
            p.radius = r;
            p.momentum = w;
        }
        self.time = time;
    }

    pub(crate) fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    /// Σ weight·γ, summed in index order.
    pub fn kinetic_total(&self) -> f64 {
        index_order_sum(
            self.particles
                .iter()
                .map(|p| p.weight * lorentz(p.radius, p.momentum, p.ang_mom_sq)),
        )
    }

    /// Smallest and largest particle radius.
    pub fn radius_range(&self) -> (f64, f64) {
        self.particles
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.radius), hi.max(p.radius))
            })
    }
}

impl TryFrom<Vec<Particle>> for Ensemble {
    type Error = Error;

    fn try_from(particles: Vec<Particle>) -> Result<Self> {
        Ensemble::new(particles, 0.0)
    }
}

/// Plain left-to-right summation; the fixed order keeps reductions
/// bit-reproducible.
pub(crate) fn index_order_sum(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |acc, v| acc + v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn kinetic_energy_examples() {
        assert_eq!(kinetic_energy(1.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(close(
            kinetic_energy(1.0, -1.0, 1.0).unwrap(),
            3f64.sqrt(),
            1e-15
        ));
        assert!(close(
            kinetic_energy(2.0, -3.0, 4.0).unwrap(),
            11f64.sqrt(),
            1e-15
        ));
        assert!(kinetic_energy(0.0, 1.0, 1.0).is_err());
        assert!(kinetic_energy(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn speed_examples() {
        assert_eq!(speed(1.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(close(speed(1.0, -1.0, 0.0).unwrap(), 0.5f64.sqrt(), 1e-15));
        assert!(speed(1e-3, -1e4, 1.0).unwrap() < 1.0);
        assert!(speed(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ensemble_total_is_index_order_sum() {
        let ps = vec![
            Particle::new(1.0, 0.0, 0.0, 0.1),
            Particle::new(2.0, 0.0, 0.0, 0.2),
            Particle::new(3.0, 0.0, 0.0, 0.3),
        ];
        let e = Ensemble::new(ps, 0.0).unwrap();
        assert_eq!(e.total_mass(), (0.0 + 0.1) + 0.2 + 0.3);
        assert_eq!(e.radius_range(), (1.0, 3.0));
    }

    #[test]
    fn ensemble_rejects_bad_particles() {
        assert!(Ensemble::new(vec![], 0.0).is_err());
        assert!(Ensemble::new(vec![Particle::new(0.0, 0.0, 0.0, 1.0)], 0.0).is_err());
        assert!(Ensemble::new(vec![Particle::new(1.0, 0.0, -1.0, 1.0)], 0.0).is_err());
        assert!(Ensemble::new(vec![Particle::new(1.0, 0.0, 0.0, 0.0)], 0.0).is_err());
        assert!(Ensemble::new(vec![Particle::new(1.0, f64::NAN, 0.0, 1.0)], 0.0).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn energy_and_speed_bounds(r in 1e-3f64..10.0, w in -1e3f64..1e3, l in 0f64..10.0) {
                let g = kinetic_energy(r, w, l).unwrap();
                prop_assert!(g >= 1.0);
                prop_assert!(g >= (1.0 + l / (r * r)).sqrt() * (1.0 - 1e-15));
                let v = speed(r, w, l).unwrap();
                prop_assert!((0.0..1.0).contains(&v));
            }
        }
    }
}
