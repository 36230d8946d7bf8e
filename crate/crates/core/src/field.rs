//! Enclosed mass and the radial field it generates.
//!
//! The discrete mass profile is a right-continuous step function built from
//! one sort of the particle radii and a sequential prefix sum in that order.

use crate::error::{domain, Result};
use crate::phase::{index_order_sum, Ensemble};

#[derive(Debug, Clone, PartialEq)]
pub struct MassProfile {
    /// Particle indices sorted by (radius, index).
    order: Vec<usize>,
    /// Radii in ascending order.
    radii: Vec<f64>,
    /// Inclusive prefix sums of weights in `order`.
    cumulative: Vec<f64>,
    /// Self-excluded enclosed mass, by particle index.
    enclosed: Vec<f64>,
    total: f64,
}

/// Sorts the particles by radius and accumulates their weights.
///
/// Ties are broken by particle index so the result depends only on the
/// ensemble contents. The last cumulative value is pinned to the ensemble's
/// total mass, and no prefix exceeds it, so `0 <= m(r) <= M` holds exactly.
pub fn build_mass_profile(e: &Ensemble) -> MassProfile {
    let ps = e.particles();
    let n = ps.len();
    let total = e.total_mass();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        ps[a]
            .radius
            .total_cmp(&ps[b].radius)
            .then_with(|| a.cmp(&b))
    });

    let radii: Vec<f64> = order.iter().map(|&i| ps[i].radius).collect();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &i in &order {
        acc += ps[i].weight;
        cumulative.push(acc.min(total));
    }
    if let Some(last) = cumulative.last_mut() {
        *last = total;
    }

    let mut enclosed = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && radii[end] == radii[start] {
            end += 1;
        }
        let before = if start == 0 {
            0.0
        } else {
            cumulative[start - 1]
        };
        if end - start == 1 {
            enclosed[order[start]] = before;
        } else {
            let group: f64 = order[start..end].iter().fold(0.0, |s, &i| s + ps[i].weight);
            for &i in &order[start..end] {
                enclosed[i] = before + 0.5 * (group - ps[i].weight);
            }
        }
        start = end;
    }

    MassProfile {
        order,
        radii,
        cumulative,
        enclosed,
        total,
    }
}

/// `Σ wᵢ²/(2Rᵢ)`, the electrostatic self-energy of the individual shells.
pub fn self_energy(e: &Ensemble) -> f64 {
    index_order_sum(
        e.particles()
            .iter()
            .map(|p| p.weight * p.weight / (2.0 * p.radius)),
    )
}

impl MassProfile {
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn sorted_radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn cumulative_masses(&self) -> &[f64] {
        &self.cumulative
    }

    /// Particle indices in ascending radius order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// m(r): total weight of particles with radius `<= r`.
    pub fn mass_at(&self, r: f64) -> f64 {
        let k = self.radii.partition_point(|&x| x <= r);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Mass strictly inside particle `i`, plus half the weight of other
    /// particles at exactly the same radius. Never includes the particle's
    /// own weight.
    pub fn enclosed_mass_at_particle(&self, i: usize) -> f64 {
        self.enclosed[i]
    }

    pub fn enclosed_masses(&self) -> &[f64] {
        &self.enclosed
    }

    /// |E(r)| = m(r) / r².
    pub fn field_magnitude(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(domain(format!(
                "field evaluated at non-positive radius {r}"
            )));
        }
        Ok(self.mass_at(r) / (r * r))
    }

    /// Electrostatic energy ½∫₀^∞ m(r)²/r² dr of the piecewise-constant profile.
    pub fn field_energy(&self) -> f64 {
        let n = self.radii.len();
        if n == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for j in 0..n - 1 {
            let m = self.cumulative[j];
            if m > 0.0 {
                acc += m * m * (1.0 / self.radii[j] - 1.0 / self.radii[j + 1]);
            }
        }
        0.5 * acc + 0.5 * self.total * self.total / self.radii[n - 1]
    }

    /// Field energy without the shells' self-energy: `½∫m²/r² - Σ wᵢ²/(2Rᵢ)`.
    ///
    /// This is the mutual interaction energy `Σ_{i<j} wᵢwⱼ / max(Rᵢ, Rⱼ)`,
    /// the potential conserved together with `Σ wᵢγᵢ` by self-force-free
    /// dynamics.
    pub fn interaction_energy(&self, e: &Ensemble) -> f64 {
        self.field_energy() - self_energy(e)
    }

    /// Exact sup over r > 0 of m(r)/r²: the maximum sits at the right
    /// limit of one of the jumps.
    pub fn sup_field(&self) -> f64 {
        self.radii
            .iter()
            .zip(&self.cumulative)
            .fold(0.0, |best: f64, (&r, &m)| best.max(m / (r * r)))
    }

    pub fn median_radius(&self) -> f64 {
        self.radii[self.radii.len() / 2]
    }
}
