//! Thin-shell initial data and its deterministic quadrature sampling.
//!
//! The distribution is `H_ε(|x/ε² + a₀p|²) φ(|x|)`, optionally rescaled to a
//! prescribed total mass. In reduced coordinates its support is a thin shell
//! of half-width ε³ around `a₀` with radial momenta close to `-r/(ε²a₀)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::phase::{index_order_sum, Ensemble, Particle};

/// Polynomial bump `H(s) = c (1 - s)⁴` on `[0, 1]`, zero beyond.
///
/// `c` is fixed by `∫_{ℝ³} H(|u|²) du = 3/(4π)`; with
/// `∫₀¹ s²(1 - s²)⁴ ds = 128/3465` this gives `c = 10395 / (2048 π²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProfile {
    pub normalization: f64,
}

impl BumpProfile {
    pub fn value(&self, s: f64) -> f64 {
        if (0.0..=1.0).contains(&s) {
            let t = 1.0 - s;
            let t2 = t * t;
            self.normalization * t2 * t2
        } else {
            0.0
        }
    }
}

pub fn make_bump_profile() -> BumpProfile {
    BumpProfile {
        normalization: 10395.0 / (2048.0 * PI * PI),
    }
}

/// Inner plateau of the cutoff as a fraction of ε³.
pub const PLATEAU_FRACTION: f64 = 0.5;
/// Outer edge of the cutoff support as a fraction of ε³.
pub const SUPPORT_FRACTION: f64 = 1.0;

/// Parameters of the shell data. `target_mass == None` selects the raw
/// profile; `Some(M)` rescales it to total mass `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellDataSpec {
    a0: f64,
    epsilon: f64,
    target_mass: Option<f64>,
    bump: BumpProfile,
}

impl ShellDataSpec {
    pub fn new(a0: f64, epsilon: f64, target_mass: Option<f64>) -> Result<Self> {
        if !(a0 > 0.0) || !a0.is_finite() {
            return Err(domain(format!(
                "shell radius a0 must be positive, got {a0}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if epsilon.powi(3) >= a0 {
            return Err(domain("shell half-width eps^3 must be smaller than a0"));
        }
        if let Some(m) = target_mass {
            if !(m > 0.0) || !m.is_finite() {
                return Err(domain(format!("target mass must be positive, got {m}")));
            }
        }
        Ok(Self {
            a0,
            epsilon,
            target_mass,
            bump: make_bump_profile(),
        })
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn target_mass(&self) -> Option<f64> {
        self.target_mass
    }

    fn half_width(&self) -> f64 {
        self.epsilon.powi(3)
    }

    /// Smooth cutoff φ: zero outside `[a₀-ε³, a₀+ε³]`, one on
    /// `(a₀-ε³/2, a₀+ε³/2)`, quintic smoothstep in between.
    pub fn cutoff(&self, r: f64) -> f64 {
        cutoff_offset(r - self.a0, self.half_width())
    }

    /// `H_ε(q) = ε⁻³ H(q / ε²)`.
    pub fn scaled_bump(&self, q: f64) -> f64 {
        let e2 = self.epsilon * self.epsilon;
        self.bump.value(q / e2) / (e2 * self.epsilon)
    }

    /// Argument of `H_ε` in reduced coordinates:
    /// `(r/ε² + a₀w)² + ℓ(a₀/r)²`.
    pub fn support_argument(&self, r: f64, w: f64, l: f64) -> f64 {
        let radial = r / (self.epsilon * self.epsilon) + self.a0 * w;
        let ratio = self.a0 / r;
        radial * radial + l * ratio * ratio
    }

    fn raw_value(&self, r: f64, w: f64, l: f64) -> f64 {
        let q = self.support_argument(r, w, l);
        if q >= self.epsilon * self.epsilon {
            return 0.0;
        }
        let phi = self.cutoff(r);
        if phi == 0.0 {
            return 0.0;
        }
        self.scaled_bump(q) * phi
    }

    /// Total mass of the unscaled profile, `(3/a₀³) ∫ r² φ(r) dr`.
    pub fn raw_mass(&self) -> f64 {
        3.0 * radial_moment(self.a0, self.half_width()) / self.a0.powi(3)
    }

    /// Factor applied to the unscaled profile (1 for the raw variant).
    pub fn mass_scale(&self) -> f64 {
        match self.target_mass {
            None => 1.0,
            Some(m) => m / self.raw_mass(),
        }
    }

    /// Phase-space density at `(r, w, ℓ)`.
    pub fn f0_value(&self, r: f64, w: f64, l: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(domain(format!("radius must be positive, got {r}")));
        }
        if !(l >= 0.0) {
            return Err(domain(format!(
                "squared angular momentum must be >= 0, got {l}"
            )));
        }
        Ok(self.raw_value(r, w, l) * self.mass_scale())
    }

    /// Analytic initial charge density `ρ₀(r) = 3/(4πa₀³) φ(r)` (times the
    /// mass scale for the rescaled variant).
    pub fn initial_density_profile(&self, r: f64) -> f64 {
        3.0 / (4.0 * PI * self.a0.powi(3)) * self.cutoff(r) * self.mass_scale()
    }

    /// Analytic sup of the initial density.
    pub fn initial_density_sup(&self) -> f64 {
        3.0 / (4.0 * PI * self.a0.powi(3)) * self.mass_scale()
    }

    /// Box containing the support: open intervals in r, w and ℓ.
    pub fn support_box(&self) -> SupportBox {
        let h = self.half_width();
        let e = self.epsilon;
        let outer = (self.a0 + h) / self.a0;
        SupportBox {
            radius: (self.a0 - h, self.a0 + h),
            momentum: (
                -1.0 / (e * e) - 2.0 * e / self.a0,
                -1.0 / (e * e) + 2.0 * e / self.a0,
            ),
            ang_mom_sq: (0.0, outer * outer * e * e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBox {
    pub radius: (f64, f64),
    pub momentum: (f64, f64),
    pub ang_mom_sq: (f64, f64),
}

impl SupportBox {
    pub fn contains(&self, p: &Particle) -> bool {
        let inside = |x: f64, (lo, hi): (f64, f64)| x > lo && x < hi;
        inside(p.radius, self.radius)
            && inside(p.momentum, self.momentum)
            && inside(p.ang_mom_sq, self.ang_mom_sq)
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn cutoff_offset(s: f64, h: f64) -> f64 {
    let inner = PLATEAU_FRACTION * h;
    let outer = SUPPORT_FRACTION * h;
    let d = s.abs();
    if d >= outer {
        0.0
    } else if d <= inner {
        1.0
    } else {
        smoothstep((outer - d) / (outer - inner))
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// `∫ r² φ(r) dr` in the offset variable `s = r - a₀`; the bands are
/// degree-7 polynomials, integrated exactly by 5-point Gauss–Legendre.
fn radial_moment(a0: f64, h: f64) -> f64 {
    let inner = PLATEAU_FRACTION * h;
    let outer = SUPPORT_FRACTION * h;
    // plateau: ∫_{-i}^{i} (a0 + s)² ds
    let plateau = 2.0 * a0 * a0 * inner + 2.0 * inner.powi(3) / 3.0;
    let mut bands = 0.0;
    for (lo, hi) in [(-outer, -inner), (inner, outer)] {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (x, wt) in GAUSS5 {
            let s = mid + half * x;
            let r = a0 + s;
            bands += wt * half * r * r * cutoff_offset(s, h);
        }
    }
    plateau + bands
}

/// Cells per axis of the sampling grid.
///
/// The w-axis of each radial slab spans exactly the momenta compatible with
/// that slab's radius, and the ℓ-axis of each (r, w) column spans exactly
/// the admissible squared angular momenta, so every cell midpoint lies in
/// the support and strictly above ℓ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SamplingGrid {
    pub nr: usize,
    pub nw: usize,
    pub nl: usize,
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            nr: 32,
            nw: 64,
            nl: 32,
        }
    }
}

impl SamplingGrid {
    pub fn new(nr: usize, nw: usize, nl: usize) -> Result<Self> {
        if nr == 0 || nw == 0 || nl == 0 {
            return Err(domain("grid sizes must be positive"));
        }
        Ok(Self { nr, nw, nl })
    }

    pub fn refined(&self) -> Self {
        Self {
            nr: 2 * self.nr,
            nw: 2 * self.nw,
            nl: 2 * self.nl,
        }
    }

    pub fn cells(&self) -> usize {
        self.nr * self.nw * self.nl
    }
}

/// Iterated midpoint quadrature of `M = 4π² ∫∫∫ f₀ dℓ dw dr`: one particle
/// per nonempty cell, weight `4π² f₀ Δr Δw Δℓ`.
///
/// Cells are enumerated r-major, then w, then ℓ; particle indices follow
/// that order. For the rescaled variant the weights are normalised by their
/// own quadrature sum and the last weight absorbs the rounding residue, so
/// the index-order total equals the target mass exactly.
pub fn sample(spec: &ShellDataSpec, grid: &SamplingGrid) -> Result<Ensemble> {
    let SamplingGrid { nr, nw, nl } = *grid;
    if nr == 0 || nw == 0 || nl == 0 {
        return Err(domain("grid sizes must be positive"));
    }
    let a0 = spec.a0;
    let eps = spec.epsilon;
    let e2 = eps * eps;
    let h = spec.half_width();
    let dr = 2.0 * SUPPORT_FRACTION * h / nr as f64;
    let du = 2.0 / nw as f64;
    let dw = eps * du / a0;
    let four_pi_sq = 4.0 * PI * PI;

    let slabs: Vec<Vec<Particle>> = (0..nr)
        .into_par_iter()
        .map(|i| {
            let s = -SUPPORT_FRACTION * h + (i as f64 + 0.5) * dr;
            let r = a0 + s;
            let mut out = Vec::with_capacity(nw * nl);
            if cutoff_offset(s, h) == 0.0 {
                return out;
            }
            for j in 0..nw {
                let u = -1.0 + (j as f64 + 0.5) * du;
                let w = (-r / e2 + eps * u) / a0;
                let room = 1.0 - u * u;
                let l_extent = room * r * r * e2 / (a0 * a0);
                let dl = l_extent / nl as f64;
                for k in 0..nl {
                    let l = (k as f64 + 0.5) * dl;
                    let f = spec.raw_value(r, w, l);
                    if f > 0.0 {
                        out.push(Particle::new(r, w, l, four_pi_sq * f * dr * dw * dl));
                    }
                }
            }
            out
        })
        .collect();

    let mut particles: Vec<Particle> = slabs.into_iter().flatten().collect();
    if particles.is_empty() {
        return Err(Error::EmptySample);
    }

    if let Some(target) = spec.target_mass {
        let raw = index_order_sum(particles.iter().map(|p| p.weight));
        let scale = target / raw;
        for p in particles.iter_mut() {
            p.weight *= scale;
        }
        let n = particles.len();
        let head = index_order_sum(particles[..n - 1].iter().map(|p| p.weight));
        let last = target - head;
        if last > 0.0 {
            particles[n - 1].weight = last;
        }
    }

    Ensemble::new(particles, 0.0)
}
