use proptest::prelude::*;

use shellcollapse::diagnostics::{ConservationMonitor, InboundEnergyMonitor};
use shellcollapse::dynamics::StepView;
use shellcollapse::{
    lemma1_quantities, run, Ensemble, FieldCoupling, FieldModel, Integrator, Observer, Particle,
    StepperConfig,
};

fn particle() -> impl Strategy<Value = Particle> {
    (0.2f64..2.0, -4.0f64..-0.1, 1e-3f64..1.0, 1e-3f64..0.2)
        .prop_map(|(r, w, l, m)| Particle::new(r, w, l, m))
}

fn ensemble() -> impl Strategy<Value = Ensemble> {
    prop::collection::vec(particle(), 1..12).prop_map(|ps| Ensemble::new(ps, 0.0).unwrap())
}

fn coupling() -> impl Strategy<Value = FieldCoupling> {
    prop_oneof![Just(FieldCoupling::Frozen), Just(FieldCoupling::Averaged)]
}

/// Records the sign structure of every particle along a run.
#[derive(Default)]
struct SignWatch {
    previous: Option<Vec<f64>>,
    inward_while_inbound: bool,
    outward_to_inward: usize,
}

impl Observer for SignWatch {
    fn observe(&mut self, view: &StepView<'_>) {
        let ps = view.ensemble.particles();
        for p in ps {
            let g = (1.0 + p.momentum * p.momentum + p.ang_mom_sq / (p.radius * p.radius)).sqrt();
            if p.momentum <= 0.0 && p.momentum / g > 0.0 {
                self.inward_while_inbound = true;
            }
        }
        let now: Vec<f64> = ps.iter().map(|p| p.momentum).collect();
        if let Some(prev) = &self.previous {
            self.outward_to_inward += prev
                .iter()
                .zip(&now)
                .filter(|(a, b)| **a > 0.0 && **b < 0.0)
                .count();
        }
        self.previous = Some(now);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn self_consistent_runs_respect_the_invariants(e in ensemble(), coupling in coupling()) {
        let cfg = StepperConfig { coupling, ..StepperConfig::default() };
        let mut conservation = ConservationMonitor::new(&e);
        let mut inbound = InboundEnergyMonitor::new(&e);
        let mut signs = SignWatch::default();
        let out = run(
            e.clone(),
            3.0,
            &cfg,
            FieldModel::SelfConsistent,
            &mut [&mut conservation, &mut inbound, &mut signs],
        )
        .unwrap();

        prop_assert_eq!(out.ensemble.time(), 3.0);
        prop_assert_eq!(conservation.mass_violations(), 0);
        prop_assert_eq!(conservation.ang_mom_violations(), 0);
        prop_assert!(conservation.max_speed() < 1.0);
        prop_assert!(inbound.max_increase() <= 1e-8);
        prop_assert!(!signs.inward_while_inbound);
        prop_assert_eq!(signs.outward_to_inward, 0);
        for (p0, p1) in e.particles().iter().zip(out.ensemble.particles()) {
            prop_assert_eq!(p0.ang_mom_sq.to_bits(), p1.ang_mom_sq.to_bits());
            prop_assert_eq!(p0.weight.to_bits(), p1.weight.to_bits());
        }

        let rows = out.series.rows();
        prop_assert_eq!(rows.len(), out.accepted_steps + 1);
        for pair in rows.windows(2) {
            prop_assert!(pair[0].t < pair[1].t);
        }
        for r in rows {
            prop_assert!(r.r_min <= r.r_max);
            prop_assert_eq!(r.total_energy, r.kinetic + r.field_energy);
        }
        // Shells passing each other make the force jump inside a step, so
        // sparse ensembles only conserve energy to the splitting accuracy.
        prop_assert!(conservation.interaction_energy_drift() < 1e-2);
    }

    #[test]
    fn turning_times_respect_the_bracket_with_interaction(e in ensemble()) {
        let mass = e.total_mass();
        let mut integ = Integrator::new(e.clone(), StepperConfig::default(), FieldModel::SelfConsistent)
            .unwrap();
        integ.advance_until(1e3, &mut [], |i| i.all_turned()).unwrap();
        for (p, ev) in e.particles().iter().zip(integ.turning_events()) {
            let q = lemma1_quantities(p.radius, p.momentum, p.ang_mom_sq, mass).unwrap();
            let ev = ev.expect("every particle turns");
            let t_up = q.t0_upper.value().unwrap();
            let tol = 1e-4 * p.radius;
            prop_assert!(ev.time >= q.t0_lower - tol && ev.time <= t_up + tol);
            prop_assert!(ev.radius >= q.r_minus * (1.0 - 1e-4) && ev.radius <= q.r_plus * (1.0 + 1e-4));
        }
    }

    #[test]
    fn runs_are_bitwise_reproducible(e in ensemble(), coupling in coupling()) {
        let cfg = StepperConfig { coupling, ..StepperConfig::default() };
        let a = run(e.clone(), 1.5, &cfg, FieldModel::SelfConsistent, &mut []).unwrap();
        let b = run(e, 1.5, &cfg, FieldModel::SelfConsistent, &mut []).unwrap();
        prop_assert_eq!(a.series.rows(), b.series.rows());
        prop_assert_eq!(a.ensemble, b.ensemble);
        prop_assert_eq!(a.turning, b.turning);
    }
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let particles: Vec<Particle> = (0..2000)
        .map(|i| {
            let s = i as f64 / 2000.0;
            Particle::new(1.0 + 0.01 * s, -2.0 - s, 0.01 + 0.1 * s, 1e-4 * (1.0 + s))
        })
        .collect();
    let e = Ensemble::new(particles, 0.0).unwrap();
    let go = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run(
                    e.clone(),
                    1.0,
                    &StepperConfig::default(),
                    FieldModel::SelfConsistent,
                    &mut [],
                )
                .unwrap()
            })
    };
    let one = go(1);
    let four = go(4);
    assert_eq!(one.series.rows(), four.series.rows());
    assert_eq!(one.ensemble, four.ensemble);
}

#[test]
fn radial_particles_are_frozen_at_the_origin() {
    let e = Ensemble::new(
        vec![
            Particle::new(1.0, -1.0, 0.0, 0.5),
            Particle::new(2.0, -1.0, 0.5, 0.5),
        ],
        0.0,
    )
    .unwrap();
    let out = run(
        e,
        3.0,
        &StepperConfig::default(),
        FieldModel::Prescribed(0.0),
        &mut [],
    )
    .unwrap();
    let t = out.origin[0]
        .expect("radial particle reaches the origin")
        .time;
    assert!((t - 2f64.sqrt()).abs() < 1e-6, "{t}");
    assert!(out.origin[1].is_none());
    assert!(out.turning[1].is_some());
}
