use proptest::prelude::*;

use shellcollapse::io::{read_ensemble_csv, to_json_string, write_ensemble_csv, write_series_csv};
use shellcollapse::{
    run, run_scenario_with, sample, Ensemble, FieldModel, Particle, SamplingGrid, ScenarioOptions,
    Setup, StepperConfig, Theorem1Setup, Theorem2Setup,
};

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-300f64..1e-200, 1e-8f64..1e8, 1e200f64..1e300]
}

fn particle() -> impl Strategy<Value = Particle> {
    (
        positive(),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        prop_oneof![Just(0.0), positive()],
        positive(),
    )
        .prop_map(|(r, w, l, m)| Particle::new(r, w, l, m))
}

proptest! {
    #[test]
    fn ensemble_csv_round_trip_is_bit_exact(
        ps in prop::collection::vec(particle(), 1..40),
        t in 0.0f64..1e6,
    ) {
        let e = Ensemble::new(ps, t).unwrap();
        let mut buf = Vec::new();
        write_ensemble_csv(&mut buf, &e, &[("k".into(), "v".into())]).unwrap();
        let back = read_ensemble_csv(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.time().to_bits(), e.time().to_bits());
        for (a, b) in back.particles().iter().zip(e.particles()) {
            prop_assert_eq!(a.radius.to_bits(), b.radius.to_bits());
            prop_assert_eq!(a.momentum.to_bits(), b.momentum.to_bits());
            prop_assert_eq!(a.ang_mom_sq.to_bits(), b.ang_mom_sq.to_bits());
            prop_assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
        let mut again = Vec::new();
        write_ensemble_csv(&mut again, &back, &[("k".into(), "v".into())]).unwrap();
        prop_assert_eq!(again, buf);
    }
}

#[test]
fn sampled_ensemble_survives_export_and_simulation_resume() {
    let setup = Theorem2Setup::at_epsilon(1.0, 20.0, 1.0, 0.01).unwrap();
    let spec = Setup::Theorem2(setup).data_spec().unwrap();
    let e = sample(&spec, &SamplingGrid::new(4, 4, 4).unwrap()).unwrap();
    let cfg = StepperConfig::default();

    let direct = run(e.clone(), 0.6, &cfg, FieldModel::SelfConsistent, &mut []).unwrap();
    let half = run(e, 0.3, &cfg, FieldModel::SelfConsistent, &mut []).unwrap();
    let mut buf = Vec::new();
    write_ensemble_csv(&mut buf, &half.ensemble, &[]).unwrap();
    let resumed_from = read_ensemble_csv(&mut buf.as_slice()).unwrap();
    assert_eq!(resumed_from, half.ensemble);
    let resumed = run(resumed_from, 0.6, &cfg, FieldModel::SelfConsistent, &mut []).unwrap();
    for (a, b) in direct
        .ensemble
        .particles()
        .iter()
        .zip(resumed.ensemble.particles())
    {
        assert!((a.radius - b.radius).abs() <= 1e-8 * a.radius);
    }
}

fn coarse_options() -> ScenarioOptions {
    ScenarioOptions {
        grid: SamplingGrid::new(4, 8, 4).unwrap(),
        ..ScenarioOptions::default()
    }
}

#[test]
fn coarse_theorem1_run_meets_the_geometric_claims() {
    let setup = Setup::Theorem1(Theorem1Setup::at_epsilon(32.0, 0.5, 0.05).unwrap());
    let out = run_scenario_with(&setup, &coarse_options()).unwrap();
    let r = &out.report;
    for name in [
        "initial_density_sup",
        "initial_field_sup",
        "sampled_mass_lower",
        "sampled_mass_upper",
        "particles_outside_support",
        "max_radius_at_target",
        "unturned_particles",
        "min_turning_time",
        "lemma1_failing_particles",
        "mass_changes",
        "angular_momentum_changes",
        "max_speed",
    ] {
        let c = r.check(name).unwrap_or_else(|| panic!("missing {name}"));
        assert!(c.pass, "{c:?}");
    }
    assert_eq!(out.at_target.time(), setup.time());
    assert!(out.at_target.radius_range().1 <= 0.05 * 1.1);
    assert!(out
        .turning
        .iter()
        .all(|t| t.is_some_and(|e| e.time > setup.time())));
    assert_eq!(r.diagnostics.particles, 128);
}

#[test]
fn coarse_theorem2_run_certifies_the_field_and_decays() {
    let setup = Setup::Theorem2(Theorem2Setup::at_epsilon(1.0, 20.0, 1.0, 0.01).unwrap());
    let opts = ScenarioOptions {
        extend_to: Some(5.0),
        ..coarse_options()
    };
    let out = run_scenario_with(&setup, &opts).unwrap();
    let r = &out.report;
    assert_eq!(out.initial.total_mass(), 1.0);
    for name in [
        "total_mass_exact",
        "max_radius_at_target",
        "certified_field_vs_prediction",
    ] {
        assert!(r.check(name).unwrap().pass, "{:?}", r.check(name));
    }
    let decay = r.diagnostics.decay.as_ref().unwrap();
    assert!(decay.ratio < 0.01);
    assert!(decay.rho_exponent.unwrap() < 0.0);
    assert_eq!(r.diagnostics.end_time, 5.0);

    let json = to_json_string(r).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in [
        "generator",
        "scenario",
        "inputs",
        "resolved_parameters",
        "side_conditions",
        "initial_checks",
        "final_checks",
        "lemma1_aggregate",
        "diagnostics",
        "passed",
    ] {
        assert!(v.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(v["lemma1_aggregate"]["particles"], 128);
    assert!(v["lemma1_aggregate"].get("per_particle").is_none());

    let mut csv = Vec::new();
    write_series_csv(&mut csv, &out.series, &opts.config_pairs(&setup)).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), out.series.rows().len() + 2);
}

#[test]
fn verbose_reports_carry_per_particle_records() {
    let setup = Setup::Theorem2(Theorem2Setup::at_epsilon(1.0, 20.0, 1.0, 0.01).unwrap());
    let opts = ScenarioOptions {
        grid: SamplingGrid::new(2, 2, 2).unwrap(),
        verbose: true,
        ..ScenarioOptions::default()
    };
    let out = run_scenario_with(&setup, &opts).unwrap();
    let per = out.report.lemma1_aggregate["per_particle"]
        .as_array()
        .unwrap();
    assert_eq!(per.len(), out.initial.len());
}
