//! Particle simulation of the spherically symmetric relativistic
//! Vlasov–Poisson system with repulsive interaction, specialised to thin
//! shells of fast inbound particles, together with closed-form bounds on
//! the characteristics and drivers that check them along a run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod initial_data;
pub mod io;
pub mod phase;
pub mod scenarios;

pub use bounds::{
    check_lemma1, energy_upper_envelope, lemma1_quantities, lemma3_bounds, Lemma1Monitor,
    Lemma1Quantities, LemmaObserver, LemmaReport, TimeBound, TrajectorySample,
};
pub use diagnostics::{
    decay_fit, density_ball_average, sup_field, sup_rho_estimate, DecayFit, SeriesRow, TimeSeries,
};
pub use dynamics::{
    rhs, run, step, FieldCoupling, FieldModel, Integrator, Observer, RunOutput, StepView,
    StepperConfig, TurningEvent,
};
pub use error::{Error, Result};
pub use field::{build_mass_profile, MassProfile};
pub use initial_data::{make_bump_profile, sample, SamplingGrid, ShellDataSpec};
pub use phase::{kinetic_energy, speed, Ensemble, Particle};
pub use scenarios::{
    plan_theorem1, plan_theorem2, run_scenario, run_scenario_with, ScenarioOptions,
    ScenarioOutcome, ScenarioReport, Setup, Theorem1Setup, Theorem2Setup,
};
