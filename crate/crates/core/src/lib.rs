//! Dynamic pricing of competing EV charging-station alliances.
//!
//! The crate models one pricing round: EVs choose among stations (and a
//! delay option) with bounded rationality, alliances compute expected
//! profits under perceived time-sensitivity distributions, and a two-stage
//! evolutionary game over sampled price strategies yields near-equilibrium
//! price vectors, evaluated by a sampled no-regret index.
//!
//! Module map:
//! - [`domain`]: shared data types and scenario validation.
//! - [`travel`]: driving-time providers and station waiting time.
//! - [`choice`]: the EV decision model (costs, value function, Logit).
//! - [`payoff`]: alliance profit expectation and demand-response terms.
//! - [`game`]: strategy sets, replicator dynamics, two-stage solve, NIS.
//! - [`scenario`]: generation, JSON i/o, and the canonical base case.

pub mod choice;
pub mod domain;
pub mod game;
pub mod payoff;
pub mod scenario;
mod stats;
pub mod travel;

pub use domain::{
    validate_scenario, Alliance, DrContract, EvRequest, GeoPoint, MarketConfig, Scenario,
    Station, ThetaBelief,
};
pub use game::{solve_two_stage, NisReport, SolverConfig, TwoStageSolution};
pub use payoff::{discretize_theta, Evaluator, PriceVector, ThetaDiscretization};
pub use scenario::{build_base_case, generate, load_scenario, save_scenario, GeneratorConfig};
pub use travel::TravelProvider;
