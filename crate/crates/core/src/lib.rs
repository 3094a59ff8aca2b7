//! Free time minimizers of the Newtonian N-body problem by direct methods.
//!
//! The crate computes approximate minimizers of the action of `L + h`, where
//! `L = T + U` is the N-body Lagrangian with the positive force function `U`
//! and `h ≥ 0` is an energy level, and checks their structure:
//!
//! * [`system`]: mass systems, configurations, `U`, cluster decompositions.
//! * [`action`]: the discrete action, its cluster splitting, the interaction
//!   integral and the energy profile of a path.
//! * [`minimize`]: fixed-time and free-time minimization, the no-interaction
//!   problem and the interior collision check.
//! * [`bounds`]: the upper and lower bounds on minimal actions, with
//!   empirically fitted constants.
//! * [`dynamics`]: long-time integration and the asymptotic classification of
//!   motions (growth exponents, cluster partition, drift).
//!
//! The `book/` directory of the repository walks through each of these with
//! runnable examples.

pub mod action;
pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod minimize;
pub mod system;

pub use action::{
    action, energy_profile, interaction_integral, split_action, ActionSplit, DiscretePath,
};
pub use error::{Error, Result};
pub use minimize::{
    interior_collision_margin, minimize_fixed_time, minimize_free_time, phi_no_interaction,
    FreeTimeOutcome, FreeTimeSolution, MinimizeResult, SolveOptions,
};
pub use system::{
    cluster_split, mass_norm, pairwise_extremes, potential, ClusterPartition, ClusterSplit,
    Configuration, MassSystem,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/system.md")]
    mod system {}
    #[doc = include_str!("../../../book/src/action.md")]
    mod action {}
    #[doc = include_str!("../../../book/src/minimize.md")]
    mod minimize {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
