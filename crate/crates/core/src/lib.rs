//! Quasi-polynomial approximation scheme for capacitated vehicle routing in
//! the Euclidean plane, with the tour-partitioning baseline, an exact oracle
//! for tiny instances and checkers for every structural definition the scheme
//! relies on.
//!
//! The pipeline is: [`perturb`] the instance onto an integer grid, build a
//! shifted quadtree with [`build_dissection`], run the portal dynamic program
//! ([`dp::solve_dp`]), turn its rounding decisions into point types
//! ([`typing`]), and patch the dropped points with [`partition`].

pub mod dissection;
pub mod dp;
pub mod error;
pub mod geometry;
pub mod instance;
pub mod oracle;
pub mod partition;
pub mod scalar;
pub mod solution;
pub mod typing;

pub use dissection::{build_dissection, enumerate_shifts, Dissection, SquareId};
pub use error::{Error, Result};
pub use instance::{
    generate_instance, lift_solution, parse_instance, perturb, Distribution, Instance,
    PerturbedInstance,
};
pub use scalar::Scalar;
pub use solution::{Solution, Tour, TypeAssignment, Waypoint};

/// Single-precision instance.
pub type InstanceF32 = Instance<f32>;
/// Double-precision instance.
pub type InstanceF64 = Instance<f64>;
