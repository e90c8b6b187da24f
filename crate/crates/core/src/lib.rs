//! Flow-level bandwidth-sharing networks under weighted alpha-fair policies.
//!
//! The crate simulates the stochastic measure-valued model, integrates its
//! fluid model, computes invariant states, and runs the fluid-limit and
//! law-of-large-numbers experiments that compare the two.

pub mod allocator;
mod dual;
pub mod fluid;
pub mod harness;
pub mod invariant;
pub mod measure;
pub mod rng;
pub mod simulator;
pub mod topology;

pub use allocator::{AllocError, AllocationResult, AlphaFairPolicy, BandwidthPolicy};
pub use fluid::{FluidData, FluidError, FluidOptions, FluidSolution};
pub use harness::{HarnessError, Scenario};
pub use invariant::{InvariantError, InvariantState};
pub use measure::{AtomicMeasure, DistributionSpec, ExcessLifetime, Metric};
pub use simulator::{SimError, SimModel, SimState, SimTrace};
pub use topology::NetworkTopology;
