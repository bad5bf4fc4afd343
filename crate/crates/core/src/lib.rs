pub mod dynamics;
pub mod entanglement;
pub mod error;
pub mod geometry;
pub mod induced_rep;
pub mod quantum_evolution;
pub mod spin_algebra;
mod ode;
pub mod transport;
