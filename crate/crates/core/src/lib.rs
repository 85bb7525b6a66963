//! Feedback control of Hamiltonian systems with symmetry on semidirect
//! products: the symmetry-actuating force, its controlled conservation law,
//! matching with a controlled Kaluza-Klein system, and the satellite with a
//! rotor.

pub mod algebra;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod presets;
pub mod satellite;

pub use algebra::{LieAlgebra, Representation, SemidirectAlgebra};
pub use dynamics::{ReducedState, System, Trajectory};
pub use error::{Error, Result};
pub use matching::ControlledData;
pub use model::{KkData, SemidirectModel};
pub use satellite::SatelliteParams;
