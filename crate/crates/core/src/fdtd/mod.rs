//! Three-dimensional FDTD solver on a uniform Yee lattice.
//!
//! Normalized units throughout: `eps0 = mu0 = c = 1`, lengths and times in
//! nanometres (time counts nm of light travel). Materials are isotropic,
//! lossless, non-magnetic dielectrics. Open boundaries use a convolutional
//! PML; transverse axes may instead be periodic.

mod cpml;
mod grid;
mod kernel;
mod material;
mod monitor;
mod simulation;
mod snapshot;
mod source;

use thiserror::Error;

pub use grid::{Boundary, GridSpec, PmlParams, DEFAULT_CELL_SIZE_NM, MIN_PML_CELLS};
pub use kernel::FieldLattice;
pub use material::MaterialMap;
pub use monitor::{poynting_flux, tangential, BoxMonitor, DftMonitor, Normal, PlaneMonitor, PlanePhasors, Surface};
pub use simulation::{run_until_decayed, DecayCriterion, RunResult, RunWarning, Simulation};
pub use snapshot::Snapshot;
pub use source::{DipoleSource, GaussianPulse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdtdError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid monitor: {0}")]
    InvalidMonitor(String),
    #[error("position {position_nm} nm on axis {axis} is not on a lattice node")]
    NotCellAligned { axis: usize, position_nm: f64 },
    #[error("non-finite field value detected by step {step}; the update is unstable")]
    Unstable { step: u64 },
}
