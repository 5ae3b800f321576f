pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod models;
pub mod spectral;
pub mod control;
pub mod dynamics;
pub mod robustness;
pub mod config;
pub mod runner;
pub mod output;
pub mod svg;
pub mod presets;

pub use error::{Error, ErrorClass, Result};
pub use hamiltonian::{mode_norm, validate_quadratic, ModeVector, QuadraticHamiltonian, Statistics};
pub use linalg::{CMatrix, CVector, C64};
pub use models::{
    boundary_number_control, build_kitaev, build_ssh, kitaev_phase_is_topological, ChainModel, KitaevParams,
    SshParams,
};
pub use spectral::{
    bdg_dynamics_matrix, eigenmodes, identify_edge_modes, tracked_eigenvector, EdgeLabels, SpectralDecomposition,
};
