//! Shared fixtures for the benchmarks.

use topomode::control::ControlLaw;
use topomode::dynamics::ControlledSystem;
use topomode::{boundary_number_control, build_kitaev, eigenmodes, KitaevParams, ModeVector, Statistics, C64};

/// Kitaev chain with boundary controls and the P-matrix law on the right mode.
pub fn kitaev_system(n: usize) -> (ControlledSystem, ModeVector) {
    let h = build_kitaev(&KitaevParams::new(n, 2.0, 1.0, 2.0).unwrap()).unwrap();
    let spec = eigenmodes(&h).unwrap();
    let controls = vec![
        boundary_number_control(n, 1, Statistics::Fermi).unwrap(),
        boundary_number_control(n, n, Statistics::Fermi).unwrap(),
    ];
    let law = ControlLaw::p_matrix(&spec, n, vec![10.0, 10.0]).unwrap();
    let d = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let c = vec![C64::new(0.0, 0.0); n];
    let q0 = ModeVector::from_coefficients(&c, &d, Statistics::Fermi).unwrap();
    (ControlledSystem::new(h, controls, law).unwrap(), q0)
}
