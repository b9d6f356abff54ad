//! Forward simulators: the two-parameter toy function and a desk-scale
//! modified Mitchell-Schaeffer monodomain model with S1S2 pacing.

mod markers;
mod mms;

pub use markers::{
    beat_markers, cell_feasibility, extract_apd, extract_lat, output_labels, s1s2_outputs, ApdMarker, BeatMarkers,
    CellFeasibility, MarkerError, OutputKind, ALTERNANS_THRESHOLD, MAX_APD,
};
pub use mms::{
    simulate_cell, simulate_tissue, stable_dt, CellParams, Geometry, PacingProtocol, SimulationTrace, SolverSettings,
    TissueParams,
};

/// `y_i = −θ₁³ x_i + θ₂³ x_i²`.
pub fn toy_forward(theta: &[f64], x: &[f64]) -> Vec<f64> {
    let a = theta[0].powi(3);
    let b = theta[1].powi(3);
    x.iter().map(|&xi| -a * xi + b * xi * xi).collect()
}

/// Measurement locations of the toy problem.
pub const TOY_LOCATIONS: [f64; 3] = [0.5, 1.0, 2.0];

/// Ground truth used for the toy calibration runs.
pub const TOY_TRUTH: [f64; 2] = [-1.5, 2.0];
