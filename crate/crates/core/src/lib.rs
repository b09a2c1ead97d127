//! State estimation and measurement-device placement for radial distribution grids.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: radial topology, PI-model line parameters and tree queries.
//! - [`distflow`]: backward/forward sweep load flow with line shunts.
//! - [`estimator`]: weighted-least-squares estimation with a constant Jacobian.
//! - [`noise`]: synthetic pseudo-measurements and device measurements.
//! - [`placement`]: Monte-Carlo inaccuracy cost and the greedy placement loop.
//! - [`io`], [`fixture`], [`report`]: file formats, the synthetic 85-node grid
//!   and report export used by the `gridobs` command-line tool.

pub mod distflow;
pub mod error;
pub mod estimator;
pub mod fixture;
pub mod grid;
pub mod io;
pub mod noise;
pub mod placement;
pub mod report;

pub use distflow::{solve_distflow, DistflowOptions, GridState, LoadingScenario};
pub use error::{Error, Result};
pub use estimator::{
    build_jacobian, estimate_state, measurement_function, wls_solve, Estimator, MeasurementEntry, MeasurementKind,
    MeasurementLayout, MeasurementSet, StateVector, WlsOptions,
};
pub use grid::{build_grid, Line, Node, RadialGrid, VoltageLevel, SLACK};
pub use noise::{sample_measurements, DeviceConfiguration, NoiseSpec};
pub use placement::{
    candidates, evaluate_configuration, greedy_place, sensitivity_sweep, PlacementOptions, PlacementResult,
    Thresholds, UncertaintyReport,
};
