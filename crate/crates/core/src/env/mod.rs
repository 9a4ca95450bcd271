//! The coverage-control environment: density grid, per-robot observation
//! memory, Voronoi partitions, the coverage cost and robot motion.

mod dynamics;
mod maps;
mod voronoi;
mod world;

use thiserror::Error;

pub use dynamics::{add_position_noise, apply_control, clamp_to_world, random_placement, RobotState};
pub use maps::{
    half_cells, local_rect, sense_and_update, LocalMaps, MapWindow, LOCAL_MAP_SIZE_M, SENSOR_SIZE_M,
};
pub use voronoi::{
    cell_moments, coverage_cost, density_moments, scan_nearest, scan_runs, voronoi_assign, CellMoments, VoronoiPartition, UNASSIGNED,
};
pub use world::{CellRect, GaussianPeak, GridGeom, IdfSpec, World, IDF_MAGIC};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("side {side} m is not a whole number of {resolution} m cells")]
    Geometry { side: f64, resolution: f64 },
    #[error("density grid has {actual} cells, expected {expected}")]
    GridSize { expected: usize, actual: usize },
    #[error("density cell {0} is negative or not finite")]
    InvalidDensity(usize),
    #[error("density generator needs at least one peak")]
    NoPeaks,
    #[error("not an IDF file (bad magic)")]
    BadMagic,
    #[error("IDF file is truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
