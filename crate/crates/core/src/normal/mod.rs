//! Normal frames and coordinates: at a point, along a path, on open sets
//! and on submanifold patches, with numeric verification and obstruction
//! diagnostics.

mod coords;
mod patch;
mod path;
mod point;
mod report;
mod riemann;

pub use coords::{CoordinateChange, MapDirection, Route, FD_STEP_FIRST, FD_STEP_SECOND};
pub use patch::{
    normal_coords_on_open_set, normal_frame_on_open_set, submanifold_normality, verify_grid_frame, GridFrame,
    GridOptions, OpenSetCoordinates, OpenSetFrame, Patch, PatchFrame, DEFAULT_NODES, DEFAULT_STEPS_PER_LEG,
};
pub use path::{fermi_coords, normal_frame_along_path, verify_path_frame, PathFrame, GEODESIC_TOL};
pub use point::{normal_coords_at_point, normal_frame_at_point, verify_frame_at_point, PointCoordinateOptions};
pub use report::{LoopInfo, NormalityReport, Region, Verdict, DEFAULT_TOL, DEFAULT_TOL_R, DEFAULT_TOL_T};
pub use riemann::{
    metric_expansion_residual, metric_expansion_slope, metric_in_coordinates, orthonormal_frame, riemann_normal_coords,
    EXPANSION_RADII,
};
