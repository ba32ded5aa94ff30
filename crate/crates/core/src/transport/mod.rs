//! Parallel transport, geodesics, the exponential map and loop holonomy.
//!
//! Everything is integrated with fixed-step classical Runge-Kutta; see
//! [`richardson`] for the step-doubling error check.

mod curve;
mod integrate;
mod ops;

pub use curve::{
    coordinate_circle, coordinate_square, find_self_intersection, Curve, PathCurve, Polyline, Reversed, SampledPath,
};
pub(crate) use integrate::check_steps;
pub use integrate::{richardson, rk4, ErrorEstimate, DEFAULT_RICHARDSON_TOL, DEFAULT_STEPS, MIN_STEPS};
pub use ops::{
    exp_map, exp_with_jacobian, geodesic, holonomy, log_map, parallel_transport, rotation_angle_2d, transport_matrix,
    transport_matrix_along, HolonomyResult, MatrixAlongPath, VectorAlongPath, DEFAULT_LOG_TOL, LOOP_CLOSURE_TOL,
};
