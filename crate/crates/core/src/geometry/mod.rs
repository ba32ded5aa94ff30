//! Charts, metrics, connections and their invariants.

mod chart;
mod fields;

pub use chart::{radical_inverse, sample_box, Chart, DEFAULT_SAMPLES, SAMPLE_SHRINK};
pub use fields::{
    christoffel_from_metric, curvature_at, torsion_at, transform_coefficients, transform_connection,
    CoefficientDerivatives, Coefficients, ConnectionField, ConnectionOrigin, CurvatureTensor, FrameField, MetricField,
    TorsionTensor,
};
