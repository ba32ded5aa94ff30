use thiserror::Error;

use crate::expr::ExprError;
use crate::normal::LoopInfo;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("metric is singular at {point:?}")]
    SingularMetric { point: Vec<f64> },

    #[error("frame is singular at {point:?}")]
    SingularFrame { point: Vec<f64> },

    #[error("point {point:?} lies outside the chart domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("path left the chart domain at t = {t} (point {point:?})")]
    DomainExit { t: f64, point: Vec<f64> },

    #[error("integration produced non-finite values at t = {t}")]
    NonFinite { t: f64 },

    #[error("shooting did not converge, residual {residual:e}")]
    NoConvergence { residual: f64 },

    #[error("path is not closed, endpoint gap {gap:e}")]
    NotALoop { gap: f64 },

    #[error("torsion {norm:e} at {point:?} rules out normal coordinates (a normal frame still exists)")]
    TorsionObstruction { point: Vec<f64>, norm: f64 },

    #[error("curvature {norm:e} at {point:?} rules out normal frames on the region")]
    CurvatureObstruction { point: Vec<f64>, norm: f64 },

    #[error("parallel transport is path dependent: defect {} on {}", .0.defect, .0.description)]
    HolonomyObstruction(Box<LoopInfo>),

    #[error("parameter {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("transport generator is singular at t = {t}")]
    SingularGenerator { t: f64 },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// True for results that answer an existence question negatively or hit
    /// the edge of the chart, as opposed to malformed input.
    pub fn is_obstruction_or_domain(&self) -> bool {
        matches!(
            self,
            Error::TorsionObstruction { .. }
                | Error::CurvatureObstruction { .. }
                | Error::HolonomyObstruction(_)
                | Error::SingularMetric { .. }
                | Error::SingularFrame { .. }
                | Error::OutsideDomain { .. }
                | Error::DomainExit { .. }
                | Error::NonFinite { .. }
                | Error::NoConvergence { .. }
                | Error::NotALoop { .. }
                | Error::Expr(ExprError::Domain(_))
        )
    }
}
