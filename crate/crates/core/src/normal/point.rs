use super::coords::CoordinateChange;
use super::report::{NormalityReport, Region, DEFAULT_TOL_T};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{torsion_at, transform_connection, ConnectionField, FrameField};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD};

/// Largest jet component a perturbation may have at the base point.
const PERTURBATION_TOL: f64 = 1e-12;

/// `Aᵃₖ(x) = δᵃₖ − Γᵃ_bk(p₀)(xᵇ − p₀ᵇ)`, right-multiplied by `b` when given.
///
/// The frame is normal at `p₀` for any connection, with or without torsion.
pub fn normal_frame_at_point(c: &ConnectionField, p0: &[f64], b: Option<&Matrix>) -> Result<FrameField> {
    c.chart().require(p0)?;
    let n = c.dim();
    let gamma = c.coefficients(p0)?;
    let mut entries = Vec::with_capacity(n * n);
    for a in 0..n {
        for k in 0..n {
            let mut e = Expr::num(if a == k { 1.0 } else { 0.0 });
            for bb in 0..n {
                let g = gamma.get(a, bb, k);
                if g != 0.0 {
                    e = e - Expr::num(g) * (Expr::var(bb) - Expr::num(p0[bb]));
                }
            }
            entries.push(e);
        }
    }
    let frame = FrameField::new(c.chart().clone(), entries)?;
    match b {
        None => Ok(frame),
        Some(b) => {
            check_invertible(b, p0)?;
            Ok(frame.compose_constant(b))
        }
    }
}

fn check_invertible(b: &Matrix, p0: &[f64]) -> Result<Matrix> {
    if !b.is_square() || b.rows() != p0.len() {
        return Err(Error::Invalid("constant frame matrix has the wrong shape".into()));
    }
    b.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or_else(|| Error::SingularFrame { point: p0.to_vec() })
}

/// `max |Γ′(p₀)|` in the given frame.
pub fn verify_frame_at_point(
    c: &ConnectionField,
    frame: &FrameField,
    p0: &[f64],
    tolerance: f64,
) -> Result<NormalityReport> {
    let g = transform_connection(c, frame, p0)?;
    Ok(NormalityReport::from_samples(Region::Point { point: p0.to_vec() }, tolerance, [(p0.to_vec(), g.max_abs())]))
}

/// Residual freedom for coordinates normal at a point.
#[derive(Debug, Clone, Default)]
pub struct PointCoordinateOptions {
    /// Constant invertible matrix `B`; the new coordinates become
    /// `B⁻¹(…)` so that the induced frame is the unmodified one times `B`.
    pub linear: Option<Matrix>,
    /// Extra terms `Pⁱ(x)` added before applying `B⁻¹`; each must vanish
    /// with its first and second derivatives at `p₀`.
    pub perturbation: Option<Vec<Expr>>,
    /// Torsion threshold, default `1e-10`.
    pub tol_t: Option<f64>,
}

/// Coordinates normal at `p₀`:
/// `x′ⁱ = yⁱ + ½ Γⁱⱼₖ(p₀) yʲ yᵏ` with `y = x − p₀`.
///
/// Coordinates cannot remove the antisymmetric part of the coefficients, so
/// a connection with torsion at `p₀` yields `TorsionObstruction`; a normal
/// frame from [`normal_frame_at_point`] still exists in that case.
pub fn normal_coords_at_point(
    c: &ConnectionField,
    p0: &[f64],
    options: &PointCoordinateOptions,
) -> Result<CoordinateChange> {
    c.chart().require(p0)?;
    let n = c.dim();
    let torsion = torsion_at(c, p0)?.max_abs();
    if torsion > options.tol_t.unwrap_or(DEFAULT_TOL_T) {
        return Err(Error::TorsionObstruction { point: p0.to_vec(), norm: torsion });
    }
    let gamma = c.coefficients(p0)?;
    let y: Vec<Expr> =
        (0..n).map(|i| if p0[i] == 0.0 { Expr::var(i) } else { Expr::var(i) - Expr::num(p0[i]) }).collect();
    let mut forward: Vec<Expr> = (0..n)
        .map(|i| {
            let mut e = y[i].clone();
            for j in 0..n {
                for k in 0..n {
                    // symmetric part only; equal to Γ when torsion vanishes
                    let g = 0.5 * (gamma.get(i, j, k) + gamma.get(i, k, j));
                    if g != 0.0 {
                        e = e + Expr::num(0.5 * g) * y[j].clone() * y[k].clone();
                    }
                }
            }
            e
        })
        .collect();
    if let Some(p) = &options.perturbation {
        if p.len() != n {
            return Err(Error::Invalid(format!("perturbation needs {n} components")));
        }
        for (i, e) in p.iter().enumerate() {
            let jet = e.eval_jet(p0)?;
            let size = jet.gradient.iter().chain(jet.hessian_upper()).fold(jet.value.abs(), |m, v| m.max(v.abs()));
            if size > PERTURBATION_TOL {
                return Err(Error::Invalid(format!(
                    "perturbation component {i} does not vanish to second order at the base point"
                )));
            }
            forward[i] = forward[i].clone() + e.clone();
        }
    }
    if let Some(b) = &options.linear {
        let binv = check_invertible(b, p0)?;
        forward = (0..n)
            .map(|i| {
                let mut e = Expr::num(0.0);
                for (k, f) in forward.iter().enumerate() {
                    let w = binv[(i, k)];
                    if w != 0.0 {
                        e = e + Expr::num(w) * f.clone();
                    }
                }
                e
            })
            .collect();
    }
    CoordinateChange::closed(c.chart().clone(), forward, p0, "normal at a point")
}
