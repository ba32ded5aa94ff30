use serde::Serialize;

use super::curve::{Curve, SampledPath};
use super::integrate::{check_steps, rk4};
use crate::error::{Error, Result};
use crate::geometry::ConnectionField;
use crate::linalg::{max_abs, Matrix};

/// Largest endpoint gap accepted for a closed loop.
pub const LOOP_CLOSURE_TOL: f64 = 1e-12;

/// Default residual tolerance for [`log_map`].
pub const DEFAULT_LOG_TOL: f64 = 1e-12;

const LOG_MAX_ITERATIONS: usize = 50;
const LOG_MAX_HALVINGS: usize = 30;

/// Samples of a vector transported along a path.
#[derive(Debug, Clone, Serialize)]
pub struct VectorAlongPath {
    pub ts: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl VectorAlongPath {
    pub fn end(&self) -> &[f64] {
        self.values.last().expect("transport always records the start")
    }
}

/// Samples of a matrix (a frame, or several transported vectors as columns)
/// transported along a path.
#[derive(Debug, Clone)]
pub struct MatrixAlongPath {
    pub ts: Vec<f64>,
    pub values: Vec<Matrix>,
}

impl MatrixAlongPath {
    pub fn end(&self) -> &Matrix {
        self.values.last().expect("transport always records the start")
    }
}

/// Transport around a closed loop.
#[derive(Debug, Clone)]
pub struct HolonomyResult {
    pub matrix: Matrix,
    /// `max |H − I|`.
    pub defect: f64,
}

fn require_point(c: &ConnectionField, t: f64, x: Vec<f64>) -> Result<Vec<f64>> {
    if c.chart().contains(&x) {
        Ok(x)
    } else {
        Err(Error::DomainExit { t, point: x })
    }
}

/// Integrates piece by piece along `curve`, splitting `steps` across pieces
/// in proportion to their parameter length. `observe` sees each sample once.
pub(crate) fn rk4_along<C, F, O>(curve: &C, steps: usize, y0: &[f64], mut rhs: F, mut observe: O) -> Result<Vec<f64>>
where
    C: Curve + ?Sized,
    F: FnMut(usize, f64, &[f64], &mut [f64]) -> Result<()>,
    O: FnMut(f64, &[f64]),
{
    let (a, b) = curve.t_range();
    let total = b - a;
    let mut y = y0.to_vec();
    for (i, (p, q)) in curve.pieces().into_iter().enumerate() {
        let n = if total > 0.0 { ((steps as f64) * (q - p) / total).ceil().max(1.0) as usize } else { 0 };
        let mut skip = i > 0;
        y = rk4(
            p,
            q,
            n,
            &y,
            |t, y, dy| rhs(i, t, y, dy),
            |t, y| {
                if skip {
                    skip = false;
                } else {
                    observe(t, y);
                }
            },
        )?;
    }
    Ok(y)
}

/// `u̇ = −Ω(γ̇) u` for an `n × cols` block stored row-major.
fn transport_rhs<'a, C: Curve + ?Sized>(
    c: &'a ConnectionField,
    curve: &'a C,
    cols: usize,
) -> impl FnMut(usize, f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let n = c.dim();
    move |piece, t, y, dy| {
        let (x, v) = curve.eval_piece(piece, t)?;
        let x = require_point(c, t, x)?;
        let omega = c.coefficients(&x)?.contract(&v);
        for i in 0..n {
            for col in 0..cols {
                let mut s = 0.0;
                for k in 0..n {
                    s += omega[(i, k)] * y[k * cols + col];
                }
                dy[i * cols + col] = -s;
            }
        }
        Ok(())
    }
}

fn check_dims<C: Curve + ?Sized>(c: &ConnectionField, curve: &C) -> Result<()> {
    if curve.dim() != c.dim() {
        return Err(Error::Invalid(format!("path has dimension {}, connection {}", curve.dim(), c.dim())));
    }
    Ok(())
}

fn start_point<C: Curve + ?Sized>(c: &ConnectionField, curve: &C) -> Result<()> {
    let a = curve.t_range().0;
    let x = curve.point(a)?;
    c.chart().require(&x)
}

/// Parallel transport of `v0` along `curve`, recorded after every step.
pub fn parallel_transport<C: Curve + ?Sized>(
    c: &ConnectionField,
    curve: &C,
    v0: &[f64],
    steps: usize,
) -> Result<VectorAlongPath> {
    check_dims(c, curve)?;
    check_steps(steps)?;
    if v0.len() != c.dim() {
        return Err(Error::Invalid("initial vector has the wrong dimension".into()));
    }
    start_point(c, curve)?;
    let mut out = VectorAlongPath { ts: Vec::with_capacity(steps + 1), values: Vec::with_capacity(steps + 1) };
    rk4_along(curve, steps, v0, transport_rhs(c, curve, 1), |t, y| {
        out.ts.push(t);
        out.values.push(y.to_vec());
    })?;
    Ok(out)
}

/// Endpoint of transporting the columns of `u0` along `curve`.
pub fn transport_matrix<C: Curve + ?Sized>(
    c: &ConnectionField,
    curve: &C,
    u0: &Matrix,
    steps: usize,
) -> Result<Matrix> {
    check_dims(c, curve)?;
    check_steps(steps)?;
    start_point(c, curve)?;
    let cols = u0.cols();
    let y = rk4_along(curve, steps, u0.as_slice(), transport_rhs(c, curve, cols), |_, _| {})?;
    Ok(Matrix::from_row_major(c.dim(), cols, y))
}

/// Like [`transport_matrix`] but recording every step.
pub fn transport_matrix_along<C: Curve + ?Sized>(
    c: &ConnectionField,
    curve: &C,
    u0: &Matrix,
    steps: usize,
) -> Result<MatrixAlongPath> {
    check_dims(c, curve)?;
    check_steps(steps)?;
    start_point(c, curve)?;
    let (n, cols) = (c.dim(), u0.cols());
    let mut out = MatrixAlongPath { ts: Vec::with_capacity(steps + 1), values: Vec::with_capacity(steps + 1) };
    rk4_along(curve, steps, u0.as_slice(), transport_rhs(c, curve, cols), |t, y| {
        out.ts.push(t);
        out.values.push(Matrix::from_row_major(n, cols, y.to_vec()));
    })?;
    Ok(out)
}

fn geodesic_rhs<'a>(c: &'a ConnectionField) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let n = c.dim();
    move |t, y, dy| {
        let x = require_point(c, t, y[..n].to_vec())?;
        let v = &y[n..2 * n];
        let acc = c.coefficients(&x)?.quadratic(v, v);
        dy[..n].copy_from_slice(v);
        for i in 0..n {
            dy[n + i] = -acc[i];
        }
        Ok(())
    }
}

fn check_point_vector(c: &ConnectionField, x0: &[f64], v0: &[f64]) -> Result<()> {
    if x0.len() != c.dim() || v0.len() != c.dim() {
        return Err(Error::Invalid("point or vector has the wrong dimension".into()));
    }
    c.chart().require(x0)
}

/// Geodesic `ẍ = −Γ(ẋ, ẋ)` on `[0, t_max]`, sampled after every step.
pub fn geodesic(c: &ConnectionField, x0: &[f64], v0: &[f64], t_max: f64, steps: usize) -> Result<SampledPath> {
    check_point_vector(c, x0, v0)?;
    check_steps(steps)?;
    if !(t_max >= 0.0 && t_max.is_finite()) {
        return Err(Error::Invalid(format!("geodesic length {t_max} must be finite and non-negative")));
    }
    let n = c.dim();
    let y0: Vec<f64> = x0.iter().chain(v0).copied().collect();
    let mut out = SampledPath {
        ts: Vec::with_capacity(steps + 1),
        points: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
    };
    rk4(0.0, t_max, steps, &y0, geodesic_rhs(c), |t, y| {
        out.ts.push(t);
        out.points.push(y[..n].to_vec());
        out.velocities.push(y[n..].to_vec());
    })?;
    Ok(out)
}

/// `exp_{x0}(v)`, the geodesic endpoint at parameter 1.
pub fn exp_map(c: &ConnectionField, x0: &[f64], v: &[f64], steps: usize) -> Result<Vec<f64>> {
    check_point_vector(c, x0, v)?;
    check_steps(steps)?;
    if v.iter().all(|c| *c == 0.0) {
        return Ok(x0.to_vec());
    }
    let n = c.dim();
    let y0: Vec<f64> = x0.iter().chain(v).copied().collect();
    let y = rk4(0.0, 1.0, steps, &y0, geodesic_rhs(c), |_, _| {})?;
    let end = y[..n].to_vec();
    require_point(c, 1.0, end)
}

/// `exp_{x0}(v)` together with its derivative with respect to `v`, from the
/// variational (Jacobi) equations integrated alongside the geodesic.
pub fn exp_with_jacobian(c: &ConnectionField, x0: &[f64], v: &[f64], steps: usize) -> Result<(Vec<f64>, Matrix)> {
    check_point_vector(c, x0, v)?;
    check_steps(steps)?;
    let n = c.dim();
    let nn = n * n;
    // state: x, v, J (n×n), K = J̇ (n×n)
    let mut y0 = vec![0.0; 2 * n + 2 * nn];
    y0[..n].copy_from_slice(x0);
    y0[n..2 * n].copy_from_slice(v);
    for a in 0..n {
        y0[2 * n + nn + a * n + a] = 1.0;
    }
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let x = require_point(c, t, y[..n].to_vec())?;
        let vel = &y[n..2 * n];
        let jm = &y[2 * n..2 * n + nn];
        let km = &y[2 * n + nn..];
        let (g, dg) = c.coefficients_with_derivatives(&x)?;
        let acc = g.quadratic(vel, vel);
        dy[..n].copy_from_slice(vel);
        for i in 0..n {
            dy[n + i] = -acc[i];
        }
        dy[2 * n..2 * n + nn].copy_from_slice(km);
        // ∂ₘΓⁱⱼₖ vʲ vᵏ
        let mut dq = vec![0.0; nn];
        for m in 0..n {
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        s += dg.get(m, i, j, k) * vel[j] * vel[k];
                    }
                }
                dq[i * n + m] = s;
            }
        }
        // symmetrised Ω(v) acting on K
        let mut sym = vec![0.0; nn];
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += (g.get(i, j, k) + g.get(i, k, j)) * vel[j];
                }
                sym[i * n + k] = s;
            }
        }
        for i in 0..n {
            for a in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += dq[i * n + m] * jm[m * n + a] + sym[i * n + m] * km[m * n + a];
                }
                dy[2 * n + nn + i * n + a] = -s;
            }
        }
        Ok(())
    };
    let y = rk4(0.0, 1.0, steps, &y0, rhs, |_, _| {})?;
    let end = require_point(c, 1.0, y[..n].to_vec())?;
    let jac = Matrix::from_row_major(n, n, y[2 * n..2 * n + nn].to_vec());
    Ok((end, jac))
}

/// Solves `exp_{x0}(v) = y` by damped Newton iteration from `v = y − x0`.
///
/// Only meaningful within the injectivity radius at `x0`, which the caller
/// is responsible for.
pub fn log_map(c: &ConnectionField, x0: &[f64], y: &[f64], tol: f64, steps: usize) -> Result<Vec<f64>> {
    check_point_vector(c, x0, y)?;
    c.chart().require(y)?;
    check_steps(steps)?;
    let residual = |e: &[f64]| max_abs(&e.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
    let mut v: Vec<f64> = y.iter().zip(x0).map(|(a, b)| a - b).collect();
    if v.iter().all(|c| *c == 0.0) {
        return Ok(v);
    }
    let (mut end, mut jac) = exp_with_jacobian(c, x0, &v, steps)?;
    let mut res = residual(&end);
    for _ in 0..LOG_MAX_ITERATIONS {
        if res < tol {
            return Ok(v);
        }
        let r: Vec<f64> = end.iter().zip(y).map(|(a, b)| a - b).collect();
        let dv = jac.solve(&r).ok_or(Error::NoConvergence { residual: res })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..LOG_MAX_HALVINGS {
            let cand: Vec<f64> = v.iter().zip(&dv).map(|(a, d)| a - lambda * d).collect();
            if let Ok((e2, j2)) = exp_with_jacobian(c, x0, &cand, steps) {
                let r2 = residual(&e2);
                if r2 < res {
                    v = cand;
                    end = e2;
                    jac = j2;
                    res = r2;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < tol {
        Ok(v)
    } else {
        Err(Error::NoConvergence { residual: res })
    }
}

/// Transport of the identity frame around a closed loop.
pub fn holonomy<C: Curve + ?Sized>(c: &ConnectionField, loop_: &C, steps: usize) -> Result<HolonomyResult> {
    check_dims(c, loop_)?;
    let (a, b) = loop_.t_range();
    let gap = c.chart().distance(&loop_.point(a)?, &loop_.point(b)?);
    if !(gap < LOOP_CLOSURE_TOL) {
        return Err(Error::NotALoop { gap });
    }
    let n = c.dim();
    let matrix = transport_matrix(c, loop_, &Matrix::identity(n), steps)?;
    let defect = matrix.max_abs_diff(&Matrix::identity(n));
    Ok(HolonomyResult { matrix, defect })
}

/// Rotation angle in `[0, 2π)` of a 2×2 holonomy `h` measured in an
/// orthonormal basis for the positive-definite metric `g` at the loop's base.
pub fn rotation_angle_2d(h: &Matrix, g: &Matrix) -> Option<f64> {
    if h.rows() != 2 || h.cols() != 2 {
        return None;
    }
    let l = g.cholesky()?;
    let lt = l.transpose();
    let m = &(&lt * h) * &lt.inverse()?;
    let angle = (m[(1, 0)] - m[(0, 1)]).atan2(m[(0, 0)] + m[(1, 1)]);
    Some(angle.rem_euclid(std::f64::consts::TAU))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI, TAU};
    use std::sync::Arc;

    use super::*;
    use crate::geometry::{christoffel_from_metric, curvature_at, Chart, MetricField};
    use crate::transport::{coordinate_circle, coordinate_square, PathCurve};

    fn sphere() -> ConnectionField {
        let chart = Chart::new(&["th", "ph"]).unwrap().with_bounds(0, 0.0, PI).unwrap().with_period(1, TAU).unwrap();
        christoffel_from_metric(&MetricField::diagonal(Arc::new(chart), &["1", "sin(th)^2"]).unwrap())
    }

    #[test]
    fn latitude_holonomy_angle() {
        let c = sphere();
        let lat = coordinate_circle(c.chart(), &[FRAC_PI_3, 0.0], 1).unwrap();
        let h = holonomy(&c, &lat, 400).unwrap();
        let g = c.metric().unwrap().at(&[FRAC_PI_3, 0.0]).unwrap();
        let angle = rotation_angle_2d(&h.matrix, &g).unwrap();
        assert!((angle - PI).abs() < 1e-6, "angle {angle}");
    }

    #[test]
    fn equator_transport_returns() {
        let c = sphere();
        let eq = PathCurve::parse(c.chart().clone(), &["pi/2", "t"], (0.0, TAU)).unwrap();
        let u = parallel_transport(&c, &eq, &[1.0, 0.0], 64).unwrap();
        assert!(max_abs(&[u.end()[0] - 1.0, u.end()[1]]) < 1e-12);
    }

    #[test]
    fn small_square_matches_curvature() {
        let c = sphere();
        let x0 = [1.0, 0.3];
        let eps = 0.01;
        let sq = coordinate_square(&x0, 0, 1, eps).unwrap();
        let h = holonomy(&c, &sq, 256).unwrap();
        let r = curvature_at(&c, &x0).unwrap().plane(0, 1);
        let approx = (&h.matrix - &Matrix::identity(2)).scale(1.0 / (eps * eps));
        assert!(approx.max_abs_diff(&r) < 0.05 * r.max_abs(), "{approx} vs {r}");
    }

    #[test]
    fn equator_log_and_exp() {
        let c = sphere();
        let x0 = [FRAC_PI_2, 0.0];
        let v = log_map(&c, &x0, &[FRAC_PI_2, 0.3], 1e-12, 200).unwrap();
        assert!((v[0]).abs() < 1e-10 && (v[1] - 0.3).abs() < 1e-10, "{v:?}");
        let y = [1.2, 0.4];
        let w = log_map(&c, &x0, &y, 1e-12, 200).unwrap();
        let back = exp_map(&c, &x0, &w, 200).unwrap();
        assert!(max_abs(&[back[0] - y[0], back[1] - y[1]]) < 1e-11);
        assert_eq!(exp_map(&c, &x0, &[0.0, 0.0], 200).unwrap(), x0.to_vec());
    }

    #[test]
    fn loops_must_close() {
        let c = sphere();
        let open = PathCurve::parse(c.chart().clone(), &["1", "t"], (0.0, 1.0)).unwrap();
        assert!(matches!(holonomy(&c, &open, 64), Err(Error::NotALoop { .. })));
    }
}
