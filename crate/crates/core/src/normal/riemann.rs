use std::sync::Arc;

use super::coords::{CoordinateChange, MapDirection, NumericMap};
use crate::error::{Error, Result};
use crate::geometry::{curvature_at, ConnectionField};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD, PIVOT_THRESHOLD};
use crate::transport::{exp_with_jacobian, log_map, DEFAULT_LOG_TOL};

/// Radii of the default metric-expansion slope fit.
pub const EXPANSION_RADII: [f64; 3] = [0.1, 0.05, 0.025];

/// Orthonormal basis at a point for a metric of any signature, by
/// Gram-Schmidt on the coordinate basis. Columns are the basis vectors;
/// returns the frame and the signs `g(eₐ, eₐ) = ±1`.
pub fn orthonormal_frame(g: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let n = g.rows();
    let dot = |u: &[f64], v: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += g[(i, j)] * u[i] * v[j];
            }
        }
        s
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut signs = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        for (e, s) in basis.iter().zip(&signs) {
            let w = dot(&v, e) * s;
            for i in 0..n {
                v[i] -= w * e[i];
            }
        }
        let norm2 = dot(&v, &v);
        if norm2.abs() < PIVOT_THRESHOLD {
            return Err(Error::SingularMetric { point: Vec::new() });
        }
        let scale = 1.0 / norm2.abs().sqrt();
        basis.push(v.iter().map(|x| x * scale).collect());
        signs.push(norm2.signum());
    }
    Ok((Matrix::from_fn(n, n, |i, a| basis[a][i]), signs))
}

#[derive(Debug)]
struct RiemannMap {
    c: ConnectionField,
    origin: Vec<f64>,
    frame: Matrix,
    frame_inv: Matrix,
    radius: Option<f64>,
    steps: usize,
}

impl RiemannMap {
    fn vector(&self, p: &[f64]) -> Result<Vec<f64>> {
        if let Some(r) = self.radius {
            let len = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > r {
                return Err(Error::OutOfRange { value: len, lo: 0.0, hi: r });
            }
        }
        Ok(self.frame.mul_vec(p))
    }
}

impl NumericMap for RiemannMap {
    fn direction(&self) -> MapDirection {
        MapDirection::NewToOld
    }

    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let v = self.vector(p)?;
        Ok(exp_with_jacobian(&self.c, &self.origin, &v, self.steps)?.0)
    }

    fn jacobian(&self, p: &[f64]) -> Option<Result<Matrix>> {
        Some(
            self.vector(p)
                .and_then(|v| exp_with_jacobian(&self.c, &self.origin, &v, self.steps))
                .map(|(_, j)| &j * &self.frame),
        )
    }

    fn invert(&self, q: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(log_map(&self.c, &self.origin, q, DEFAULT_LOG_TOL, self.steps).map(|v| self.frame_inv.mul_vec(&v)))
    }
}

/// Riemannian normal coordinates at `origin`: the point with coordinates
/// `x′` is `exp(Eᵃₖ x′ᵏ)` for the frame `E` (orthonormal by default).
///
/// `radius` bounds `|x′|`; staying inside the injectivity radius is the
/// caller's job, and coordinates past `radius` are refused with
/// `OutOfRange`.
pub fn riemann_normal_coords(
    c: &ConnectionField,
    origin: &[f64],
    frame: Option<&Matrix>,
    radius: Option<f64>,
    steps: usize,
) -> Result<CoordinateChange> {
    let g = c.metric().ok_or_else(|| Error::Invalid("Riemannian coordinates need a metric connection".into()))?;
    c.chart().require(origin)?;
    let n = c.dim();
    let e = match frame {
        Some(m) => {
            if m.rows() != n || m.cols() != n {
                return Err(Error::Invalid(format!("frame must be {n}×{n}")));
            }
            m.clone()
        }
        None => orthonormal_frame(&g.at(origin)?).map_err(|_| Error::SingularMetric { point: origin.to_vec() })?.0,
    };
    let frame_inv = e
        .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
        .ok_or_else(|| Error::SingularFrame { point: origin.to_vec() })?;
    let map = RiemannMap { c: c.clone(), origin: origin.to_vec(), frame: e, frame_inv, radius, steps };
    CoordinateChange::numeric(c.chart().clone(), Arc::new(map), origin.to_vec(), vec![0.0; n], "riemann-normal")
}

/// Metric components `g′ = DΦᵀ g DΦ` in the new coordinates at `x′`.
pub fn metric_in_coordinates(c: &ConnectionField, rnc: &CoordinateChange, xn: &[f64]) -> Result<Matrix> {
    let g = c.metric().ok_or_else(|| Error::Invalid("connection has no metric".into()))?;
    let x = rnc.to_old(xn)?;
    let d = rnc.induced_frame(xn)?;
    Ok(&(&d.transpose() * &g.at(&x)?) * &d)
}

/// `max |g′ᵢⱼ(x′) − (Gᵢⱼ − ⅓ R′ᵢₖⱼₗ x′ᵏ x′ˡ)|` for Riemannian coordinates,
/// with `G` and `R′` the metric and curvature at the origin in the new
/// coordinates.
pub fn metric_expansion_residual(c: &ConnectionField, rnc: &CoordinateChange, xn: &[f64]) -> Result<f64> {
    let n = c.dim();
    let origin = rnc.anchor_old();
    let zero = vec![0.0; n];
    let e = rnc.induced_frame(&zero)?;
    let g0 = metric_in_coordinates(c, rnc, &zero)?;
    let r = curvature_at(c, origin)?
        .lowered(&c.metric().expect("checked by metric_in_coordinates").at(origin)?)
        .covariant_in_frame(&e);
    let g = metric_in_coordinates(c, rnc, xn)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut q = 0.0;
            for k in 0..n {
                for l in 0..n {
                    q += r.get(i, k, j, l) * xn[k] * xn[l];
                }
            }
            worst = worst.max((g[(i, j)] - g0[(i, j)] + q / 3.0).abs());
        }
    }
    Ok(worst)
}

/// Least-squares slope of `log residual` against `log r` for
/// `x′ = r·direction` over `radii`, with the residuals themselves.
pub fn metric_expansion_slope(
    c: &ConnectionField,
    rnc: &CoordinateChange,
    direction: &[f64],
    radii: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || radii.len() < 2 {
        return Err(Error::Invalid("slope fit needs a direction and two radii".into()));
    }
    let mut residuals = Vec::with_capacity(radii.len());
    for r in radii {
        let xn: Vec<f64> = direction.iter().map(|v| v * r / norm).collect();
        residuals.push(metric_expansion_residual(c, rnc, &xn)?);
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((sxy / sxx, residuals))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    use super::*;
    use crate::geometry::{christoffel_from_metric, Chart, MetricField};
    use crate::normal::Route;

    fn sphere() -> ConnectionField {
        let chart = Chart::new(&["th", "ph"]).unwrap().with_bounds(0, 0.0, PI).unwrap().with_period(1, TAU).unwrap();
        christoffel_from_metric(&MetricField::diagonal(Arc::new(chart), &["1", "sin(th)^2"]).unwrap())
    }

    #[test]
    fn lorentzian_gram_schmidt() {
        let g = Matrix::from_rows(&[vec![1.0, 0.2], vec![0.2, -2.0]]).unwrap();
        let (e, s) = orthonormal_frame(&g).unwrap();
        let gram = &(&e.transpose() * &g) * &e;
        assert!(gram.max_abs_diff(&Matrix::diagonal(&s)) < 1e-14);
        assert_eq!(s, vec![1.0, -1.0]);
    }

    #[test]
    fn sphere_riemann_coordinates() {
        let c = sphere();
        let rnc = riemann_normal_coords(&c, &[FRAC_PI_2, 0.0], None, Some(1.0), 200).unwrap();
        assert_eq!(rnc.to_old(&[0.0, 0.0]).unwrap(), vec![FRAC_PI_2, 0.0]);
        let x = rnc.to_old(&[0.3, 0.0]).unwrap();
        assert!((x[0] - (FRAC_PI_2 + 0.3)).abs() < 1e-10);
        let back = rnc.to_new(&x).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-9 && back[1].abs() < 1e-9);
        let g = rnc.coefficients(&c, &[0.0, 0.0], Route::Frame).unwrap();
        assert!(g.max_abs() < 1e-6);
        let (slope, _) = metric_expansion_slope(&c, &rnc, &[1.0, 0.7], &EXPANSION_RADII).unwrap();
        assert!(slope >= 2.7, "slope {slope}");
        assert!(matches!(rnc.to_old(&[1.5, 0.0]), Err(Error::OutOfRange { .. })));
    }
}
