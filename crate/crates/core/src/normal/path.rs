use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use super::coords::{CoordinateChange, MapDirection, NumericMap};
use super::report::{NormalityReport, Region, DEFAULT_TOL_T};
use crate::error::{Error, Result};
use crate::geometry::{torsion_at, ConnectionField};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD};
use crate::transport::{
    exp_map, find_self_intersection, transport_matrix, transport_matrix_along, Curve, PathCurve, Reversed,
};

/// Largest `|γ̈ + Γ(γ̇, γ̇)|` accepted for a Fermi axis.
pub const GEODESIC_TOL: f64 = 1e-8;

/// Fraction of the axis range by which Fermi coordinates extend past it.
const AXIS_MARGIN: f64 = 0.01;

/// A frame sampled along a path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFrame {
    pub ts: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub frames: Vec<Matrix>,
    /// Smooth piece of the path each sample belongs to; a sample on a
    /// boundary belongs to the piece ending there. Empty means one piece.
    #[serde(default)]
    pieces: Vec<usize>,
}

impl PathFrame {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// The same frame right-multiplied by a constant matrix.
    pub fn times(&self, c: &Matrix) -> PathFrame {
        PathFrame { frames: self.frames.iter().map(|a| a * c).collect(), ..self.clone() }
    }

    /// Index range `[lo, hi)` of the smooth piece containing sample `i`,
    /// including the boundary sample it starts from.
    fn run_of(&self, i: usize) -> (usize, usize) {
        if self.pieces.len() != self.ts.len() {
            return (0, self.ts.len());
        }
        let p = self.pieces[i];
        let first = self.pieces.iter().position(|q| *q == p).unwrap();
        let last = self.pieces.iter().rposition(|q| *q == p).unwrap();
        (if p > 0 { first.saturating_sub(1) } else { first }, last + 1)
    }
}

/// The frame obtained by transporting the columns of `a0` along the path,
/// `Ȧ = −Ω(γ̇) A`. In it the coefficients contracted with the tangent vanish
/// along the whole path, for any connection.
pub fn normal_frame_along_path<C: Curve + ?Sized>(
    c: &ConnectionField,
    curve: &C,
    a0: &Matrix,
    steps: usize,
) -> Result<PathFrame> {
    let n = c.dim();
    if a0.rows() != n || a0.cols() != n {
        return Err(Error::Invalid(format!("initial frame must be {n}×{n}")));
    }
    let (a, _) = curve.t_range();
    if a0.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
        return Err(Error::SingularFrame { point: curve.point(a)? });
    }
    let along = transport_matrix_along(c, curve, a0, steps)?;
    let mut points = Vec::with_capacity(along.ts.len());
    let mut velocities = Vec::with_capacity(along.ts.len());
    let mut piece_of = Vec::with_capacity(along.ts.len());
    let pieces = curve.pieces();
    let mut piece = 0;
    for t in &along.ts {
        while piece + 1 < pieces.len() && *t > pieces[piece].1 {
            piece += 1;
        }
        let (x, v) = curve.eval_piece(piece, *t)?;
        points.push(x);
        velocities.push(v);
        piece_of.push(piece);
    }
    let (lo, hi) = curve.t_range();
    let closed = c.chart().distance(&points[0], points.last().unwrap()) < 1e-9 && hi > lo;
    if let Some((s, t)) = find_self_intersection(c.chart(), &along.ts, &points, closed) {
        warn!("path self-intersects near t = {s} and t = {t}; the frame is defined on the parameter, not the image");
    }
    Ok(PathFrame { ts: along.ts, points, velocities, frames: along.values, pieces: piece_of })
}

/// Nodes of the differentiation stencil; sixth order in the step.
const STENCIL: usize = 7;

/// Derivative at sample `i` of values on a non-uniform grid from the
/// Lagrange polynomial through up to `STENCIL` neighbouring samples of
/// `ts[lo..hi]`: the first sample used and one weight per sample.
fn lagrange_derivative(ts: &[f64], lo: usize, hi: usize, i: usize) -> (usize, Vec<f64>) {
    let len = hi - lo;
    let k = len.min(STENCIL);
    let mut start = i.saturating_sub(k / 2).max(lo);
    if start + k > hi {
        start = hi - k;
    }
    let nodes: Vec<usize> = (start..start + k).collect();
    let x = ts[i];
    let weights = nodes
        .iter()
        .map(|&j| {
            let denom: f64 = nodes.iter().filter(|&&m| m != j).map(|&m| ts[j] - ts[m]).product();
            let mut s = 0.0;
            for &m in nodes.iter().filter(|&&m| m != j) {
                let prod: f64 = nodes.iter().filter(|&&q| q != j && q != m).map(|&q| x - ts[q]).product();
                s += prod;
            }
            s / denom
        })
        .collect();
    (start, weights)
}

/// `sup |A⁻¹(Ȧ + Ω(γ̇) A)|` at `samples` evenly spread sample indices, with
/// `Ȧ` from sixth-order differences of the stored frames.
pub fn verify_path_frame(
    c: &ConnectionField,
    frame: &PathFrame,
    samples: usize,
    tolerance: f64,
) -> Result<NormalityReport> {
    let m = frame.len();
    if m < 2 {
        return Err(Error::Invalid("a sampled frame needs at least two samples".into()));
    }
    let samples = samples.clamp(2, m);
    let mut out = Vec::with_capacity(samples);
    for s in 0..samples {
        let i = ((s as f64) * (m - 1) as f64 / (samples - 1) as f64).round() as usize;
        let (lo, hi) = frame.run_of(i);
        let (start, w) = lagrange_derivative(&frame.ts, lo, hi, i);
        let n = frame.frames[i].rows();
        let mut adot = Matrix::zeros(n, n);
        for (o, wj) in w.iter().enumerate() {
            let f = &frame.frames[start + o];
            for r in 0..n {
                for k in 0..n {
                    adot[(r, k)] += wj * f[(r, k)];
                }
            }
        }
        let a = &frame.frames[i];
        let omega = c.coefficients(&frame.points[i])?.contract(&frame.velocities[i]);
        let ainv = a
            .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
            .ok_or_else(|| Error::SingularFrame { point: frame.points[i].clone() })?;
        let g = &ainv * &(&adot + &(&omega * a));
        out.push((vec![frame.ts[i]], g.max_abs()));
    }
    let (a, b) = (frame.ts[0], frame.ts[m - 1]);
    Ok(NormalityReport::from_samples(Region::Path { t_range: (a, b), samples }, tolerance, out))
}

/// `curve` on the sub-interval `[start, end]`, which may reach slightly
/// past the curve's own range.
struct Restricted<'a> {
    curve: &'a PathCurve,
    start: f64,
    end: f64,
}

impl Curve for Restricted<'_> {
    fn dim(&self) -> usize {
        self.curve.dim()
    }

    fn t_range(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.curve.eval(t)
    }
}

#[derive(Debug)]
struct FermiMap {
    c: ConnectionField,
    axis: PathCurve,
    frame0: Matrix,
    steps: usize,
}

impl FermiMap {
    /// Transported frame at `t`; parameters up to [`AXIS_MARGIN`] of the
    /// range outside it are allowed so that the map can be differenced at
    /// the ends.
    fn frame_at(&self, t: f64) -> Result<Matrix> {
        let (a, b) = self.axis.t_range();
        let pad = AXIS_MARGIN * (b - a);
        if !(a - pad <= t && t <= b + pad) {
            return Err(Error::OutOfRange { value: t, lo: a, hi: b });
        }
        if t == a {
            Ok(self.frame0.clone())
        } else if t > a {
            let r = Restricted { curve: &self.axis, start: a, end: t };
            transport_matrix(&self.c, &r, &self.frame0, self.steps)
        } else {
            let r = Restricted { curve: &self.axis, start: t, end: a };
            transport_matrix(&self.c, &Reversed(&r), &self.frame0, self.steps)
        }
    }
}

impl NumericMap for FermiMap {
    fn direction(&self) -> MapDirection {
        MapDirection::NewToOld
    }

    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.c.dim();
        let t = p[0];
        let x = self.axis.point(t)?;
        if n == 1 {
            return Ok(x);
        }
        let e = self.frame_at(t)?;
        let v: Vec<f64> = (0..n).map(|i| (1..n).map(|a| e[(i, a)] * p[a]).sum()).collect();
        exp_map(&self.c, &x, &v, self.steps)
    }
}

/// Fermi coordinates `(t, ξ)` along a geodesic: the point with these
/// coordinates is `exp_{γ(t)}(ξᵃ eₐ(t))` for the transported transverse
/// vectors `eₐ`.
///
/// `transverse` holds `n − 1` columns completing `γ̇(a)` to a basis; by
/// default the coordinate basis vectors except the one along the largest
/// tangent component.
pub fn fermi_coords(
    c: &ConnectionField,
    axis: &PathCurve,
    transverse: Option<&Matrix>,
    steps: usize,
) -> Result<CoordinateChange> {
    let n = c.dim();
    let (a, b) = axis.t_range();
    if !(b > a) {
        return Err(Error::Invalid("a Fermi axis needs a non-empty parameter range".into()));
    }
    check_geodesic(c, axis, 65)?;
    let (x0, v0) = axis.eval(a)?;
    let frame0 = match transverse {
        Some(m) => {
            if m.rows() != n || m.cols() + 1 != n {
                return Err(Error::Invalid(format!("transverse frame must be {n}×{}", n - 1)));
            }
            Matrix::from_fn(n, n, |i, k| if k == 0 { v0[i] } else { m[(i, k - 1)] })
        }
        None => {
            let skip = (0..n).max_by(|&i, &j| v0[i].abs().total_cmp(&v0[j].abs())).unwrap();
            let others: Vec<usize> = (0..n).filter(|&i| i != skip).collect();
            Matrix::from_fn(n, n, |i, k| {
                if k == 0 {
                    v0[i]
                } else if i == others[k - 1] {
                    1.0
                } else {
                    0.0
                }
            })
        }
    };
    if frame0.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
        return Err(Error::SingularFrame { point: x0 });
    }
    let map = FermiMap { c: c.clone(), axis: axis.clone(), frame0, steps };
    let mut anchor_new = vec![0.0; n];
    anchor_new[0] = a;
    CoordinateChange::numeric(c.chart().clone(), Arc::new(map), x0, anchor_new, "fermi")
}

/// Checks torsion and the geodesic equation at `probes` parameters.
fn check_geodesic(c: &ConnectionField, axis: &PathCurve, probes: usize) -> Result<()> {
    let (a, b) = axis.t_range();
    for s in 0..probes {
        let t = a + (b - a) * s as f64 / (probes - 1) as f64;
        let x = axis.point(t)?;
        let torsion = torsion_at(c, &x)?.max_abs();
        if torsion > DEFAULT_TOL_T {
            return Err(Error::TorsionObstruction { point: x, norm: torsion });
        }
        let jets = axis.components().iter().map(|e| e.eval_jet(&[t])).collect::<Result<Vec<_>, _>>()?;
        let v: Vec<f64> = jets.iter().map(|j| j.gradient[0]).collect();
        let acc = c.coefficients(&x)?.quadratic(&v, &v);
        let residual = jets.iter().zip(&acc).fold(0.0f64, |m, (j, g)| m.max((j.hessian(0, 0) + g).abs()));
        if residual > GEODESIC_TOL {
            return Err(Error::Invalid(format!("Fermi axis is not a geodesic: residual {residual:e} at t = {t}")));
        }
    }
    Ok(())
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
    fn frame_normal_along_latitude() {
        let c = sphere();
        let p = PathCurve::parse(c.chart().clone(), &["1.0", "t"], (0.0, TAU)).unwrap();
        let f = normal_frame_along_path(&c, &p, &Matrix::identity(2), 400).unwrap();
        let r = verify_path_frame(&c, &f, 100, 1e-7).unwrap();
        assert!(r.is_normal(), "{r:?}");
        let g = f.times(&Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap());
        assert!(verify_path_frame(&c, &g, 100, 1e-7).unwrap().is_normal());
        // the coordinate frame is not normal along a latitude
        let mut id = f.clone();
        id.frames = vec![Matrix::identity(2); f.len()];
        assert!(!verify_path_frame(&c, &id, 100, 1e-7).unwrap().is_normal());
    }

    #[test]
    fn one_dimensional_quadrature() {
        let chart = Arc::new(Chart::new(&["x"]).unwrap());
        let c = ConnectionField::from_sources(chart.clone(), &[vec![vec!["x^2 + 1"]]]).unwrap();
        let p = PathCurve::parse(chart, &["2*t"], (0.0, 1.0)).unwrap();
        let f = normal_frame_along_path(&c, &p, &Matrix::identity(1), 200).unwrap();
        // A = exp(−∫ Γ(x) dx) over x ∈ [0, 2]
        let expected = (-(8.0 / 3.0 + 2.0f64)).exp();
        assert!((f.frames.last().unwrap()[(0, 0)] - expected).abs() < 1e-9);
    }

    #[test]
    fn fermi_on_equator() {
        let c = sphere();
        let eq = PathCurve::parse(c.chart().clone(), &["pi/2", "t"], (0.0, 3.0)).unwrap();
        let cc = fermi_coords(&c, &eq, None, 64).unwrap();
        // the transverse geodesics are meridians
        let x = cc.to_old(&[1.0, 0.3]).unwrap();
        assert!((x[0] - (FRAC_PI_2 + 0.3)).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
        for route in [Route::Frame, Route::Differences] {
            let g = cc.coefficients(&c, &[1.5, 0.0], route).unwrap();
            assert!(g.max_abs() < 1e-6, "{route:?} {}", g.max_abs());
        }
        let off = cc.coefficients(&c, &[1.5, 0.2], Route::Frame).unwrap();
        assert!(off.max_abs() > 1e-3);
        let back = cc.to_new(&x).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-9 && (back[1] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn fermi_rejects_non_geodesics() {
        let c = sphere();
        let lat = PathCurve::parse(c.chart().clone(), &["1.0", "t"], (0.0, 1.0)).unwrap();
        assert!(fermi_coords(&c, &lat, None, 64).is_err());
    }
}
