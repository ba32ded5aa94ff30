use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::Chart;

/// A parametrized path in a chart.
pub trait Curve: Sync {
    fn dim(&self) -> usize;
    fn t_range(&self) -> (f64, f64);
    /// `γ(t)` and `γ̇(t)`.
    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)>;

    fn point(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.0)
    }

    fn tangent(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.1)
    }

    /// Parameter intervals on which the curve is smooth. Integrators restart
    /// at each boundary so a tangent jump never enters a Runge-Kutta stage.
    fn pieces(&self) -> Vec<(f64, f64)> {
        vec![self.t_range()]
    }

    /// Evaluation on a given piece, including at its closed end.
    fn eval_piece(&self, piece: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let _ = piece;
        self.eval(t)
    }
}

/// A path given by one expression in `t` per coordinate.
#[derive(Debug, Clone)]
pub struct PathCurve {
    chart: Arc<Chart>,
    components: Vec<Expr>,
    t_range: (f64, f64),
    name: Option<String>,
}

/// Number of parameter values probed when a path is constructed.
const PATH_PROBES: usize = 65;

impl PathCurve {
    /// Builds a path and checks that it stays inside the chart at
    /// evenly spaced parameter values.
    pub fn new(chart: Arc<Chart>, components: Vec<Expr>, t_range: (f64, f64)) -> Result<Self> {
        if components.len() != chart.dim() {
            return Err(Error::Invalid(format!("path needs {} components, got {}", chart.dim(), components.len())));
        }
        let (a, b) = t_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::Invalid(format!("invalid parameter range [{a}, {b}]")));
        }
        if let Some(e) = components.iter().find(|e| e.arity() > 1) {
            return Err(Error::Invalid(format!("path component `{e}` uses more than `t`")));
        }
        let path = PathCurve { chart, components, t_range, name: None };
        for i in 0..PATH_PROBES {
            let t = a + (b - a) * i as f64 / (PATH_PROBES - 1) as f64;
            let x = path.point(t)?;
            if !path.chart.contains(&x) {
                return Err(Error::DomainExit { t, point: x });
            }
        }
        Ok(path)
    }

    pub fn parse<S: AsRef<str>>(chart: Arc<Chart>, sources: &[S], t_range: (f64, f64)) -> Result<Self> {
        let components = sources.iter().map(|s| chart.parse_in_parameter(s.as_ref())).collect::<Result<Vec<_>>>()?;
        Self::new(chart, components, t_range)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Component sources in terms of `t`.
    pub fn render(&self) -> Vec<String> {
        let t = ["t".to_string()];
        self.components.iter().map(|e| e.render(&t)).collect()
    }

    pub fn is_point(&self) -> bool {
        self.t_range.0 == self.t_range.1
    }
}

impl Curve for PathCurve {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn t_range(&self) -> (f64, f64) {
        self.t_range
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = Vec::with_capacity(self.components.len());
        let mut v = Vec::with_capacity(self.components.len());
        for e in &self.components {
            let d = e.eval_dual(&[t])?;
            x.push(d.value);
            v.push(d.partial(0));
        }
        Ok((x, v))
    }
}

/// Piecewise-linear path through `vertices`; leg `i` is traversed for
/// `t ∈ [i, i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    vertices: Vec<Vec<f64>>,
}

impl Polyline {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Invalid("a polyline needs at least two vertices".into()));
        }
        let n = vertices[0].len();
        if vertices.iter().any(|v| v.len() != n) {
            return Err(Error::Invalid("polyline vertices differ in dimension".into()));
        }
        Ok(Polyline { vertices })
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn legs(&self) -> usize {
        self.vertices.len() - 1
    }

    /// Path from `from` to `to` moving along one coordinate axis at a time,
    /// in increasing axis order; axes with no displacement are skipped.
    pub fn axis_ordered(from: &[f64], to: &[f64]) -> Result<Self> {
        let mut vertices = vec![from.to_vec()];
        let mut current = from.to_vec();
        for axis in 0..from.len() {
            if to[axis] != current[axis] {
                current[axis] = to[axis];
                vertices.push(current.clone());
            }
        }
        if vertices.len() == 1 {
            vertices.push(current);
        }
        Self::new(vertices)
    }
}

impl Curve for Polyline {
    fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    fn t_range(&self) -> (f64, f64) {
        (0.0, self.legs() as f64)
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let leg = (t.floor().max(0.0) as usize).min(self.legs() - 1);
        self.eval_piece(leg, t)
    }

    fn pieces(&self) -> Vec<(f64, f64)> {
        (0..self.legs()).map(|i| (i as f64, (i + 1) as f64)).collect()
    }

    fn eval_piece(&self, leg: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = t - leg as f64;
        let (p, q) = (&self.vertices[leg], &self.vertices[leg + 1]);
        let x = p.iter().zip(q).map(|(a, b)| a + s * (b - a)).collect();
        let v = p.iter().zip(q).map(|(a, b)| b - a).collect();
        Ok((x, v))
    }
}

/// `c` traversed backwards on the same parameter interval.
pub struct Reversed<'a, C: Curve + ?Sized>(pub &'a C);

impl<C: Curve + ?Sized> Curve for Reversed<'_, C> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn t_range(&self) -> (f64, f64) {
        self.0.t_range()
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.0.t_range();
        let (x, v) = self.0.eval(a + b - t)?;
        Ok((x, v.into_iter().map(|c| -c).collect()))
    }

    fn pieces(&self) -> Vec<(f64, f64)> {
        let (a, b) = self.0.t_range();
        self.0.pieces().iter().rev().map(|(p, q)| (a + b - q, a + b - p)).collect()
    }

    fn eval_piece(&self, piece: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.0.t_range();
        let m = self.0.pieces().len();
        let (x, v) = self.0.eval_piece(m - 1 - piece, a + b - t)?;
        Ok((x, v.into_iter().map(|c| -c).collect()))
    }
}

/// A path known only at samples, with positions and velocities; evaluated
/// between samples by cubic Hermite interpolation.
#[derive(Debug, Clone, Serialize)]
pub struct SampledPath {
    pub ts: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl SampledPath {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn end(&self) -> &[f64] {
        self.points.last().expect("sampled path is never empty")
    }
}

impl Curve for SampledPath {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn t_range(&self) -> (f64, f64) {
        (self.ts[0], *self.ts.last().unwrap())
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (a, b) = self.t_range();
        if !(a <= t && t <= b) {
            return Err(Error::OutOfRange { value: t, lo: a, hi: b });
        }
        if self.ts.len() == 1 {
            return Ok((self.points[0].clone(), self.velocities[0].clone()));
        }
        let i = match self.ts.partition_point(|s| *s <= t) {
            0 => 0,
            p => (p - 1).min(self.ts.len() - 2),
        };
        let h = self.ts[i + 1] - self.ts[i];
        let s = (t - self.ts[i]) / h;
        let (h00, h10, h01, h11) = (
            2.0 * s * s * s - 3.0 * s * s + 1.0,
            s * s * s - 2.0 * s * s + s,
            -2.0 * s * s * s + 3.0 * s * s,
            s * s * s - s * s,
        );
        let (d00, d10, d01, d11) = (
            (6.0 * s * s - 6.0 * s) / h,
            3.0 * s * s - 4.0 * s + 1.0,
            (-6.0 * s * s + 6.0 * s) / h,
            3.0 * s * s - 2.0 * s,
        );
        let (p0, p1) = (&self.points[i], &self.points[i + 1]);
        let (m0, m1) = (&self.velocities[i], &self.velocities[i + 1]);
        let n = p0.len();
        let x = (0..n).map(|k| h00 * p0[k] + h10 * h * m0[k] + h01 * p1[k] + h11 * h * m1[k]).collect();
        let v = (0..n).map(|k| d00 * p0[k] + d10 * m0[k] + d01 * p1[k] + d11 * m1[k]).collect();
        Ok((x, v))
    }
}

/// The closed loop starting at `base` that advances coordinate `axis` by
/// one full period of the chart.
pub fn coordinate_circle(chart: &Arc<Chart>, base: &[f64], axis: usize) -> Result<PathCurve> {
    let period = chart
        .period(axis)
        .ok_or_else(|| Error::Invalid(format!("coordinate `{}` is not periodic", chart.names()[axis])))?;
    let components = (0..chart.dim())
        .map(|i| if i == axis { Expr::var(0) + Expr::num(base[i]) } else { Expr::num(base[i]) })
        .collect();
    PathCurve::new(chart.clone(), components, (0.0, period))
}

/// Square loop of side `eps` at `x0` in the coordinate plane `(j, l)`,
/// traversed along `l` first and then `j`, so that transport around it is
/// `δⁱₖ + ε² Rⁱₖⱼₗ(x0) + O(ε³)`.
pub fn coordinate_square(x0: &[f64], j: usize, l: usize, eps: f64) -> Result<Polyline> {
    if j == l || j >= x0.len() || l >= x0.len() {
        return Err(Error::Invalid(format!("bad coordinate plane ({j}, {l})")));
    }
    let mut p = x0.to_vec();
    let mut vertices = vec![p.clone()];
    for (axis, step) in [(l, eps), (j, eps), (l, -eps), (j, -eps)] {
        p[axis] += step;
        vertices.push(p.clone());
    }
    // close exactly
    *vertices.last_mut().unwrap() = x0.to_vec();
    Polyline::new(vertices)
}

/// Checks sampled points for approximate self-intersection: a pair closer
/// than `1e-9` whose parameters differ by more than 1% of the range. For a
/// closed path the final sample is skipped. Returns the first such pair.
pub fn find_self_intersection(chart: &Chart, ts: &[f64], points: &[Vec<f64>], closed: bool) -> Option<(f64, f64)> {
    if ts.len() < 2 {
        return None;
    }
    let span = ts[ts.len() - 1] - ts[0];
    let m = if closed { ts.len() - 1 } else { ts.len() };
    for a in 0..m {
        for b in a + 1..m {
            if ts[b] - ts[a] > 0.01 * span && chart.distance(&points[a], &points[b]) < 1e-9 {
                return Some((ts[a], ts[b]));
            }
        }
    }
    None
}
