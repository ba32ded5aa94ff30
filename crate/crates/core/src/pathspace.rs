//! Linear transports along paths in a vector bundle of fibre dimension `k`
//! over a chart, represented by their general form `L_{s→t} = F⁻¹(t) F(s)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{Chart, Coefficients, ConnectionField};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD};
use crate::transport::{check_steps, coordinate_square, rk4, transport_matrix_along, Curve, PathCurve, SampledPath};

/// Default tolerance of the linearity check.
pub const LINEARITY_TOL: f64 = 1e-9;

/// Parameter values probed for invertibility of a generator.
const GENERATOR_PROBES: usize = 65;

#[derive(Debug, Clone)]
enum Generator {
    /// `k × k` expressions in `t`, row-major.
    Exprs(Vec<Expr>),
    /// Values on a uniform grid, interpolated by local cubics.
    Sampled { ts: Vec<f64>, values: Vec<Matrix> },
}

/// A linear transport along a path given by its generator `F(t)`.
#[derive(Debug, Clone)]
pub struct TransportLaw {
    k: usize,
    t_range: (f64, f64),
    generator: Generator,
    path: Option<PathCurve>,
}

impl TransportLaw {
    /// Generator from `k × k` expression sources in `t`, row-major.
    pub fn from_exprs<S: AsRef<str>>(chart: &Chart, k: usize, sources: &[S], t_range: (f64, f64)) -> Result<Self> {
        if k == 0 || sources.len() != k * k {
            return Err(Error::Invalid(format!("a {k}×{k} generator needs {} entries", k * k)));
        }
        let (a, b) = t_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::Invalid(format!("invalid parameter range [{a}, {b}]")));
        }
        let entries = sources.iter().map(|s| chart.parse_in_parameter(s.as_ref())).collect::<Result<Vec<_>>>()?;
        let law = TransportLaw { k, t_range, generator: Generator::Exprs(entries), path: None };
        law.check_invertible()?;
        Ok(law)
    }

    /// Attaches the base path; required for tangent-bundle operations.
    pub fn with_path(mut self, path: PathCurve) -> Result<Self> {
        if path.t_range() != self.t_range {
            return Err(Error::Invalid("path and generator have different parameter ranges".into()));
        }
        self.path = Some(path);
        Ok(self)
    }

    /// Fits a generator to a raw two-parameter family against the anchor
    /// `t₀ = a`: `F(t) = L_{a→t}⁻¹` on `samples + 1` uniform parameters.
    pub fn from_family<F>(k: usize, t_range: (f64, f64), samples: usize, family: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Result<Matrix>,
    {
        let (a, b) = t_range;
        if samples < 4 || !(a < b) {
            return Err(Error::Invalid("a sampled generator needs at least 4 intervals".into()));
        }
        let mut ts = Vec::with_capacity(samples + 1);
        let mut values = Vec::with_capacity(samples + 1);
        for i in 0..=samples {
            let t = if i == samples { b } else { a + (b - a) * i as f64 / samples as f64 };
            let l = family(a, t)?;
            if l.rows() != k || l.cols() != k {
                return Err(Error::Invalid(format!("family value at t = {t} is not {k}×{k}")));
            }
            let f = l.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t })?;
            ts.push(t);
            values.push(f);
        }
        Ok(TransportLaw { k, t_range, generator: Generator::Sampled { ts, values }, path: None })
    }

    /// The parallel transport of `c` along `path`: `F(t) = P(t)⁻¹` for the
    /// transport matrix `P(t) = L_{a→t}`, sampled at every step.
    pub fn from_connection(c: &ConnectionField, path: &PathCurve, steps: usize) -> Result<Self> {
        let (a, b) = path.t_range();
        if !(a < b) {
            return Err(Error::Invalid("a sampled generator needs a non-empty range".into()));
        }
        let n = c.dim();
        let along = transport_matrix_along(c, path, &Matrix::identity(n), steps)?;
        let values = along
            .values
            .iter()
            .zip(&along.ts)
            .map(|(p, t)| p.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t: *t }))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransportLaw {
            k: n,
            t_range: (a, b),
            generator: Generator::Sampled { ts: along.ts, values },
            path: Some(path.clone()),
        })
    }

    fn check_invertible(&self) -> Result<()> {
        let (a, b) = self.t_range;
        for i in 0..GENERATOR_PROBES {
            let t = a + (b - a) * i as f64 / (GENERATOR_PROBES - 1) as f64;
            if self.generator(t)?.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
                return Err(Error::SingularGenerator { t });
            }
        }
        Ok(())
    }

    /// Fibre dimension.
    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn t_range(&self) -> (f64, f64) {
        self.t_range
    }

    pub fn path(&self) -> Option<&PathCurve> {
        self.path.as_ref()
    }

    fn check_range(&self, t: f64) -> Result<()> {
        let (a, b) = self.t_range;
        if a <= t && t <= b {
            Ok(())
        } else {
            Err(Error::OutOfRange { value: t, lo: a, hi: b })
        }
    }

    /// `F(t)`.
    pub fn generator(&self, t: f64) -> Result<Matrix> {
        self.check_range(t)?;
        let k = self.k;
        match &self.generator {
            Generator::Exprs(e) => {
                let v = e.iter().map(|x| x.eval(&[t])).collect::<Result<Vec<_>, _>>()?;
                Ok(Matrix::from_row_major(k, k, v))
            }
            Generator::Sampled { ts, values } => Ok(interpolate(ts, values, t, false)),
        }
    }

    /// `dF/dt`, exact for expression generators.
    pub fn generator_derivative(&self, t: f64) -> Result<Matrix> {
        self.check_range(t)?;
        let k = self.k;
        match &self.generator {
            Generator::Exprs(e) => {
                let v = e.iter().map(|x| x.eval_dual(&[t]).map(|d| d.partial(0))).collect::<Result<Vec<_>, _>>()?;
                Ok(Matrix::from_row_major(k, k, v))
            }
            Generator::Sampled { ts, values } => Ok(interpolate(ts, values, t, true)),
        }
    }

    /// `L_{s→t} = F⁻¹(t) F(s)`; exactly the identity for `s = t`.
    pub fn matrix(&self, s: f64, t: f64) -> Result<Matrix> {
        self.check_range(s)?;
        self.check_range(t)?;
        if s == t {
            return Ok(Matrix::identity(self.k));
        }
        let ft = self.generator(t)?;
        let inv = ft.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t })?;
        Ok(&inv * &self.generator(s)?)
    }

    /// `L_{s→t} u`.
    pub fn apply(&self, s: f64, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.k {
            return Err(Error::Invalid(format!("fibre vector needs {} components", self.k)));
        }
        if s == t {
            self.check_range(s)?;
            return Ok(u.to_vec());
        }
        Ok(self.matrix(s, t)?.mul_vec(u))
    }

    /// The derivation `D u = u̇ + Γ(t) u` with `Γ = F⁻¹ Ḟ`.
    pub fn derivation(&self) -> PathDerivation {
        PathDerivation { law: self.clone() }
    }

    /// A frame along the path in which the transport matrix is the
    /// identity: `F⁻¹(t)` times the constant `c`.
    pub fn normal_frame(&self, t: f64, c: Option<&Matrix>) -> Result<Matrix> {
        let inv =
            self.generator(t)?.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t })?;
        Ok(match c {
            Some(c) => &inv * c,
            None => inv,
        })
    }

    /// `max |E(t)⁻¹ L_{s→t} E(s) − I|` over the pairs, for a frame `E`.
    pub fn frame_defect<E>(&self, frame: E, pairs: &[(f64, f64)]) -> Result<f64>
    where
        E: Fn(f64) -> Result<Matrix>,
    {
        let id = Matrix::identity(self.k);
        let mut worst: f64 = 0.0;
        for &(s, t) in pairs {
            let et = frame(t)?;
            let inv = et.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t })?;
            let m = &(&inv * &self.matrix(s, t)?) * &frame(s)?;
            worst = worst.max(m.max_abs_diff(&id));
        }
        Ok(worst)
    }
}

/// Local cubic through the four samples around `t`, or its derivative.
fn interpolate(ts: &[f64], values: &[Matrix], t: f64, derivative: bool) -> Matrix {
    let m = ts.len();
    let pos = ts.partition_point(|s| *s <= t).clamp(1, m - 1) - 1;
    let start = pos.saturating_sub(1).min(m.saturating_sub(4));
    let nodes: Vec<usize> = (start..(start + 4).min(m)).collect();
    let (rows, cols) = (values[0].rows(), values[0].cols());
    let mut out = Matrix::zeros(rows, cols);
    for &j in &nodes {
        let denom: f64 = nodes.iter().filter(|&&q| q != j).map(|&q| ts[j] - ts[q]).product();
        let w = if derivative {
            let mut s = 0.0;
            for &r in nodes.iter().filter(|&&r| r != j) {
                s += nodes.iter().filter(|&&q| q != j && q != r).map(|&q| t - ts[q]).product::<f64>();
            }
            s / denom
        } else {
            nodes.iter().filter(|&&q| q != j).map(|&q| t - ts[q]).product::<f64>() / denom
        };
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] += w * values[j][(r, c)];
            }
        }
    }
    out
}

/// Derivation along a path with 2-index coefficients `Γ(t) = F⁻¹ Ḟ`.
#[derive(Debug, Clone)]
pub struct PathDerivation {
    law: TransportLaw,
}

impl PathDerivation {
    pub fn dim(&self) -> usize {
        self.law.k
    }

    pub fn t_range(&self) -> (f64, f64) {
        self.law.t_range
    }

    /// `Γ(t)`.
    pub fn coefficients(&self, t: f64) -> Result<Matrix> {
        let f = self.law.generator(t)?;
        let inv = f.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or(Error::SingularGenerator { t })?;
        let g = &inv * &self.law.generator_derivative(t)?;
        if !g.is_finite() {
            return Err(Error::NonFinite { t });
        }
        Ok(g)
    }

    /// `D u = u̇ + Γ u` for a section given with its derivative.
    pub fn apply(&self, t: f64, u: &[f64], du: &[f64]) -> Result<Vec<f64>> {
        let g = self.coefficients(t)?.mul_vec(u);
        Ok(du.iter().zip(g).map(|(a, b)| a + b).collect())
    }

    /// Rebuilds `L_{s→t}` by integrating `U̇ = −Γ U`, `U(s) = I`.
    pub fn transport(&self, s: f64, t: f64, steps: usize) -> Result<Matrix> {
        check_steps(steps)?;
        self.law.check_range(s)?;
        self.law.check_range(t)?;
        let k = self.law.k;
        let y0 = Matrix::identity(k);
        let y = rk4(
            s,
            t,
            steps,
            y0.as_slice(),
            |t, y, dy| {
                let g = self.coefficients(t)?;
                for i in 0..k {
                    for c in 0..k {
                        dy[i * k + c] = -(0..k).map(|a| g[(i, a)] * y[a * k + c]).sum::<f64>();
                    }
                }
                Ok(())
            },
            |_, _| {},
        )?;
        Ok(Matrix::from_row_major(k, k, y))
    }
}

/// 2-index coefficients of a tangent-bundle transport as a function of the
/// point and the tangent vector of the path.
pub trait TangentCoefficients: Sync {
    fn dim(&self) -> usize;
    fn chart(&self) -> &Chart;
    /// `Ω(x, ẋ)`, an `n × n` matrix.
    fn coefficients(&self, x: &[f64], xdot: &[f64]) -> Result<Matrix>;
}

impl TangentCoefficients for ConnectionField {
    fn dim(&self) -> usize {
        ConnectionField::dim(self)
    }

    fn chart(&self) -> &Chart {
        ConnectionField::chart(self)
    }

    fn coefficients(&self, x: &[f64], xdot: &[f64]) -> Result<Matrix> {
        self.contract(x, xdot)
    }
}

/// `Ω = ‖ẋ‖ I`, homogeneous of the wrong degree.
#[derive(Debug, Clone)]
pub struct NormScaled<'a> {
    pub chart: &'a Chart,
}

impl TangentCoefficients for NormScaled<'_> {
    fn dim(&self) -> usize {
        self.chart.dim()
    }

    fn chart(&self) -> &Chart {
        self.chart
    }

    fn coefficients(&self, _x: &[f64], xdot: &[f64]) -> Result<Matrix> {
        let norm = xdot.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Matrix::identity(xdot.len()).scale(norm))
    }
}

/// Fermi-Walker-type coefficients for a metric connection and a prescribed
/// acceleration field `a(x)`:
/// `Ωⁱₖ = Γⁱⱼₖẋʲ + (ẋⁱ aₖ − aⁱ ẋₖ) / g(ẋ, ẋ)`. When `a` is the covariant
/// acceleration of the path, the tangent is carried along unchanged.
#[derive(Debug, Clone)]
pub struct FermiWalker {
    pub connection: ConnectionField,
    pub acceleration: Vec<Expr>,
}

impl TangentCoefficients for FermiWalker {
    fn dim(&self) -> usize {
        self.connection.dim()
    }

    fn chart(&self) -> &Chart {
        self.connection.chart()
    }

    fn coefficients(&self, x: &[f64], xdot: &[f64]) -> Result<Matrix> {
        let n = self.dim();
        let g = self
            .connection
            .metric()
            .ok_or_else(|| Error::Invalid("Fermi-Walker coefficients need a metric".into()))?
            .at(x)?;
        let a = self.acceleration.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        let lower = |v: &[f64]| -> Vec<f64> { (0..n).map(|k| (0..n).map(|j| g[(k, j)] * v[j]).sum()).collect() };
        let (al, vl) = (lower(&a), lower(xdot));
        let norm2: f64 = xdot.iter().zip(&vl).map(|(u, w)| u * w).sum();
        if norm2 == 0.0 {
            return Err(Error::Invalid("Fermi-Walker coefficients need a non-null tangent".into()));
        }
        let base = self.connection.contract(x, xdot)?;
        Ok(Matrix::from_fn(n, n, |i, k| base[(i, k)] + (xdot[i] * al[k] - a[i] * vl[k]) / norm2))
    }
}

/// Outcome of the linearity check.
#[derive(Debug, Clone, Serialize)]
pub struct LinearityReport {
    pub linear: bool,
    /// Largest relative violation of `Ω(αv + βw) = αΩ(v) + βΩ(w)`.
    pub max_defect: f64,
    pub tolerance: f64,
    pub samples: usize,
    /// With the strict flag: whether the extracted 3-index coefficients
    /// themselves vanish at the sample points.
    pub coefficients_vanish: Option<bool>,
    pub max_coefficient: Option<f64>,
}

/// Checks that the coefficients depend linearly on the tangent vector at
/// `samples` deterministic states (point, two tangents, two scalars, one of
/// the scalar pairs always `(−1, 0)`).
pub fn tangent_transport_linearity_check<T: TangentCoefficients + ?Sized>(
    coeff: &T,
    samples: usize,
    seed: u64,
    tolerance: f64,
    strict: bool,
) -> Result<LinearityReport> {
    let n = coeff.dim();
    let points = coeff.chart().sample_points(samples, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_defect: f64 = 0.0;
    let mut max_coefficient: f64 = 0.0;
    for (s, x) in points.iter().enumerate() {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = if s % 2 == 0 { (-1.0, 0.0) } else { (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)) };
        let mix: Vec<f64> = v.iter().zip(&w).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = coeff.coefficients(x, &mix)?;
        let rhs = &coeff.coefficients(x, &v)?.scale(alpha) + &coeff.coefficients(x, &w)?.scale(beta);
        let scale = lhs.max_abs().max(rhs.max_abs()).max(1.0);
        max_defect = max_defect.max(lhs.max_abs_diff(&rhs) / scale);
        if strict {
            max_coefficient = max_coefficient.max(extract_coefficients(coeff, x)?.max_abs());
        }
    }
    let linear = max_defect <= tolerance;
    Ok(LinearityReport {
        linear,
        max_defect,
        tolerance,
        samples: points.len(),
        coefficients_vanish: strict.then_some(linear && max_coefficient < tolerance),
        max_coefficient: strict.then_some(max_coefficient),
    })
}

/// `Γⁱⱼₖ(x) = Ω(x, eⱼ)ⁱₖ`, meaningful when `Ω` is linear in the tangent.
pub fn extract_coefficients<T: TangentCoefficients + ?Sized>(coeff: &T, x: &[f64]) -> Result<Coefficients> {
    let n = coeff.dim();
    let planes = (0..n)
        .map(|j| {
            let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            coeff.coefficients(x, &e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Coefficients::from_fn(n, |i, j, k| planes[j][(i, k)]))
}

/// Antisymmetrization `Γⁱⱼₖ − Γⁱₖⱼ` of the extracted coefficients.
pub fn transport_torsion<T: TangentCoefficients + ?Sized>(coeff: &T, x: &[f64]) -> Result<Coefficients> {
    let g = extract_coefficients(coeff, x)?;
    Ok(Coefficients::from_fn(coeff.dim(), |i, j, k| g.get(i, j, k) - g.get(i, k, j)))
}

/// Transport matrix of `u̇ = −Ω(x, ẋ) u` along a curve.
pub fn tangent_transport<T, C>(coeff: &T, curve: &C, steps: usize) -> Result<Matrix>
where
    T: TangentCoefficients + ?Sized,
    C: Curve + ?Sized,
{
    check_steps(steps)?;
    let n = coeff.dim();
    let (a, b) = curve.t_range();
    let total = b - a;
    let mut y = Matrix::identity(n).as_slice().to_vec();
    for (piece, (p, q)) in curve.pieces().into_iter().enumerate() {
        let m = ((steps as f64) * (q - p) / total).ceil().max(1.0) as usize;
        y = rk4(
            p,
            q,
            m,
            &y,
            |t, y, dy| {
                let (x, v) = curve.eval_piece(piece, t)?;
                if !coeff.chart().contains(&x) {
                    return Err(Error::DomainExit { t, point: x });
                }
                let o = coeff.coefficients(&x, &v)?;
                for i in 0..n {
                    for c in 0..n {
                        dy[i * n + c] = -(0..n).map(|k| o[(i, k)] * y[k * n + c]).sum::<f64>();
                    }
                }
                Ok(())
            },
            |_, _| {},
        )?;
    }
    Ok(Matrix::from_row_major(n, n, y))
}

/// `(Hol(ε) − I)/ε²` around the coordinate square of side `ε` at `x0` in
/// the plane `(j, l)`; tends to the curvature endomorphism `R(∂ⱼ, ∂ₗ)`.
pub fn transport_curvature<T: TangentCoefficients + ?Sized>(
    coeff: &T,
    x0: &[f64],
    j: usize,
    l: usize,
    eps: f64,
    steps: usize,
) -> Result<Matrix> {
    coeff.chart().require(x0)?;
    let square = coordinate_square(x0, j, l, eps)?;
    let h = tangent_transport(coeff, &square, steps)?;
    let n = coeff.dim();
    Ok((&h - &Matrix::identity(n)).scale(1.0 / (eps * eps)))
}

/// The path whose tangent is transported along itself:
/// `ẍ = −Ω(x, ẋ) ẋ` on `[0, t_max]`.
pub fn autoparallel<T: TangentCoefficients + ?Sized>(
    coeff: &T,
    x0: &[f64],
    v0: &[f64],
    t_max: f64,
    steps: usize,
) -> Result<SampledPath> {
    check_steps(steps)?;
    let n = coeff.dim();
    if x0.len() != n || v0.len() != n {
        return Err(Error::Invalid("point or vector has the wrong dimension".into()));
    }
    coeff.chart().require(x0)?;
    let y0: Vec<f64> = x0.iter().chain(v0).copied().collect();
    let mut out = SampledPath {
        ts: Vec::with_capacity(steps + 1),
        points: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
    };
    rk4(
        0.0,
        t_max,
        steps,
        &y0,
        |t, y, dy| {
            let (x, v) = y.split_at(n);
            if !coeff.chart().contains(x) {
                return Err(Error::DomainExit { t, point: x.to_vec() });
            }
            let acc = coeff.coefficients(x, v)?.mul_vec(v);
            dy[..n].copy_from_slice(v);
            for i in 0..n {
                dy[n + i] = -acc[i];
            }
            Ok(())
        },
        |t, y| {
            out.ts.push(t);
            out.points.push(y[..n].to_vec());
            out.velocities.push(y[n..].to_vec());
        },
    )?;
    Ok(out)
}
