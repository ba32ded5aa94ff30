use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::chart::{Chart, DEFAULT_SAMPLES};
use crate::error::{Error, Result};
use crate::expr::{Dual, Expr, Jet};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD, PIVOT_THRESHOLD};

/// Connection coefficients `Γⁱⱼₖ` at a point.
///
/// Index convention, used throughout the crate: `i` is the output index, `j`
/// the direction of differentiation and `k` the transported index, so that
/// `∇ⱼ eₖ = Γⁱⱼₖ eᵢ` and parallel transport reads `u̇ⁱ + Γⁱⱼₖ γ̇ʲ uᵏ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    n: usize,
    data: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(n: usize) -> Self {
        Coefficients { n, data: vec![0.0; n * n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut c = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c.data[(i * n + j) * n + k] = f(i, j, k);
                }
            }
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `½(Γⁱⱼₖ + Γⁱₖⱼ)`: coefficients of a torsion-free connection.
    pub fn symmetric_part(&self) -> Coefficients {
        Coefficients::from_fn(self.n, |i, j, k| 0.5 * (self.get(i, j, k) + self.get(i, k, j)))
    }

    /// `Ω(v)ⁱₖ = Γⁱⱼₖ vʲ`, the matrix acting on transported vectors along `v`.
    pub fn contract(&self, v: &[f64]) -> Matrix {
        let n = self.n;
        let mut m = Matrix::zeros(n, n);
        for (j, vj) in v.iter().enumerate() {
            if *vj == 0.0 {
                continue;
            }
            for i in 0..n {
                for k in 0..n {
                    m[(i, k)] += self.get(i, j, k) * vj;
                }
            }
        }
        m
    }

    /// `Γⁱⱼₖ vʲ wᵏ`.
    pub fn quadratic(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    for k in 0..n {
                        s += self.get(i, j, k) * v[j] * w[k];
                    }
                }
                s
            })
            .collect()
    }

    /// Nested `[i][j][k]` array.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.n;
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| self.get(i, j, k)).collect()).collect()).collect()
    }
}

/// `∂ₘΓⁱⱼₖ` at a point.
#[derive(Debug, Clone)]
pub struct CoefficientDerivatives {
    n: usize,
    data: Vec<f64>,
}

impl CoefficientDerivatives {
    fn zeros(n: usize) -> Self {
        CoefficientDerivatives { n, data: vec![0.0; n * n * n * n] }
    }

    /// `∂ₘΓⁱⱼₖ`.
    #[inline]
    pub fn get(&self, m: usize, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n;
        self.data[((m * n + i) * n + j) * n + k]
    }

    #[inline]
    fn set(&mut self, m: usize, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[((m * n + i) * n + j) * n + k] = v;
    }
}

/// `Tⁱⱼₖ = Γⁱⱼₖ − Γⁱₖⱼ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionTensor {
    n: usize,
    data: Vec<f64>,
}

impl TorsionTensor {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.n;
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| self.get(i, j, k)).collect()).collect()).collect()
    }
}

/// `Rⁱₖⱼₗ = ∂ⱼΓⁱₗₖ − ∂ₗΓⁱⱼₖ + ΓⁱⱼₐΓᵃₗₖ − ΓⁱₗₐΓᵃⱼₖ`, i.e. `R(∂ⱼ, ∂ₗ)∂ₖ = Rⁱₖⱼₗ ∂ᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTensor {
    n: usize,
    data: Vec<f64>,
}

impl CurvatureTensor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        let n = self.n;
        self.data[((i * n + k) * n + j) * n + l]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// The endomorphism `R(∂ⱼ, ∂ₗ)` as a matrix `[i][k]`.
    pub fn plane(&self, j: usize, l: usize) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, k| self.get(i, k, j, l))
    }

    /// `R_{ikjl} = g_{ia} Rᵃₖⱼₗ`.
    pub fn lowered(&self, g: &Matrix) -> CurvatureTensor {
        let n = self.n;
        let mut data = vec![0.0; n * n * n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        data[((i * n + k) * n + j) * n + l] = (0..n).map(|a| g[(i, a)] * self.get(a, k, j, l)).sum();
                    }
                }
            }
        }
        CurvatureTensor { n, data }
    }

    /// Components of the same tensor in a frame `E` (columns are the new
    /// basis vectors) for the fully covariant form.
    pub fn covariant_in_frame(&self, frame: &Matrix) -> CurvatureTensor {
        let n = self.n;
        let mut data = vec![0.0; n * n * n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                for c in 0..n {
                                    for d in 0..n {
                                        s += self.get(a, b, c, d)
                                            * frame[(a, i)]
                                            * frame[(b, k)]
                                            * frame[(c, j)]
                                            * frame[(d, l)];
                                    }
                                }
                            }
                        }
                        data[((i * n + k) * n + j) * n + l] = s;
                    }
                }
            }
        }
        CurvatureTensor { n, data }
    }
}

/// A (pseudo-)Riemannian metric with components stored as an upper triangle.
#[derive(Debug, Clone)]
pub struct MetricField {
    chart: Arc<Chart>,
    upper: Vec<Expr>,
    signature_hint: Option<Vec<i8>>,
}

fn tri(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl MetricField {
    /// Builds a metric from its upper triangle (row-major, `n(n+1)/2`
    /// entries) and checks non-degeneracy on the chart's sample points.
    pub fn new(chart: Arc<Chart>, upper: Vec<Expr>) -> Result<Self> {
        let n = chart.dim();
        if upper.len() != n * (n + 1) / 2 {
            return Err(Error::Invalid(format!(
                "metric needs {} upper-triangle entries, got {}",
                n * (n + 1) / 2,
                upper.len()
            )));
        }
        let metric = MetricField { chart, upper, signature_hint: None };
        for p in metric.chart.sample_points(DEFAULT_SAMPLES, 0) {
            let g = metric.at(&p)?;
            if g.scaled_determinant().abs() <= PIVOT_THRESHOLD {
                return Err(Error::SingularMetric { point: p });
            }
        }
        Ok(metric)
    }

    /// Parses upper-triangle rows (`rows[i]` holds `g[i][i..]`).
    pub fn from_upper_rows<S: AsRef<str>>(chart: Arc<Chart>, rows: &[Vec<S>]) -> Result<Self> {
        let mut upper = Vec::new();
        for row in rows {
            for s in row {
                upper.push(chart.parse(s.as_ref())?);
            }
        }
        Self::new(chart, upper)
    }

    /// Diagonal metric from component sources.
    pub fn diagonal<S: AsRef<str>>(chart: Arc<Chart>, diag: &[S]) -> Result<Self> {
        let n = chart.dim();
        let rows: Vec<Vec<String>> = (0..n)
            .map(|i| (i..n).map(|j| if i == j { diag[i].as_ref().to_string() } else { "0".into() }).collect())
            .collect();
        Self::from_upper_rows(chart, &rows)
    }

    pub fn with_signature_hint(mut self, hint: Vec<i8>) -> Self {
        self.signature_hint = Some(hint);
        self
    }

    pub fn signature_hint(&self) -> Option<&[i8]> {
        self.signature_hint.as_deref()
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn component(&self, i: usize, j: usize) -> &Expr {
        &self.upper[tri(self.dim(), i, j)]
    }

    pub fn at(&self, x: &[f64]) -> Result<Matrix> {
        let n = self.dim();
        let vals: Vec<f64> = self.upper.iter().map(|e| e.eval(x)).collect::<Result<_, _>>()?;
        Ok(Matrix::from_fn(n, n, |i, j| vals[tri(n, i, j)]))
    }

    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.at(x)?;
        Ok(u.iter().zip(g.mul_vec(v)).map(|(a, b)| a * b).sum())
    }

    fn duals(&self, x: &[f64]) -> Result<Vec<Dual>> {
        Ok(self.upper.iter().map(|e| e.eval_dual(x)).collect::<Result<_, _>>()?)
    }

    fn jets(&self, x: &[f64]) -> Result<Vec<Jet>> {
        Ok(self.upper.iter().map(|e| e.eval_jet2(x)).collect::<Result<_, _>>()?)
    }

    fn inverse_at(&self, g: &Matrix, x: &[f64]) -> Result<Matrix> {
        g.inverse().ok_or_else(|| Error::SingularMetric { point: x.to_vec() })
    }

    fn christoffel(&self, x: &[f64]) -> Result<Coefficients> {
        let n = self.dim();
        let d = self.duals(x)?;
        let g = Matrix::from_fn(n, n, |i, j| d[tri(n, i, j)].value);
        let ginv = self.inverse_at(&g, x)?;
        // dg(m, a, b) = ∂ₘ g_ab
        let dg = |m: usize, a: usize, b: usize| d[tri(n, a, b)].partial(m);
        let mut lowered = vec![0.0; n * n * n];
        for l in 0..n {
            for j in 0..n {
                for k in j..n {
                    let s = dg(j, l, k) + dg(k, l, j) - dg(l, j, k);
                    lowered[(l * n + j) * n + k] = s;
                    lowered[(l * n + k) * n + j] = s;
                }
            }
        }
        let mut out = Coefficients::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in j..n {
                    let v: f64 = 0.5 * (0..n).map(|l| ginv[(i, l)] * lowered[(l * n + j) * n + k]).sum::<f64>();
                    out.set(i, j, k, v);
                    out.set(i, k, j, v);
                }
            }
        }
        Ok(out)
    }

    fn christoffel_with_derivatives(&self, x: &[f64]) -> Result<(Coefficients, CoefficientDerivatives)> {
        let n = self.dim();
        let jets = self.jets(x)?;
        let g = Matrix::from_fn(n, n, |i, j| jets[tri(n, i, j)].value);
        let ginv = self.inverse_at(&g, x)?;
        let dg = |m: usize, a: usize, b: usize| jets[tri(n, a, b)].partial(m);
        let ddg = |m: usize, p: usize, a: usize, b: usize| jets[tri(n, a, b)].second(m, p);

        // S_ljk and ∂ₘS_ljk
        let idx = |l: usize, j: usize, k: usize| (l * n + j) * n + k;
        let mut s = vec![0.0; n * n * n];
        let mut ds = vec![0.0; n * n * n * n];
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    s[idx(l, j, k)] = dg(j, l, k) + dg(k, l, j) - dg(l, j, k);
                    for m in 0..n {
                        ds[m * n * n * n + idx(l, j, k)] = ddg(m, j, l, k) + ddg(m, k, l, j) - ddg(m, l, j, k);
                    }
                }
            }
        }
        // ∂ₘ g^{il} = −g^{ia} ∂ₘ g_ab g^{bl}
        let dginv: Vec<Matrix> = (0..n)
            .map(|m| {
                let dgm = Matrix::from_fn(n, n, |a, b| dg(m, a, b));
                (&(&ginv * &dgm) * &ginv).scale(-1.0)
            })
            .collect();

        let mut gamma = Coefficients::zeros(n);
        let mut dgamma = CoefficientDerivatives::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in j..n {
                    let mut v = 0.0;
                    for l in 0..n {
                        v += ginv[(i, l)] * s[idx(l, j, k)];
                    }
                    gamma.set(i, j, k, 0.5 * v);
                    gamma.set(i, k, j, 0.5 * v);
                    for m in 0..n {
                        let mut dv = 0.0;
                        for l in 0..n {
                            dv += dginv[m][(i, l)] * s[idx(l, j, k)] + ginv[(i, l)] * ds[m * n * n * n + idx(l, j, k)];
                        }
                        dgamma.set(m, i, j, k, 0.5 * dv);
                        dgamma.set(m, i, k, j, 0.5 * dv);
                    }
                }
            }
        }
        Ok((gamma, dgamma))
    }
}

#[derive(Debug, Clone)]
enum Source {
    Metric(MetricField),
    Direct(Vec<Expr>),
}

/// Whether a connection came from a metric or was given component-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionOrigin {
    MetricDerived,
    Direct,
}

/// A linear connection on a chart.
#[derive(Debug, Clone)]
pub struct ConnectionField {
    chart: Arc<Chart>,
    source: Source,
}

/// The Levi-Civita connection of `g`.
pub fn christoffel_from_metric(g: &MetricField) -> ConnectionField {
    ConnectionField { chart: g.chart.clone(), source: Source::Metric(g.clone()) }
}

impl ConnectionField {
    /// A connection given by `n³` component expressions, `gamma[(i·n + j)·n + k]`.
    pub fn direct(chart: Arc<Chart>, gamma: Vec<Expr>) -> Result<Self> {
        let n = chart.dim();
        if gamma.len() != n * n * n {
            return Err(Error::Invalid(format!("connection needs {} components, got {}", n * n * n, gamma.len())));
        }
        let c = ConnectionField { chart, source: Source::Direct(gamma) };
        for p in c.chart.sample_points(DEFAULT_SAMPLES, 0) {
            c.coefficients(&p)?;
        }
        Ok(c)
    }

    /// Parses nested `[i][j][k]` component sources.
    pub fn from_sources<S: AsRef<str>>(chart: Arc<Chart>, gamma: &[Vec<Vec<S>>]) -> Result<Self> {
        let n = chart.dim();
        let shape_ok = gamma.len() == n && gamma.iter().all(|r| r.len() == n && r.iter().all(|c| c.len() == n));
        if !shape_ok {
            return Err(Error::Invalid(format!("connection components must be {n}×{n}×{n}")));
        }
        let mut exprs = Vec::with_capacity(n * n * n);
        for plane in gamma {
            for row in plane {
                for s in row {
                    exprs.push(chart.parse(s.as_ref())?);
                }
            }
        }
        Self::direct(chart, exprs)
    }

    /// The zero connection on `chart`.
    pub fn flat(chart: Arc<Chart>) -> Self {
        let n = chart.dim();
        ConnectionField { chart, source: Source::Direct(vec![Expr::Num(0.0); n * n * n]) }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn origin(&self) -> ConnectionOrigin {
        match self.source {
            Source::Metric(_) => ConnectionOrigin::MetricDerived,
            Source::Direct(_) => ConnectionOrigin::Direct,
        }
    }

    pub fn metric(&self) -> Option<&MetricField> {
        match &self.source {
            Source::Metric(g) => Some(g),
            Source::Direct(_) => None,
        }
    }

    /// Component expressions for direct connections.
    pub fn component_exprs(&self) -> Option<&[Expr]> {
        match &self.source {
            Source::Direct(e) => Some(e),
            Source::Metric(_) => None,
        }
    }

    /// `Γ(x)`. Does not test domain membership.
    pub fn coefficients(&self, x: &[f64]) -> Result<Coefficients> {
        match &self.source {
            Source::Metric(g) => g.christoffel(x),
            Source::Direct(e) => {
                let n = self.dim();
                let data = e.iter().map(|c| c.eval(x)).collect::<Result<Vec<_>, _>>()?;
                Ok(Coefficients { n, data })
            }
        }
    }

    /// `Γ(x)` and `∂Γ(x)` from exact jets.
    pub fn coefficients_with_derivatives(&self, x: &[f64]) -> Result<(Coefficients, CoefficientDerivatives)> {
        match &self.source {
            Source::Metric(g) => g.christoffel_with_derivatives(x),
            Source::Direct(e) => {
                let n = self.dim();
                let mut gamma = Coefficients::zeros(n);
                let mut dgamma = CoefficientDerivatives::zeros(n);
                for (idx, c) in e.iter().enumerate() {
                    let d = c.eval_dual(x)?;
                    gamma.data[idx] = d.value;
                    for m in 0..n {
                        dgamma.data[m * n * n * n + idx] = d.partial(m);
                    }
                }
                Ok((gamma, dgamma))
            }
        }
    }

    /// `Ω(v)ⁱₖ = Γⁱⱼₖ(x) vʲ`.
    pub fn contract(&self, x: &[f64], v: &[f64]) -> Result<Matrix> {
        Ok(self.coefficients(x)?.contract(v))
    }
}

/// Torsion at `x`.
pub fn torsion_at(c: &ConnectionField, x: &[f64]) -> Result<TorsionTensor> {
    c.chart.require(x)?;
    let gamma = c.coefficients(x)?;
    let n = c.dim();
    let mut data = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data[(i * n + j) * n + k] = gamma.get(i, j, k) - gamma.get(i, k, j);
            }
        }
    }
    Ok(TorsionTensor { n, data })
}

/// Curvature at `x` from exact first derivatives of the coefficients.
pub fn curvature_at(c: &ConnectionField, x: &[f64]) -> Result<CurvatureTensor> {
    c.chart.require(x)?;
    let (g, dg) = c.coefficients_with_derivatives(x)?;
    Ok(curvature_from(&g, &dg))
}

pub(crate) fn curvature_from(g: &Coefficients, dg: &CoefficientDerivatives) -> CurvatureTensor {
    let n = g.dim();
    let mut data = vec![0.0; n * n * n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let mut r = dg.get(j, i, l, k) - dg.get(l, i, j, k);
                    for a in 0..n {
                        r += g.get(i, j, a) * g.get(a, l, k) - g.get(i, l, a) * g.get(a, j, k);
                    }
                    data[((i * n + k) * n + j) * n + l] = r;
                }
            }
        }
    }
    CurvatureTensor { n, data }
}

/// Frame-change law at a point: given `Γ`, the frame matrix `A` (new frame
/// `e′ₖ = Aᵃₖ eₐ`) and its partials `dA[b] = ∂_b A`, returns
/// `Γ′ⁱⱼₖ = (A⁻¹)ⁱₐ (Aᵇⱼ ∂_b Aᵃₖ + Aᵇⱼ Aᶜₖ Γᵃ_bc)`.
pub fn transform_coefficients(gamma: &Coefficients, a: &Matrix, da: &[Matrix], x: &[f64]) -> Result<Coefficients> {
    let n = gamma.dim();
    let inv =
        a.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).ok_or_else(|| Error::SingularFrame { point: x.to_vec() })?;
    let mut out = Coefficients::zeros(n);
    for j in 0..n {
        // column j of A is the direction of the new j-th basis vector
        let dir = a.column(j);
        let omega = gamma.contract(&dir);
        // D = Σ_b Aᵇⱼ ∂_b A + Ω(Aⱼ) A
        let mut d = &omega * a;
        for (b, dab) in da.iter().enumerate() {
            let w = dir[b];
            if w == 0.0 {
                continue;
            }
            for r in 0..n {
                for k in 0..n {
                    d[(r, k)] += w * dab[(r, k)];
                }
            }
        }
        let t = &inv * &d;
        for i in 0..n {
            for k in 0..n {
                out.set(i, j, k, t[(i, k)]);
            }
        }
    }
    Ok(out)
}

/// A change of frame given by expressions `Aᵃₖ(x)`: `e′ₖ = Aᵃₖ eₐ`.
#[derive(Debug, Clone)]
pub struct FrameField {
    chart: Arc<Chart>,
    entries: Vec<Expr>,
}

impl FrameField {
    /// Row-major `n×n` entries.
    pub fn new(chart: Arc<Chart>, entries: Vec<Expr>) -> Result<Self> {
        let n = chart.dim();
        if entries.len() != n * n {
            return Err(Error::Invalid(format!("frame needs {} entries, got {}", n * n, entries.len())));
        }
        Ok(FrameField { chart, entries })
    }

    pub fn identity(chart: Arc<Chart>) -> Self {
        let n = chart.dim();
        let entries = (0..n * n).map(|idx| Expr::Num(if idx / n == idx % n { 1.0 } else { 0.0 })).collect();
        FrameField { chart, entries }
    }

    pub fn constant(chart: Arc<Chart>, b: &Matrix) -> Result<Self> {
        Self::new(chart, b.as_slice().iter().map(|v| Expr::Num(*v)).collect())
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn entry(&self, a: usize, k: usize) -> &Expr {
        &self.entries[a * self.dim() + k]
    }

    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    /// Entries rendered with the chart's coordinate names.
    pub fn render(&self) -> Vec<Vec<String>> {
        let n = self.dim();
        (0..n).map(|a| (0..n).map(|k| self.entry(a, k).render(self.chart.names())).collect()).collect()
    }

    pub fn at(&self, x: &[f64]) -> Result<Matrix> {
        let n = self.dim();
        let data = self.entries.iter().map(|e| e.eval(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::from_row_major(n, n, data))
    }

    /// `A(x)` and `∂_b A(x)` for each `b`.
    pub fn with_derivatives(&self, x: &[f64]) -> Result<(Matrix, Vec<Matrix>)> {
        let n = self.dim();
        let duals = self.entries.iter().map(|e| e.eval_dual(x)).collect::<Result<Vec<_>, _>>()?;
        let a = Matrix::from_fn(n, n, |r, c| duals[r * n + c].value);
        let da = (0..n).map(|b| Matrix::from_fn(n, n, |r, c| duals[r * n + c].partial(b))).collect();
        Ok((a, da))
    }

    /// The frame `A·B` for a constant matrix `B`.
    pub fn compose_constant(&self, b: &Matrix) -> FrameField {
        let n = self.dim();
        let mut entries = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let mut e = Expr::Num(0.0);
                for k in 0..n {
                    e = e + self.entry(r, k).clone() * Expr::Num(b[(k, c)]);
                }
                entries.push(e);
            }
        }
        FrameField { chart: self.chart.clone(), entries }
    }

    /// Fails with `SingularFrame` at the first chart sample point where the
    /// frame is not invertible.
    pub fn check_invertible_on_samples(&self) -> Result<()> {
        for p in self.chart.sample_points(DEFAULT_SAMPLES, 0) {
            let a = self.at(&p)?;
            if a.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
                return Err(Error::SingularFrame { point: p });
            }
        }
        Ok(())
    }
}

/// Coefficients of `c` in the frame `frame` at `x`.
pub fn transform_connection(c: &ConnectionField, frame: &FrameField, x: &[f64]) -> Result<Coefficients> {
    c.chart.require(x)?;
    let gamma = c.coefficients(x)?;
    let (a, da) = frame.with_derivatives(x)?;
    transform_coefficients(&gamma, &a, &da, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polar() -> ConnectionField {
        let chart = Arc::new(Chart::new(&["r", "ph"]).unwrap().with_bounds(0, 0.1, 5.0).unwrap());
        christoffel_from_metric(&MetricField::diagonal(chart, &["1", "r^2"]).unwrap())
    }

    fn sphere() -> ConnectionField {
        let chart = Arc::new(Chart::new(&["th", "ph"]).unwrap().with_bounds(0, 0.0, std::f64::consts::PI).unwrap());
        christoffel_from_metric(&MetricField::diagonal(chart, &["1", "sin(th)^2"]).unwrap())
    }

    #[test]
    fn polar_christoffels() {
        let g = polar().coefficients(&[2.0, 0.3]).unwrap();
        assert!((g.get(0, 1, 1) + 2.0).abs() < 1e-15);
        assert!((g.get(1, 0, 1) - 0.5).abs() < 1e-15);
        assert!((g.get(1, 1, 0) - 0.5).abs() < 1e-15);
        assert_eq!(g.get(0, 0, 0), 0.0);
    }

    #[test]
    fn sphere_curvature_component() {
        let th = 1.1f64;
        let r = curvature_at(&sphere(), &[th, 0.2]).unwrap();
        assert!((r.get(0, 1, 0, 1) - th.sin().powi(2)).abs() < 1e-14);
        assert!((r.get(0, 1, 1, 0) + th.sin().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn flat_polar_curvature_vanishes() {
        assert!(curvature_at(&polar(), &[1.3, 0.4]).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn direct_torsion_example() {
        let chart = Arc::new(Chart::new(&["x", "y"]).unwrap());
        let z = || vec![vec!["0", "0"], vec!["0", "0"]];
        let mut gamma = vec![z(), z()];
        gamma[0][0][1] = "1";
        let c = ConnectionField::from_sources(chart, &gamma).unwrap();
        let t = torsion_at(&c, &[0.0, 0.0]).unwrap();
        assert_eq!(t.get(0, 0, 1), 1.0);
        assert_eq!(t.get(0, 1, 0), -1.0);
        assert_eq!(c.origin(), ConnectionOrigin::Direct);
    }

    #[test]
    fn identity_frame_leaves_coefficients() {
        let c = sphere();
        let f = FrameField::identity(c.chart().clone());
        let x = [0.7, 1.0];
        assert_eq!(transform_connection(&c, &f, &x).unwrap(), c.coefficients(&x).unwrap());
    }

    #[test]
    fn singular_metric_rejected() {
        let chart = Arc::new(Chart::new(&["u", "v"]).unwrap());
        let err = MetricField::from_upper_rows(chart, &[vec!["0", "0"], vec!["1"]]).unwrap_err();
        assert!(matches!(err, Error::SingularMetric { .. }));
    }
}
