use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::report::{NormalityReport, Region};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{transform_coefficients, Chart, Coefficients, ConnectionField};
use crate::linalg::{max_abs, Matrix, FRAME_PIVOT_THRESHOLD};

/// Step for first derivatives of numeric maps.
pub const FD_STEP_FIRST: f64 = 1e-5;
/// Step for second derivatives of numeric maps.
pub const FD_STEP_SECOND: f64 = 1e-3;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERATIONS: usize = 50;

/// Which way a coordinate change is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapDirection {
    /// `x ↦ x′`
    OldToNew,
    /// `x′ ↦ x`
    NewToOld,
}

/// How transformed coefficients are obtained for verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Through the induced frame `Aᵃₖ = ∂xᵃ/∂x′ᵏ` and the frame-change law.
    Frame,
    /// Finite differences of the map and the coordinate-change formula.
    Differences,
}

/// A coordinate change known only numerically.
pub(crate) trait NumericMap: Send + Sync + fmt::Debug {
    fn direction(&self) -> MapDirection;
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>>;
    /// Exact Jacobian, when the construction carries one.
    fn jacobian(&self, _p: &[f64]) -> Option<Result<Matrix>> {
        None
    }
    /// Exact inverse, when the construction has one.
    fn invert(&self, _q: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Closed(Vec<Expr>),
    Numeric(Arc<dyn NumericMap>),
}

/// A change of coordinates `x ↔ x′` on (part of) a chart.
///
/// Closed-form changes are given by expressions `x′(x)` with exact jets.
/// Numeric changes come from integrations and are evaluated in one direction
/// only; the other direction is solved for by Newton iteration.
#[derive(Debug, Clone)]
pub struct CoordinateChange {
    chart: Arc<Chart>,
    kind: Kind,
    anchor_old: Vec<f64>,
    anchor_new: Vec<f64>,
    label: String,
}

impl CoordinateChange {
    /// Closed-form change `x′ = forward(x)` anchored at `anchor`.
    pub fn closed(chart: Arc<Chart>, forward: Vec<Expr>, anchor: &[f64], label: &str) -> Result<Self> {
        let n = chart.dim();
        if forward.len() != n {
            return Err(Error::Invalid(format!("coordinate change needs {n} components")));
        }
        let anchor_new = forward.iter().map(|e| e.eval(anchor)).collect::<Result<Vec<_>, _>>()?;
        let cc = CoordinateChange {
            chart,
            kind: Kind::Closed(forward),
            anchor_old: anchor.to_vec(),
            anchor_new,
            label: label.to_string(),
        };
        cc.check_anchor()?;
        Ok(cc)
    }

    pub(crate) fn numeric(
        chart: Arc<Chart>,
        map: Arc<dyn NumericMap>,
        anchor_old: Vec<f64>,
        anchor_new: Vec<f64>,
        label: &str,
    ) -> Result<Self> {
        let cc = CoordinateChange { chart, kind: Kind::Numeric(map), anchor_old, anchor_new, label: label.to_string() };
        cc.check_anchor()?;
        Ok(cc)
    }

    fn check_anchor(&self) -> Result<()> {
        let p = self.anchor_in_map_domain().to_vec();
        let j = self.jacobian(&p)?;
        if j.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
            return Err(Error::SingularFrame { point: self.anchor_old.clone() });
        }
        Ok(())
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn anchor_old(&self) -> &[f64] {
        &self.anchor_old
    }

    pub fn anchor_new(&self) -> &[f64] {
        &self.anchor_new
    }

    pub fn direction(&self) -> MapDirection {
        match &self.kind {
            Kind::Closed(_) => MapDirection::OldToNew,
            Kind::Numeric(m) => m.direction(),
        }
    }

    /// The anchor expressed in the coordinates the map takes as input.
    pub fn anchor_in_map_domain(&self) -> &[f64] {
        match self.direction() {
            MapDirection::OldToNew => &self.anchor_old,
            MapDirection::NewToOld => &self.anchor_new,
        }
    }

    /// `x′(x)` expressions for closed-form changes.
    pub fn forward_exprs(&self) -> Option<&[Expr]> {
        match &self.kind {
            Kind::Closed(f) => Some(f),
            Kind::Numeric(_) => None,
        }
    }

    /// Closed-form components rendered over the chart's coordinate names.
    pub fn render(&self) -> Option<Vec<String>> {
        self.forward_exprs().map(|f| f.iter().map(|e| e.render(self.chart.names())).collect())
    }

    /// The map in its own direction.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            Kind::Closed(f) => Ok(f.iter().map(|e| e.eval(p)).collect::<Result<Vec<_>, _>>()?),
            Kind::Numeric(m) => m.apply(p),
        }
    }

    /// Jacobian of [`apply`](Self::apply), exact when available.
    pub fn jacobian(&self, p: &[f64]) -> Result<Matrix> {
        match &self.kind {
            Kind::Closed(f) => {
                let n = f.len();
                let duals = f.iter().map(|e| e.eval_dual(p)).collect::<Result<Vec<_>, _>>()?;
                Ok(Matrix::from_fn(n, n, |i, j| duals[i].partial(j)))
            }
            Kind::Numeric(m) => match m.jacobian(p) {
                Some(j) => j,
                None => fd_jacobian(|q| m.apply(q), p, FD_STEP_FIRST),
            },
        }
    }

    fn has_exact_jacobian(&self, p: &[f64]) -> bool {
        match &self.kind {
            Kind::Closed(_) => true,
            Kind::Numeric(m) => m.jacobian(p).is_some(),
        }
    }

    /// New coordinates of the old point `x`.
    pub fn to_new(&self, x: &[f64]) -> Result<Vec<f64>> {
        match (self.direction(), &self.kind) {
            (MapDirection::OldToNew, _) => self.apply(x),
            (MapDirection::NewToOld, Kind::Numeric(m)) => match m.invert(x) {
                Some(r) => r,
                None => self.newton(x),
            },
            (MapDirection::NewToOld, Kind::Closed(_)) => unreachable!(),
        }
    }

    /// Old coordinates of the new point `x′`.
    pub fn to_old(&self, xn: &[f64]) -> Result<Vec<f64>> {
        match self.direction() {
            MapDirection::NewToOld => self.apply(xn),
            MapDirection::OldToNew => self.newton(xn),
        }
    }

    /// Solves `apply(p) = target` from a linearisation at the anchor.
    fn newton(&self, target: &[f64]) -> Result<Vec<f64>> {
        let (p0, q0) = match self.direction() {
            MapDirection::OldToNew => (&self.anchor_old, &self.anchor_new),
            MapDirection::NewToOld => (&self.anchor_new, &self.anchor_old),
        };
        let j0 = self.jacobian(p0)?;
        let d: Vec<f64> = target.iter().zip(q0).map(|(a, b)| a - b).collect();
        let step = j0.solve(&d).ok_or_else(|| Error::SingularFrame { point: p0.clone() })?;
        let mut p: Vec<f64> = p0.iter().zip(&step).map(|(a, b)| a + b).collect();
        let residual = |q: &[f64]| max_abs(&q.iter().zip(target).map(|(a, b)| a - b).collect::<Vec<_>>());
        let mut q = self.apply(&p)?;
        let mut res = residual(&q);
        for _ in 0..NEWTON_MAX_ITERATIONS {
            if res < NEWTON_TOL {
                return Ok(p);
            }
            let j = self.jacobian(&p)?;
            let r: Vec<f64> = q.iter().zip(target).map(|(a, b)| a - b).collect();
            let dp = j.solve(&r).ok_or(Error::NoConvergence { residual: res })?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a - lambda * b).collect();
                if let Ok(q2) = self.apply(&cand) {
                    let r2 = residual(&q2);
                    if r2 < res {
                        p = cand;
                        q = q2;
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
        if res < NEWTON_TOL {
            Ok(p)
        } else {
            Err(Error::NoConvergence { residual: res })
        }
    }

    /// The induced frame `Aᵃₖ = ∂xᵃ/∂x′ᵏ` at a point of the map's domain.
    pub fn induced_frame(&self, p: &[f64]) -> Result<Matrix> {
        let j = self.jacobian(p)?;
        match self.direction() {
            MapDirection::NewToOld => Ok(j),
            MapDirection::OldToNew => j
                .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                .ok_or_else(|| Error::SingularFrame { point: p.to_vec() }),
        }
    }

    /// Coefficients of `c` in the new coordinates at the point `p` of the
    /// map's domain (an old point for old-to-new maps, a new point
    /// otherwise).
    pub fn coefficients(&self, c: &ConnectionField, p: &[f64], route: Route) -> Result<Coefficients> {
        match route {
            Route::Frame => self.coefficients_by_frame(c, p),
            Route::Differences => self.coefficients_by_differences(c, p),
        }
    }

    fn coefficients_by_frame(&self, c: &ConnectionField, p: &[f64]) -> Result<Coefficients> {
        let n = self.dim();
        if let Kind::Closed(f) = &self.kind {
            // exact jets: A = J⁻¹, ∂_b A = −A (∂_b J) A
            let jets = f.iter().map(|e| e.eval_jet2(p)).collect::<Result<Vec<_>, _>>()?;
            let j = Matrix::from_fn(n, n, |i, a| jets[i].partial(a));
            let a = j
                .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                .ok_or_else(|| Error::SingularFrame { point: p.to_vec() })?;
            let da: Vec<Matrix> = (0..n)
                .map(|b| {
                    let djb = Matrix::from_fn(n, n, |i, m| jets[i].second(m, b));
                    (&(&a * &djb) * &a).scale(-1.0)
                })
                .collect();
            let gamma = c.coefficients(p)?;
            return transform_coefficients(&gamma, &a, &da, p);
        }
        let h = if self.has_exact_jacobian(p) { 1e-4 } else { FD_STEP_SECOND };
        let a = self.induced_frame(p)?;
        // derivatives of A along the map's input coordinates
        let mut d_in = Vec::with_capacity(n);
        for b in 0..n {
            let mut pp = p.to_vec();
            let mut pm = p.to_vec();
            pp[b] += h;
            pm[b] -= h;
            let ap = self.induced_frame(&pp)?;
            let am = self.induced_frame(&pm)?;
            d_in.push((&ap - &am).scale(0.5 / h));
        }
        match self.direction() {
            MapDirection::OldToNew => {
                let gamma = c.coefficients(p)?;
                transform_coefficients(&gamma, &a, &d_in, p)
            }
            MapDirection::NewToOld => {
                let x = self.apply(p)?;
                let gamma = c.coefficients(&x)?;
                let ainv = a
                    .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                    .ok_or_else(|| Error::SingularFrame { point: x.clone() })?;
                // ∂_b A = Σⱼ ∂′ⱼA (A⁻¹)ʲ_b
                let d_old: Vec<Matrix> = (0..n)
                    .map(|b| {
                        let mut m = Matrix::zeros(n, n);
                        for (jj, dj) in d_in.iter().enumerate() {
                            let w = ainv[(jj, b)];
                            for r in 0..n {
                                for k in 0..n {
                                    m[(r, k)] += w * dj[(r, k)];
                                }
                            }
                        }
                        m
                    })
                    .collect();
                transform_coefficients(&gamma, &a, &d_old, &x)
            }
        }
    }

    fn coefficients_by_differences(&self, c: &ConnectionField, p: &[f64]) -> Result<Coefficients> {
        let n = self.dim();
        let f = |q: &[f64]| self.apply(q);
        let j = fd_jacobian(f, p, FD_STEP_FIRST)?;
        let hess = fd_hessians(f, p, FD_STEP_SECOND)?;
        match self.direction() {
            MapDirection::OldToNew => {
                // Γ′ⁱⱼₖ = (J⁻¹)ᵇⱼ (J⁻¹)ᶜₖ (Jⁱₐ Γᵃ_bc − Hⁱ_bc)
                let gamma = c.coefficients(p)?;
                let a = j
                    .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                    .ok_or_else(|| Error::SingularFrame { point: p.to_vec() })?;
                Ok(Coefficients::from_fn(n, |i, jj, k| {
                    let mut s = 0.0;
                    for b in 0..n {
                        for cc in 0..n {
                            let w = a[(b, jj)] * a[(cc, k)];
                            if w == 0.0 {
                                continue;
                            }
                            let mut inner = -hess[i][(b, cc)];
                            for aa in 0..n {
                                inner += j[(i, aa)] * gamma.get(aa, b, cc);
                            }
                            s += w * inner;
                        }
                    }
                    s
                }))
            }
            MapDirection::NewToOld => {
                // Γ′ⁱⱼₖ = (DΦ⁻¹)ⁱₐ (∂ⱼ∂ₖΦᵃ + Γᵃ_bc DΦᵇⱼ DΦᶜₖ)
                let x = self.apply(p)?;
                let gamma = c.coefficients(&x)?;
                let inv = j
                    .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                    .ok_or_else(|| Error::SingularFrame { point: x.clone() })?;
                let mut inner = vec![0.0; n * n * n];
                for aa in 0..n {
                    for jj in 0..n {
                        for k in 0..n {
                            let mut s = hess[aa][(jj, k)];
                            for b in 0..n {
                                for cc in 0..n {
                                    s += gamma.get(aa, b, cc) * j[(b, jj)] * j[(cc, k)];
                                }
                            }
                            inner[(aa * n + jj) * n + k] = s;
                        }
                    }
                }
                Ok(Coefficients::from_fn(n, |i, jj, k| {
                    (0..n).map(|aa| inv[(i, aa)] * inner[(aa * n + jj) * n + k]).sum()
                }))
            }
        }
    }

    /// Sup of the transformed coefficients over `points` of the map's domain.
    pub fn verify(
        &self,
        c: &ConnectionField,
        points: &[Vec<f64>],
        tolerance: f64,
        route: Route,
    ) -> Result<NormalityReport> {
        let mut samples = Vec::with_capacity(points.len());
        for p in points {
            samples.push((p.clone(), self.coefficients(c, p, route)?.max_abs()));
        }
        let region = if points.len() == 1 {
            Region::Point { point: points[0].clone() }
        } else {
            Region::Samples { count: points.len() }
        };
        Ok(NormalityReport::from_samples(region, tolerance, samples))
    }
}

/// Central-difference Jacobian of `f` at `p`.
pub(crate) fn fd_jacobian<F>(f: F, p: &[f64], h: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = p.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut pp = p.to_vec();
        let mut pm = p.to_vec();
        pp[j] += h;
        pm[j] -= h;
        let (fp, fm) = (f(&pp)?, f(&pm)?);
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    let m = cols[0].len();
    Ok(Matrix::from_fn(m, n, |i, j| cols[j][i]))
}

/// Central-difference Hessians of each component of `f` at `p`.
pub(crate) fn fd_hessians<F>(f: F, p: &[f64], h: f64) -> Result<Vec<Matrix>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = p.len();
    let f0 = f(p)?;
    let m = f0.len();
    let mut out = vec![Matrix::zeros(n, n); m];
    let shifted = |moves: &[(usize, f64)]| {
        let mut q = p.to_vec();
        for (axis, d) in moves {
            q[*axis] += d;
        }
        f(&q)
    };
    for a in 0..n {
        let fp = shifted(&[(a, h)])?;
        let fm = shifted(&[(a, -h)])?;
        for i in 0..m {
            out[i][(a, a)] = (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
        }
        for b in a + 1..n {
            let fpp = shifted(&[(a, h), (b, h)])?;
            let fpm = shifted(&[(a, h), (b, -h)])?;
            let fmp = shifted(&[(a, -h), (b, h)])?;
            let fmm = shifted(&[(a, -h), (b, -h)])?;
            for i in 0..m {
                let v = (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4.0 * h * h);
                out[i][(a, b)] = v;
                out[i][(b, a)] = v;
            }
        }
    }
    Ok(out)
}
