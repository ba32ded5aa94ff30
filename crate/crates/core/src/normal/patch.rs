use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::coords::{CoordinateChange, MapDirection, NumericMap, Route};
use super::report::{LoopInfo, NormalityReport, Region, DEFAULT_TOL, DEFAULT_TOL_R, DEFAULT_TOL_T};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::expr::Expr;
use crate::geometry::{curvature_at, torsion_at, Chart, ConnectionField, MetricField};
use crate::linalg::{Matrix, FRAME_PIVOT_THRESHOLD, PIVOT_THRESHOLD};
use crate::transport::{holonomy, rk4, transport_matrix, Curve, Polyline, LOOP_CLOSURE_TOL};

/// Default grid nodes per axis.
pub const DEFAULT_NODES: usize = 11;
/// Default Runge-Kutta steps per straight leg.
pub const DEFAULT_STEPS_PER_LEG: usize = 64;
/// Relative step for differencing frames across the grid.
const FD_RELATIVE_STEP: f64 = 1e-5;
/// Step for differencing the exact Jacobian of open-set coordinates.
const JACOBIAN_FD_STEP: f64 = 1e-4;

/// A box of parameters `u` mapped into a chart by `x = φ(u)`.
#[derive(Debug, Clone)]
pub struct Patch {
    chart: Arc<Chart>,
    params: Vec<String>,
    /// `None` for the identity map of an open box.
    components: Option<Vec<Expr>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Patch {
    pub fn new<S: AsRef<str>>(
        chart: Arc<Chart>,
        params: &[S],
        sources: &[S],
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let params: Vec<String> = params.iter().map(|s| s.as_ref().to_string()).collect();
        if sources.len() != chart.dim() {
            return Err(Error::Invalid(format!("patch needs {} components", chart.dim())));
        }
        let components = sources.iter().map(|s| chart.parse_in(s.as_ref(), &params)).collect::<Result<Vec<_>>>()?;
        let patch = Patch { chart, params, components: Some(components), lower, upper };
        patch.check_box()?;
        Ok(patch)
    }

    /// The open box `lower < x < upper` of the chart itself.
    pub fn open_box(chart: Arc<Chart>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let params = chart.names().to_vec();
        let patch = Patch { chart, params, components: None, lower, upper };
        patch.check_box()?;
        Ok(patch)
    }

    fn check_box(&self) -> Result<()> {
        let m = self.params.len();
        if m == 0 || self.lower.len() != m || self.upper.len() != m {
            return Err(Error::Invalid(format!("patch box needs {m} lower and upper bounds")));
        }
        if m > self.chart.dim() {
            return Err(Error::Invalid("patch has more parameters than the chart has coordinates".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Invalid("patch box bounds must satisfy lower < upper".into()));
        }
        Ok(())
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    /// Number of parameters `m`.
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_open_box(&self) -> bool {
        self.components.is_none()
    }

    /// Component sources over the parameter names.
    pub fn render(&self) -> Vec<String> {
        match &self.components {
            Some(c) => c.iter().map(|e| e.render(&self.params)).collect(),
            None => self.params.clone(),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn point(&self, u: &[f64]) -> Result<Vec<f64>> {
        match &self.components {
            None => Ok(u.to_vec()),
            Some(c) => Ok(c.iter().map(|e| e.eval(u)).collect::<Result<Vec<_>, _>>()?),
        }
    }

    /// `φ(u)` and the `n × m` matrix of tangents `∂φ/∂uᵝ`.
    pub fn point_and_tangents(&self, u: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        match &self.components {
            None => Ok((u.to_vec(), Matrix::identity(u.len()))),
            Some(c) => {
                let duals = c.iter().map(|e| e.eval_dual(u)).collect::<Result<Vec<_>, _>>()?;
                let x = duals.iter().map(|d| d.value).collect();
                let t = Matrix::from_fn(c.len(), u.len(), |i, b| duals[i].partial(b));
                Ok((x, t))
            }
        }
    }

    /// Induced metric `Tᵀ g T` at `u`.
    pub fn induced_metric(&self, g: &MetricField, u: &[f64]) -> Result<Matrix> {
        let (x, t) = self.point_and_tangents(u)?;
        Ok(&(&t.transpose() * &g.at(&x)?) * &t)
    }

    /// Fails with `SingularMetric` at the first grid node where the induced
    /// metric is degenerate.
    pub fn check_induced_metric(&self, g: &MetricField, nodes: usize) -> Result<()> {
        let grid = Grid::new(self, nodes)?;
        for idx in 0..grid.count(self.dim()) {
            let u = grid.params(self, idx, self.dim(), None);
            let h = self.induced_metric(g, &u)?;
            if !(h.scaled_determinant().abs() > PIVOT_THRESHOLD) {
                return Err(Error::SingularMetric { point: self.point(&u)? });
            }
        }
        Ok(())
    }
}

/// A polyline in parameters, traversed in the chart through the patch map.
struct PatchCurve<'a> {
    patch: &'a Patch,
    poly: Polyline,
}

impl Curve for PatchCurve<'_> {
    fn dim(&self) -> usize {
        self.patch.chart.dim()
    }

    fn t_range(&self) -> (f64, f64) {
        self.poly.t_range()
    }

    fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (u, du) = self.poly.eval(t)?;
        self.push(u, du)
    }

    fn pieces(&self) -> Vec<(f64, f64)> {
        self.poly.pieces()
    }

    fn eval_piece(&self, piece: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (u, du) = self.poly.eval_piece(piece, t)?;
        self.push(u, du)
    }
}

impl PatchCurve<'_> {
    fn push(&self, u: Vec<f64>, du: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let (x, t) = self.patch.point_and_tangents(&u)?;
        Ok((x, t.mul_vec(&du)))
    }
}

/// Uniform grid over a patch box; nodes are numbered row-major with the
/// first parameter slowest.
#[derive(Debug, Clone, Copy)]
struct Grid {
    nodes: usize,
}

impl Grid {
    fn new(patch: &Patch, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Invalid("a grid needs at least two nodes per axis".into()));
        }
        let total = (nodes as f64).powi(patch.dim() as i32);
        if total > 1e7 {
            return Err(Error::Invalid(format!("grid of {total} nodes is too large")));
        }
        Ok(Grid { nodes })
    }

    fn value(&self, patch: &Patch, axis: usize, i: usize) -> f64 {
        let (a, b) = (patch.lower[axis], patch.upper[axis]);
        if i + 1 == self.nodes {
            b
        } else {
            a + (b - a) * i as f64 / (self.nodes - 1) as f64
        }
    }

    fn count(&self, level: usize) -> usize {
        self.nodes.pow(level as u32)
    }

    fn digits(&self, level: usize, mut idx: usize) -> Vec<usize> {
        let mut d = vec![0; level];
        for k in (0..level).rev() {
            d[k] = idx % self.nodes;
            idx /= self.nodes;
        }
        d
    }

    /// Parameters of entry `idx` at tree level `level`: grid values on the
    /// first `level` axes, base values on the rest. Without a base the
    /// level must be the full dimension.
    fn params(&self, patch: &Patch, idx: usize, level: usize, base: Option<&[f64]>) -> Vec<f64> {
        let d = self.digits(level, idx);
        (0..patch.dim())
            .map(|k| if k < level { self.value(patch, k, d[k]) } else { base.expect("partial levels need a base")[k] })
            .collect()
    }
}

/// Engine options shared by the grid constructions.
#[derive(Debug, Clone)]
pub struct GridOptions {
    pub nodes: usize,
    pub steps_per_leg: usize,
    pub tol: f64,
    pub tol_r: f64,
    pub tol_t: f64,
    /// Frame at the base point, identity by default.
    pub frame0: Option<Matrix>,
    pub execution: Execution,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            nodes: DEFAULT_NODES,
            steps_per_leg: DEFAULT_STEPS_PER_LEG,
            tol: DEFAULT_TOL,
            tol_r: DEFAULT_TOL_R,
            tol_t: DEFAULT_TOL_T,
            frame0: None,
            execution: Execution::default(),
        }
    }
}

/// A frame sampled on a patch grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes_per_axis: usize,
    pub params: Vec<Vec<f64>>,
    pub points: Vec<Vec<f64>>,
    pub frames: Vec<Matrix>,
}

impl GridFrame {
    /// The same frame right-multiplied by a constant matrix.
    pub fn times(&self, c: &Matrix) -> GridFrame {
        GridFrame { frames: self.frames.iter().map(|a| a * c).collect(), ..self.clone() }
    }
}

/// A frame on an open box together with its verification.
#[derive(Debug, Clone, Serialize)]
pub struct OpenSetFrame {
    pub frame: GridFrame,
    pub report: NormalityReport,
    pub max_curvature: f64,
}

/// A frame on a submanifold patch together with its verification.
#[derive(Debug, Clone, Serialize)]
pub struct PatchFrame {
    pub frame: GridFrame,
    pub report: NormalityReport,
    pub loops_checked: usize,
    pub max_loop_defect: f64,
    /// Present for patches of full dimension.
    pub max_curvature: Option<f64>,
}

/// Coordinates normal on an open box together with their verification.
#[derive(Debug, Clone)]
pub struct OpenSetCoordinates {
    pub change: CoordinateChange,
    pub report: NormalityReport,
    /// `sup |∂ₐWᵏ_b − ∂_bWᵏₐ|` on the grid, `W` the inverse frame.
    pub integrability: f64,
    pub max_curvature: f64,
    pub max_torsion: f64,
}

struct Engine<'a> {
    c: &'a ConnectionField,
    patch: &'a Patch,
    grid: Grid,
    base: Vec<f64>,
    steps: usize,
    execution: Execution,
}

impl<'a> Engine<'a> {
    fn new(c: &'a ConnectionField, patch: &'a Patch, base: &[f64], opts: &GridOptions) -> Result<Self> {
        if patch.chart.dim() != c.dim() {
            return Err(Error::Invalid("patch and connection live on different charts".into()));
        }
        if base.len() != patch.dim() {
            return Err(Error::Invalid(format!("base needs {} parameters", patch.dim())));
        }
        if base.iter().zip(patch.lower.iter().zip(&patch.upper)).any(|(b, (lo, hi))| !(lo <= b && b <= hi)) {
            return Err(Error::Invalid("base lies outside the patch box".into()));
        }
        if opts.steps_per_leg < 1 {
            return Err(Error::Invalid("steps per leg must be positive".into()));
        }
        c.chart().require(&patch.point(base)?)?;
        Ok(Engine {
            c,
            patch,
            grid: Grid::new(patch, opts.nodes)?,
            base: base.to_vec(),
            steps: opts.steps_per_leg.max(crate::transport::MIN_STEPS),
            execution: opts.execution,
        })
    }

    fn m(&self) -> usize {
        self.patch.dim()
    }

    /// Transport of frame `a` along parameter axis `axis` from `from` to
    /// the value `to`.
    fn leg(&self, a: &Matrix, from: &[f64], axis: usize, to: f64) -> Result<Matrix> {
        if from[axis] == to {
            return Ok(a.clone());
        }
        let mut end = from.to_vec();
        end[axis] = to;
        let curve = PatchCurve { patch: self.patch, poly: Polyline::new(vec![from.to_vec(), end])? };
        transport_matrix(self.c, &curve, a, self.steps)
    }

    /// Level `k + 1` of the transport tree from level `k`. With `shift`,
    /// axis `β` is displaced by `s` in every entry at or below level `β + 1`.
    fn next_level(&self, k: usize, parents: &[Matrix], shift: Option<(usize, f64)>) -> Result<Vec<Matrix>> {
        let g = self.grid.nodes;
        let idx: Vec<usize> = (0..parents.len() * g).collect();
        exec::try_map(self.execution, &idx, |&i| {
            let (p, j) = (i / g, i % g);
            let mut from = self.grid.params(self.patch, p, k, Some(&self.base));
            let mut to = self.grid.value(self.patch, k, j);
            if let Some((beta, s)) = shift {
                if beta < k {
                    from[beta] += s;
                } else if beta == k {
                    to += s;
                }
            }
            self.leg(&parents[p], &from, k, to)
        })
    }

    /// All levels of the transport tree from the base frame.
    fn tree(&self, a0: &Matrix) -> Result<Vec<Vec<Matrix>>> {
        let mut levels = vec![vec![a0.clone()]];
        for k in 0..self.m() {
            let next = self.next_level(k, &levels[k], None)?;
            levels.push(next);
        }
        Ok(levels)
    }

    /// Node frames of the tree with axis `beta` displaced by `s`, reusing
    /// the stored levels up to `beta`.
    fn shifted(&self, levels: &[Vec<Matrix>], beta: usize, s: f64) -> Result<Vec<Matrix>> {
        let mut cur = levels[beta].clone();
        for k in beta..self.m() {
            cur = self.next_level(k, &cur, Some((beta, s)))?;
        }
        Ok(cur)
    }

    fn grid_frame(&self, frames: Vec<Matrix>) -> Result<GridFrame> {
        let m = self.m();
        let count = self.grid.count(m);
        let params: Vec<Vec<f64>> = (0..count).map(|i| self.grid.params(self.patch, i, m, None)).collect();
        let points = params.iter().map(|u| self.patch.point(u)).collect::<Result<Vec<_>>>()?;
        Ok(GridFrame {
            lower: self.patch.lower.clone(),
            upper: self.patch.upper.clone(),
            nodes_per_axis: self.grid.nodes,
            params,
            points,
            frames,
        })
    }

    /// Builds the node frames and checks `|A⁻¹(∂ᵦA + Ω(∂ᵦφ)A)|` at every
    /// node and parameter direction, differencing shifted trees.
    fn build_and_verify(&self, a0: &Matrix, tol: f64, region: Region) -> Result<(GridFrame, NormalityReport)> {
        let m = self.m();
        let levels = self.tree(a0)?;
        let frames = levels[m].clone();
        let mut derivs: Vec<Vec<Matrix>> = Vec::with_capacity(m);
        for beta in 0..m {
            let h = FD_RELATIVE_STEP * (self.patch.upper[beta] - self.patch.lower[beta]);
            let plus = self.shifted(&levels, beta, h)?;
            let minus = self.shifted(&levels, beta, -h)?;
            derivs.push(plus.iter().zip(&minus).map(|(p, q)| (p - q).scale(0.5 / h)).collect());
        }
        let frame = self.grid_frame(frames)?;
        let idx: Vec<usize> = (0..frame.frames.len()).collect();
        let values = exec::try_map(self.execution, &idx, |&i| -> Result<f64> {
            let a = &frame.frames[i];
            let (x, tangents) = self.patch.point_and_tangents(&frame.params[i])?;
            let gamma = self.c.coefficients(&x)?;
            let ainv = a
                .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                .ok_or_else(|| Error::SingularFrame { point: x.clone() })?;
            let mut worst: f64 = 0.0;
            for (beta, d) in derivs.iter().enumerate() {
                let v = tangents.column(beta);
                let omega = gamma.contract(&v);
                let g = &ainv * &(&d[i] + &(&omega * a));
                worst = worst.max(g.max_abs());
            }
            Ok(worst)
        })?;
        let report = NormalityReport::from_samples(region, tol, frame.params.iter().cloned().zip(values));
        Ok((frame, report))
    }

    /// `max ‖R‖` over the grid nodes, failing with the worst node when it
    /// reaches `tol_r`.
    fn curvature_check(&self, tol_r: f64) -> Result<f64> {
        let m = self.m();
        let idx: Vec<usize> = (0..self.grid.count(m)).collect();
        let values = exec::try_map(self.execution, &idx, |&i| -> Result<(Vec<f64>, f64)> {
            let x = self.patch.point(&self.grid.params(self.patch, i, m, None))?;
            let r = curvature_at(self.c, &x)?.max_abs();
            Ok((x, r))
        })?;
        let (point, norm) = worst(values);
        if !(norm < tol_r) {
            return Err(Error::CurvatureObstruction { point, norm });
        }
        Ok(norm)
    }

    fn torsion_check(&self, tol_t: f64) -> Result<f64> {
        let m = self.m();
        let idx: Vec<usize> = (0..self.grid.count(m)).collect();
        let values = exec::try_map(self.execution, &idx, |&i| -> Result<(Vec<f64>, f64)> {
            let x = self.patch.point(&self.grid.params(self.patch, i, m, None))?;
            let t = torsion_at(self.c, &x)?.max_abs();
            Ok((x, t))
        })?;
        let (point, norm) = worst(values);
        if !(norm < tol_t) {
            return Err(Error::TorsionObstruction { point, norm });
        }
        Ok(norm)
    }

    /// Holonomy of every grid-cell loop in every parameter plane, and for
    /// patches with at least two parameters of every loop that wraps once
    /// around a periodic parameter direction.
    fn loop_battery(&self) -> Result<(usize, Option<LoopInfo>)> {
        let m = self.m();
        if m < 2 {
            return Ok((0, None));
        }
        let g = self.grid.nodes;
        let mut loops: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        for idx in 0..self.grid.count(m) {
            let d = self.grid.digits(m, idx);
            let u = self.grid.params(self.patch, idx, m, None);
            for a in 0..m {
                for b in a + 1..m {
                    if d[a] + 1 == g || d[b] + 1 == g {
                        continue;
                    }
                    let (ua, ub) = (self.grid.value(self.patch, a, d[a] + 1), self.grid.value(self.patch, b, d[b] + 1));
                    let mut p1 = u.clone();
                    p1[a] = ua;
                    let mut p2 = p1.clone();
                    p2[b] = ub;
                    let mut p3 = u.clone();
                    p3[b] = ub;
                    loops.push((
                        format!(
                            "grid cell at {u:?} in parameter plane ({}, {})",
                            self.patch.params[a], self.patch.params[b]
                        ),
                        vec![u.clone(), p1, p2, p3, u.clone()],
                    ));
                }
            }
        }
        for a in 0..m {
            for idx in 0..self.grid.count(m) {
                let d = self.grid.digits(m, idx);
                if d[a] != 0 {
                    continue;
                }
                let start = self.grid.params(self.patch, idx, m, None);
                let mut end = start.clone();
                end[a] = self.patch.upper[a];
                let gap = self.c.chart().distance(&self.patch.point(&start)?, &self.patch.point(&end)?);
                if !(gap < LOOP_CLOSURE_TOL) {
                    continue;
                }
                let vertices = (0..g)
                    .map(|i| {
                        let mut v = start.clone();
                        v[a] = self.grid.value(self.patch, a, i);
                        v
                    })
                    .collect();
                loops.push((format!("loop around parameter {} from {start:?}", self.patch.params[a]), vertices));
            }
        }
        let count = loops.len();
        let results = exec::try_map(self.execution, &loops, |(_, vertices)| {
            let curve = PatchCurve { patch: self.patch, poly: Polyline::new(vertices.clone())? };
            holonomy(self.c, &curve, self.steps * (vertices.len() - 1))
        })?;
        let worst =
            results.into_iter().zip(loops).max_by(|(a, _), (b, _)| a.defect.total_cmp(&b.defect)).map(
                |(h, (description, vertices))| LoopInfo { description, vertices, defect: h.defect, matrix: h.matrix },
            );
        Ok((count, worst))
    }
}

fn worst(values: Vec<(Vec<f64>, f64)>) -> (Vec<f64>, f64) {
    let mut best = (Vec::new(), 0.0);
    for (x, v) in values {
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if best.0.is_empty() || v > best.1 {
            best = (x, v);
        }
    }
    best
}

fn base_frame(opts: &GridOptions, n: usize, at: &[f64]) -> Result<Matrix> {
    let a0 = opts.frame0.clone().unwrap_or_else(|| Matrix::identity(n));
    if a0.rows() != n || a0.cols() != n {
        return Err(Error::Invalid(format!("base frame must be {n}×{n}")));
    }
    if a0.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).is_none() {
        return Err(Error::SingularFrame { point: at.to_vec() });
    }
    Ok(a0)
}

/// A frame normal on the open box `lower < x < upper`, built by transport
/// from `base` along axis-ordered polylines to every grid node. Fails with
/// `CurvatureObstruction` unless the curvature vanishes on the grid.
pub fn normal_frame_on_open_set(
    c: &ConnectionField,
    lower: &[f64],
    upper: &[f64],
    base: &[f64],
    opts: &GridOptions,
) -> Result<OpenSetFrame> {
    let patch = Patch::open_box(c.chart().clone(), lower.to_vec(), upper.to_vec())?;
    let engine = Engine::new(c, &patch, base, opts)?;
    let max_curvature = engine.curvature_check(opts.tol_r)?;
    let a0 = base_frame(opts, c.dim(), base)?;
    let region = Region::Grid { lower: lower.to_vec(), upper: upper.to_vec(), nodes: engine.grid.count(patch.dim()) };
    let (frame, report) = engine.build_and_verify(&a0, opts.tol, region)?;
    Ok(OpenSetFrame { frame, report, max_curvature })
}

/// A frame normal along a patch, i.e. with `Γ′ⁱⱼₖ Vʲ = 0` for every vector
/// `V` tangent to it. Parallel transport inside the patch must be path
/// independent: a battery of grid-cell loops (and loops around periodic
/// parameters) is checked first and the worst failure is reported as
/// `HolonomyObstruction`. Patches of full dimension must also pass the
/// curvature check of [`normal_frame_on_open_set`].
pub fn submanifold_normality(
    c: &ConnectionField,
    patch: &Patch,
    base: Option<&[f64]>,
    opts: &GridOptions,
) -> Result<PatchFrame> {
    let base = base.map(|b| b.to_vec()).unwrap_or_else(|| patch.center());
    let engine = Engine::new(c, patch, &base, opts)?;
    let (loops_checked, worst_loop) = engine.loop_battery()?;
    let max_loop_defect = worst_loop.as_ref().map_or(0.0, |l| l.defect);
    if let Some(l) = worst_loop {
        if !(l.defect < opts.tol) {
            return Err(Error::HolonomyObstruction(Box::new(l)));
        }
    }
    let max_curvature = if patch.dim() == c.dim() { Some(engine.curvature_check(opts.tol_r)?) } else { None };
    let a0 = base_frame(opts, c.dim(), &patch.point(&base)?)?;
    let region =
        Region::Patch { lower: patch.lower.clone(), upper: patch.upper.clone(), nodes: engine.grid.count(patch.dim()) };
    let (frame, report) = engine.build_and_verify(&a0, opts.tol, region)?;
    Ok(PatchFrame { frame, report, loops_checked, max_loop_defect, max_curvature })
}

/// `x ↦ x′` by integrating `Ẇ = WΩ(ẋ)`, `ẋ′ = Wẋ` from the base along
/// axis-ordered polylines; `W` is the inverse of the transported frame.
#[derive(Debug)]
struct OpenSetMap {
    c: ConnectionField,
    base: Vec<f64>,
    w0: Matrix,
    steps: usize,
}

impl OpenSetMap {
    fn integrate(&self, x: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        let n = self.c.dim();
        let poly = Polyline::axis_ordered(&self.base, x)?;
        let mut y = vec![0.0; n * n + n];
        y[..n * n].copy_from_slice(self.w0.as_slice());
        for leg in 0..poly.legs() {
            let (p, q) = (leg as f64, (leg + 1) as f64);
            y = rk4(
                p,
                q,
                self.steps,
                &y,
                |t, y, dy| {
                    let (pos, vel) = poly.eval_piece(leg, t)?;
                    if !self.c.chart().contains(&pos) {
                        return Err(Error::DomainExit { t, point: pos });
                    }
                    let omega = self.c.coefficients(&pos)?.contract(&vel);
                    let w = &y[..n * n];
                    for i in 0..n {
                        for k in 0..n {
                            dy[i * n + k] = (0..n).map(|a| w[i * n + a] * omega[(a, k)]).sum();
                        }
                        dy[n * n + i] = (0..n).map(|a| w[i * n + a] * vel[a]).sum();
                    }
                    Ok(())
                },
                |_, _| {},
            )?;
        }
        Ok((Matrix::from_row_major(n, n, y[..n * n].to_vec()), y[n * n..].to_vec()))
    }
}

impl NumericMap for OpenSetMap {
    fn direction(&self) -> MapDirection {
        MapDirection::OldToNew
    }

    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(self.integrate(p)?.1)
    }

    fn jacobian(&self, p: &[f64]) -> Option<Result<Matrix>> {
        Some(self.integrate(p).map(|r| r.0))
    }
}

/// Coordinates normal on the open box, obtained by integrating the flat
/// frame; `x′(base) = 0`. Requires vanishing curvature and torsion on the
/// grid.
pub fn normal_coords_on_open_set(
    c: &ConnectionField,
    lower: &[f64],
    upper: &[f64],
    base: &[f64],
    opts: &GridOptions,
) -> Result<OpenSetCoordinates> {
    let n = c.dim();
    let patch = Patch::open_box(c.chart().clone(), lower.to_vec(), upper.to_vec())?;
    let engine = Engine::new(c, &patch, base, opts)?;
    let max_curvature = engine.curvature_check(opts.tol_r)?;
    let max_torsion = engine.torsion_check(opts.tol_t)?;
    let a0 = base_frame(opts, n, base)?;
    let map = OpenSetMap {
        c: c.clone(),
        base: base.to_vec(),
        w0: a0.inverse_with_threshold(FRAME_PIVOT_THRESHOLD).expect("checked by base_frame"),
        steps: engine.steps,
    };
    let map = Arc::new(map);
    let change = CoordinateChange::numeric(c.chart().clone(), map.clone(), base.to_vec(), vec![0.0; n], "open-set")?;
    let count = engine.grid.count(n);
    let idx: Vec<usize> = (0..count).collect();
    let values = exec::try_map(opts.execution, &idx, |&i| -> Result<(Vec<f64>, f64, f64)> {
        let x = engine.grid.params(&patch, i, n, None);
        let g = change.coefficients(c, &x, Route::Frame)?.max_abs();
        // mixed partials of W
        let h = JACOBIAN_FD_STEP;
        let mut dw = Vec::with_capacity(n);
        for a in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += h;
            xm[a] -= h;
            dw.push((&map.integrate(&xp)?.0 - &map.integrate(&xm)?.0).scale(0.5 / h));
        }
        let mut witness: f64 = 0.0;
        for k in 0..n {
            for a in 0..n {
                for b in 0..n {
                    witness = witness.max((dw[a][(k, b)] - dw[b][(k, a)]).abs());
                }
            }
        }
        Ok((x, g, witness))
    })?;
    let integrability = values.iter().fold(0.0f64, |m, v| m.max(v.2));
    let report = NormalityReport::from_samples(
        Region::Grid { lower: lower.to_vec(), upper: upper.to_vec(), nodes: count },
        opts.tol,
        values.into_iter().map(|(x, g, _)| (x, g)),
    );
    Ok(OpenSetCoordinates { change, report, integrability, max_curvature, max_torsion })
}

/// Re-checks a frame sampled on a patch grid from the frames alone: for
/// each node and each neighbour along a parameter axis, transport across
/// the edge `L` and report `|A_nbr⁻¹ L A − I| / Δ`, which approximates the
/// coefficients along that edge.
pub fn verify_grid_frame(
    c: &ConnectionField,
    patch: &Patch,
    frame: &GridFrame,
    tol: f64,
    steps: usize,
    execution: Execution,
) -> Result<NormalityReport> {
    let m = patch.dim();
    let g = frame.nodes_per_axis;
    let grid = Grid::new(patch, g)?;
    let count = grid.count(m);
    if frame.frames.len() != count || frame.params.len() != count {
        return Err(Error::Invalid(format!("grid frame has {} nodes, expected {count}", frame.frames.len())));
    }
    let n = c.dim();
    let idx: Vec<usize> = (0..count).collect();
    let values = exec::try_map(execution, &idx, |&i| -> Result<f64> {
        let d = grid.digits(m, i);
        let a = &frame.frames[i];
        if a.rows() != n || a.cols() != n {
            return Err(Error::Invalid(format!("frame at node {i} is not {n}×{n}")));
        }
        let mut worst: f64 = 0.0;
        for axis in 0..m {
            if d[axis] + 1 == g {
                continue;
            }
            let stride = g.pow((m - 1 - axis) as u32);
            let j = i + stride;
            let (u, v) = (&frame.params[i], &frame.params[j]);
            let delta = v[axis] - u[axis];
            let curve = PatchCurve { patch, poly: Polyline::new(vec![u.clone(), v.clone()])? };
            let l = transport_matrix(c, &curve, a, steps)?;
            let inv = frame.frames[j]
                .inverse_with_threshold(FRAME_PIVOT_THRESHOLD)
                .ok_or_else(|| Error::SingularFrame { point: frame.points[j].clone() })?;
            let r = &(&inv * &l) - &Matrix::identity(n);
            worst = worst.max(r.max_abs() / delta.abs());
        }
        Ok(worst)
    })?;
    Ok(NormalityReport::from_samples(
        Region::Grid { lower: frame.lower.clone(), upper: frame.upper.clone(), nodes: count },
        tol,
        frame.params.iter().cloned().zip(values),
    ))
}
