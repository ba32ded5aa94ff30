use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use normframe::catalog::{self, CatalogEntry};
use normframe::exec::Execution;
use normframe::geometry::{curvature_at, torsion_at};
use normframe::linalg::Matrix;
use normframe::normal::{
    fermi_coords, metric_expansion_slope, normal_coords_at_point, normal_coords_on_open_set, normal_frame_along_path,
    normal_frame_at_point, normal_frame_on_open_set, riemann_normal_coords, submanifold_normality,
    verify_frame_at_point, verify_grid_frame, verify_path_frame, GridFrame, GridOptions, Patch, PathFrame, Route,
    DEFAULT_NODES, DEFAULT_STEPS_PER_LEG, DEFAULT_TOL, EXPANSION_RADII,
};
use normframe::pathspace::{
    autoparallel, tangent_transport_linearity_check, transport_torsion, TangentCoefficients, LINEARITY_TOL,
};
use normframe::transport::{
    geodesic, holonomy, parallel_transport, richardson, rotation_angle_2d, Curve, PathCurve, DEFAULT_RICHARDSON_TOL,
    DEFAULT_STEPS,
};
use normframe::Error;

use super::args::{BundleCmd, CatalogCmd, Command, Global, NormalCmd, PathSel};
use super::output::{Output, Table};

/// Failure of a command, classified for the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Lib(Error),
    /// A documented fact did not re-derive.
    Check(Output),
    /// A saved frame failed re-verification.
    NotNormal(Output),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Run<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Run<T> {
    Err(Failure::Usage(msg.into()))
}

pub struct Context<'a> {
    pub global: &'a Global,
    entry: Option<(CatalogEntry, Value)>,
}

impl<'a> Context<'a> {
    pub fn new(global: &'a Global) -> Self {
        Context { global, entry: None }
    }

    /// The `source` field of the envelope.
    pub fn source(&self) -> Value {
        self.entry.as_ref().map(|(_, s)| s.clone()).unwrap_or(Value::Null)
    }

    fn load(&mut self) -> Run<&CatalogEntry> {
        if self.entry.is_none() {
            let loaded = match (&self.global.catalog, &self.global.file) {
                (Some(id), _) => (catalog::load_builtin(id)?, json!({ "catalog": id })),
                (None, Some(path)) => load_file(path)?,
                (None, None) => return usage("this command needs --catalog ID or --file PATH"),
            };
            self.entry = Some(loaded);
        }
        Ok(&self.entry.as_ref().expect("just loaded").0)
    }

    fn tol(&self) -> f64 {
        self.global.tol.unwrap_or(DEFAULT_TOL)
    }

    fn steps(&self) -> usize {
        self.global.steps.unwrap_or(DEFAULT_STEPS)
    }

    fn execution(&self) -> Execution {
        if self.global.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn grid_options(&self) -> GridOptions {
        GridOptions {
            nodes: self.global.grid.unwrap_or(DEFAULT_NODES),
            steps_per_leg: self.global.steps.unwrap_or(DEFAULT_STEPS_PER_LEG),
            tol: self.tol(),
            execution: self.execution(),
            ..Default::default()
        }
    }
}

fn load_file(path: &Path) -> Run<(CatalogEntry, Value)> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let text =
        String::from_utf8(bytes.clone()).map_err(|_| Failure::Usage(format!("{} is not UTF-8", path.display())))?;
    let entry = catalog::load_definition(&text)?;
    let hash = hex::encode(Sha256::digest(&bytes));
    Ok((entry, json!({ "file": path.display().to_string(), "sha256": hash })))
}

fn rows(m: &Matrix) -> Value {
    json!(m.to_rows())
}

fn check_point(entry: &CatalogEntry, at: &[f64]) -> Run<()> {
    if at.len() != entry.dim() {
        return usage(format!("--at needs {} coordinates", entry.dim()));
    }
    Ok(entry.chart.require(at)?)
}

fn select_path(entry: &CatalogEntry, sel: &PathSel) -> Run<PathCurve> {
    match &sel.path {
        Some(name) => Ok(entry.find_path(name)?),
        None => {
            let [a, b] = <[f64; 2]>::try_from(sel.t_range.as_slice())
                .map_err(|_| Failure::Usage("--t-range needs two values".into()))?;
            Ok(PathCurve::parse(entry.chart.clone(), &sel.expr, (a, b))?)
        }
    }
}

/// Evenly spread indices into `len` samples, always including both ends.
fn thin(len: usize, rows: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let rows = rows.clamp(2, len.max(2));
    let mut idx: Vec<usize> =
        (0..rows).map(|s| ((s as f64) * (len - 1) as f64 / (rows - 1) as f64).round() as usize).collect();
    idx.dedup();
    idx
}

fn names(entry: &CatalogEntry, prefix: &str) -> Vec<String> {
    entry.chart.names().iter().map(|n| format!("{prefix}{n}")).collect()
}

pub fn run(ctx: &mut Context, command: &Command) -> Run<Output> {
    match command {
        Command::Christoffel(p) => {
            let e = ctx.load()?;
            check_point(e, &p.at)?;
            let g = e.connection.coefficients(&p.at)?;
            Ok(Output::new(json!({ "point": p.at, "gamma": g.to_nested(), "max_abs": g.max_abs() })))
        }
        Command::Torsion(p) => {
            let e = ctx.load()?;
            check_point(e, &p.at)?;
            let t = torsion_at(&e.connection, &p.at)?;
            Ok(Output::new(json!({ "point": p.at, "torsion": t.to_nested(), "max_abs": t.max_abs() })))
        }
        Command::Curvature(p) => {
            let e = ctx.load()?;
            check_point(e, &p.at)?;
            let r = curvature_at(&e.connection, &p.at)?;
            let n = e.dim();
            let nested: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
                .map(|i| {
                    (0..n).map(|k| (0..n).map(|j| (0..n).map(|l| r.get(i, k, j, l)).collect()).collect()).collect()
                })
                .collect();
            Ok(Output::new(json!({ "point": p.at, "curvature": nested, "max_abs": r.max_abs() })))
        }
        Command::Geodesic { point, velocity, t_max, samples } => {
            let steps = ctx.steps();
            let e = ctx.load()?;
            check_point(e, &point.at)?;
            let c = &e.connection;
            let path = geodesic(c, &point.at, velocity, *t_max, steps)?;
            let (_, estimate) = richardson(steps, DEFAULT_RICHARDSON_TOL, |n| {
                let p = geodesic(c, &point.at, velocity, *t_max, n)?;
                Ok(p.end().iter().chain(p.velocities.last().expect("non-empty")).copied().collect())
            })?;
            let drift = match &e.metric {
                Some(g) => {
                    let q0 = g.inner(&point.at, velocity, velocity)?;
                    let mut worst: f64 = 0.0;
                    for (x, v) in path.points.iter().zip(&path.velocities) {
                        worst = worst.max((g.inner(x, v, v)? - q0).abs());
                    }
                    Some(worst)
                }
                None => None,
            };
            let mut headers = vec!["t".to_string()];
            headers.extend(names(e, ""));
            headers.extend(names(e, "d"));
            let table = Table {
                headers,
                rows: thin(path.len(), *samples + 1)
                    .into_iter()
                    .map(|i| {
                        let mut r = vec![path.ts[i]];
                        r.extend(&path.points[i]);
                        r.extend(&path.velocities[i]);
                        r
                    })
                    .collect(),
            };
            Ok(Output::new(json!({
                "end_point": path.end(),
                "end_velocity": path.velocities.last(),
                "steps": steps,
                "error_estimate": estimate,
                "norm_drift": drift,
            }))
            .with_table(table))
        }
        Command::Transport { path, vector, samples } => {
            let steps = ctx.steps();
            let e = ctx.load()?;
            let curve = select_path(e, path)?;
            let c = &e.connection;
            let along = parallel_transport(c, &curve, vector, steps)?;
            let (_, estimate) = richardson(steps, DEFAULT_RICHARDSON_TOL, |n| {
                Ok(parallel_transport(c, &curve, vector, n)?.end().to_vec())
            })?;
            let drift = match &e.metric {
                Some(g) => {
                    let (a, _) = curve.t_range();
                    let q0 = g.inner(&curve.point(a)?, vector, vector)?;
                    let mut worst: f64 = 0.0;
                    for (t, u) in along.ts.iter().zip(&along.values) {
                        worst = worst.max((g.inner(&curve.point(*t)?, u, u)? - q0).abs());
                    }
                    Some(worst)
                }
                None => None,
            };
            let mut headers = vec!["t".to_string()];
            headers.extend((0..e.dim()).map(|i| format!("u{i}")));
            let table = Table {
                headers,
                rows: thin(along.ts.len(), *samples + 1)
                    .into_iter()
                    .map(|i| std::iter::once(along.ts[i]).chain(along.values[i].iter().copied()).collect())
                    .collect(),
            };
            Ok(Output::new(json!({
                "path": curve.render(),
                "t_range": curve.t_range(),
                "end": along.end(),
                "steps": steps,
                "error_estimate": estimate,
                "norm_drift": drift,
            }))
            .with_table(table))
        }
        Command::Holonomy { path } => {
            let steps = ctx.steps();
            let e = ctx.load()?;
            let curve = select_path(e, path)?;
            let h = holonomy(&e.connection, &curve, steps)?;
            let angle = match &e.metric {
                Some(g) => rotation_angle_2d(&h.matrix, &g.at(&curve.point(curve.t_range().0)?)?),
                None => None,
            };
            Ok(Output::new(json!({
                "path": curve.render(),
                "matrix": rows(&h.matrix),
                "defect": h.defect,
                "rotation_angle": angle,
                "steps": steps,
            })))
        }
        Command::Normal(cmd) => normal(ctx, cmd),
        Command::Bundle(cmd) => bundle(ctx, cmd),
        Command::Verify { input } => verify(ctx, input),
        Command::Catalog(cmd) => catalog_cmd(ctx, cmd),
    }
}

fn normal(ctx: &mut Context, cmd: &NormalCmd) -> Run<Output> {
    let tol = ctx.tol();
    let steps = ctx.steps();
    let opts = ctx.grid_options();
    let e = ctx.load()?;
    let c = &e.connection;
    match cmd {
        NormalCmd::Point { point, coords } => {
            check_point(e, &point.at)?;
            let frame = normal_frame_at_point(c, &point.at, None)?;
            let report = verify_frame_at_point(c, &frame, &point.at, tol)?;
            let mut result = json!({ "frame": frame.render(), "report": report });
            if *coords {
                let cc = normal_coords_at_point(c, &point.at, &Default::default())?;
                let by_frame = cc.verify(c, std::slice::from_ref(&point.at), tol, Route::Frame)?;
                let by_differences = cc.verify(c, std::slice::from_ref(&point.at), tol, Route::Differences)?;
                result["coordinates"] = json!({
                    "forward": cc.render(),
                    "report": by_frame,
                    "report_differences": by_differences,
                });
            }
            Ok(Output::new(result))
        }
        NormalCmd::Path { path, samples } => {
            let curve = select_path(e, path)?;
            let frame = normal_frame_along_path(c, &curve, &Matrix::identity(e.dim()), steps)?;
            let report = verify_path_frame(c, &frame, *samples, tol)?;
            let n = e.dim();
            let mut headers = vec!["t".to_string()];
            headers.extend((0..n * n).map(|q| format!("A{}{}", q / n, q % n)));
            let table = Table {
                headers,
                rows: thin(frame.len(), *samples)
                    .into_iter()
                    .map(|i| std::iter::once(frame.ts[i]).chain(frame.frames[i].as_slice().iter().copied()).collect())
                    .collect(),
            };
            Ok(Output::new(json!({
                "kind": "path-frame",
                "path": curve.render(),
                "path_name": curve.name(),
                "report": report,
                "end_frame": rows(frame.frames.last().expect("non-empty")),
                "frame": frame,
            }))
            .with_table(table))
        }
        NormalCmd::Open { lower, upper, base, coords } => {
            let default = e.definition.open_set.as_ref();
            let pick = |given: &Vec<f64>, fallback: Option<&Vec<f64>>, what: &str| -> Run<Vec<f64>> {
                if !given.is_empty() {
                    Ok(given.clone())
                } else {
                    fallback.cloned().ok_or_else(|| Failure::Usage(format!("--{what} is required for this entry")))
                }
            };
            let lower = pick(lower, default.map(|b| &b.lower), "lower")?;
            let upper = pick(upper, default.map(|b| &b.upper), "upper")?;
            let base = pick(base, default.map(|b| &b.base), "base")?;
            let n = e.dim();
            if lower.len() != n || upper.len() != n || base.len() != n {
                return usage(format!("--lower, --upper and --base need {n} values"));
            }
            let r = normal_frame_on_open_set(c, &lower, &upper, &base, &opts)?;
            let mut result = json!({
                "kind": "open-set-frame",
                "report": r.report,
                "max_curvature": r.max_curvature,
                "base": base,
                "frame": r.frame,
            });
            if *coords {
                let cc = normal_coords_on_open_set(c, &lower, &upper, &base, &opts)?;
                let samples: Vec<Value> = r
                    .frame
                    .points
                    .iter()
                    .map(|x| cc.change.to_new(x).map(|y| json!({ "x": x, "x_new": y })))
                    .collect::<Result<_, _>>()?;
                result["coordinates"] = json!({
                    "report": cc.report,
                    "integrability": cc.integrability,
                    "max_torsion": cc.max_torsion,
                    "samples": samples,
                });
            }
            Ok(Output::new(result).with_table(grid_table(&r.frame)))
        }
        NormalCmd::Patch { patch, base } => {
            let (def, p) = e.find_patch(patch)?;
            if let Some(g) = &e.metric {
                p.check_induced_metric(g, opts.nodes)?;
            }
            let base = if base.is_empty() { None } else { Some(base.as_slice()) };
            if base.is_some_and(|b| b.len() != p.dim()) {
                return usage(format!("--base needs {} parameters", p.dim()));
            }
            let r = submanifold_normality(c, &p, base, &opts)?;
            Ok(Output::new(json!({
                "kind": "patch-frame",
                "patch": def.name,
                "report": r.report,
                "loops_checked": r.loops_checked,
                "max_loop_defect": r.max_loop_defect,
                "max_curvature": r.max_curvature,
                "frame": r.frame,
            }))
            .with_table(grid_table(&r.frame)))
        }
        NormalCmd::Fermi { path, samples, offset } => {
            let curve = select_path(e, path)?;
            let cc = fermi_coords(c, &curve, None, steps)?;
            let (a, b) = curve.t_range();
            let n = e.dim();
            let at = |d: f64| -> Vec<Vec<f64>> {
                (0..*samples.max(&2))
                    .map(|s| {
                        let mut p = vec![0.0; n];
                        p[0] = a + (b - a) * s as f64 / (samples.max(&2) - 1) as f64;
                        if n > 1 {
                            p[1] = d;
                        }
                        p
                    })
                    .collect()
            };
            let on_axis = at(0.0);
            let mut result = json!({
                "axis": curve.render(),
                "report": cc.verify(c, &on_axis, tol, Route::Frame)?,
                "report_differences": cc.verify(c, &on_axis, tol, Route::Differences)?,
            });
            if let Some(d) = offset {
                result["off_axis"] = json!({ "offset": d, "report": cc.verify(c, &at(*d), tol, Route::Frame)? });
            }
            Ok(Output::new(result))
        }
        NormalCmd::Riemann { point, radius, direction } => {
            check_point(e, &point.at)?;
            let n = e.dim();
            let cc = riemann_normal_coords(c, &point.at, None, *radius, steps)?;
            let origin = cc.verify(c, &[vec![0.0; n]], tol, Route::Frame)?;
            let dir = if direction.is_empty() { vec![1.0; n] } else { direction.clone() };
            if dir.len() != n {
                return usage(format!("--direction needs {n} components"));
            }
            let (slope, residuals) = metric_expansion_slope(c, &cc, &dir, &EXPANSION_RADII)?;
            Ok(Output::new(json!({
                "origin": point.at,
                "frame": rows(&cc.induced_frame(&vec![0.0; n])?),
                "report": origin,
                "expansion": { "direction": dir, "radii": EXPANSION_RADII, "residuals": residuals, "slope": slope },
            })))
        }
    }
}

fn grid_table(frame: &GridFrame) -> Table {
    let (m, n) = (frame.lower.len(), frame.frames.first().map_or(0, |f| f.rows()));
    let mut headers: Vec<String> = (0..m).map(|i| format!("u{i}")).collect();
    headers.extend((0..n * n).map(|q| format!("A{}{}", q / n, q % n)));
    Table {
        headers,
        rows: frame
            .params
            .iter()
            .zip(&frame.frames)
            .map(|(u, a)| u.iter().chain(a.as_slice()).copied().collect())
            .collect(),
    }
}

fn bundle(ctx: &mut Context, cmd: &BundleCmd) -> Run<Output> {
    let steps = ctx.steps();
    let seed = ctx.global.seed;
    let tol = ctx.global.tol.unwrap_or(LINEARITY_TOL);
    let e = ctx.load()?;
    match cmd {
        BundleCmd::Transport { generator, from, to, vector } => {
            let law = e.find_generator(generator)?;
            Ok(Output::new(json!({
                "vector": law.apply(*from, *to, vector)?,
                "matrix": rows(&law.matrix(*from, *to)?),
            })))
        }
        BundleCmd::Derivation { generator, at_t } => {
            let law = e.find_generator(generator)?;
            let d = law.derivation();
            let (a, b) = law.t_range();
            let rebuilt = d.transport(a, b, steps)?;
            Ok(Output::new(json!({
                "t": at_t,
                "coefficients": rows(&d.coefficients(*at_t)?),
                "round_trip_error": rebuilt.max_abs_diff(&law.matrix(a, b)?),
                "steps": steps,
            })))
        }
        BundleCmd::Normal { generator, pairs } => {
            let law = e.find_generator(generator)?;
            let (a, b) = law.t_range();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..*pairs).map(|_| (rng.gen_range(a..=b), rng.gen_range(a..=b))).collect();
            let defect = law.frame_defect(|t| law.normal_frame(t, None), &pts)?;
            Ok(Output::new(json!({
                "frame_at_start": rows(&law.normal_frame(a, None)?),
                "pairs": pairs,
                "defect": defect,
            })))
        }
        BundleCmd::Autoparallel { point, velocity, t_max, transport, samples } => {
            check_point(e, &point.at)?;
            let coeff: Box<dyn TangentCoefficients> = match transport {
                Some(name) => e.find_tangent_transport(name)?,
                None => Box::new(e.connection.clone()),
            };
            let path = autoparallel(coeff.as_ref(), &point.at, velocity, *t_max, steps)?;
            let geo = geodesic(&e.connection, &point.at, velocity, *t_max, steps)?;
            let gap = path
                .points
                .iter()
                .zip(&geo.points)
                .flat_map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            let mut headers = vec!["t".to_string()];
            headers.extend(names(e, ""));
            let table = Table {
                headers,
                rows: thin(path.len(), *samples + 1)
                    .into_iter()
                    .map(|i| std::iter::once(path.ts[i]).chain(path.points[i].iter().copied()).collect())
                    .collect(),
            };
            Ok(Output::new(json!({
                "end_point": path.end(),
                "geodesic_gap": gap,
                "steps": steps,
            }))
            .with_table(table))
        }
        BundleCmd::Linearity { transport, strict, samples } => {
            let coeff: Box<dyn TangentCoefficients> = match transport {
                Some(name) => e.find_tangent_transport(name)?,
                None => Box::new(e.connection.clone()),
            };
            let report = tangent_transport_linearity_check(coeff.as_ref(), *samples, seed, tol, *strict)?;
            let torsion = if report.linear {
                let mut worst: f64 = 0.0;
                for x in e.chart.sample_points(*samples, seed) {
                    worst = worst.max(transport_torsion(coeff.as_ref(), &x)?.max_abs());
                }
                Some(worst)
            } else {
                None
            };
            Ok(Output::new(json!({ "report": report, "max_torsion": torsion })))
        }
    }
}

fn verify(ctx: &mut Context, input: &Path) -> Run<Output> {
    let text =
        fs::read_to_string(input).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", input.display())))?;
    let saved: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
    if ctx.global.catalog.is_none() && ctx.global.file.is_none() {
        let source = &saved["source"];
        let loaded = if let Some(id) = source["catalog"].as_str() {
            (catalog::load_builtin(id)?, json!({ "catalog": id }))
        } else if let Some(path) = source["file"].as_str() {
            let (entry, s) = load_file(Path::new(path))?;
            if s["sha256"] != source["sha256"] {
                return usage(format!("{path} changed since the report was written"));
            }
            (entry, s)
        } else {
            return usage("the report names no source; pass --catalog or --file");
        };
        ctx.entry = Some(loaded);
    }
    let tol = ctx.tol();
    let steps = ctx.global.steps.unwrap_or(DEFAULT_STEPS_PER_LEG);
    let execution = ctx.execution();
    let e = ctx.load()?;
    let result = &saved["result"];
    let frame = result["frame"].clone();
    let bad = |err: serde_json::Error| Failure::Usage(format!("malformed frame: {err}"));
    let report = match result["kind"].as_str() {
        Some("open-set-frame") => {
            let f: GridFrame = serde_json::from_value(frame).map_err(bad)?;
            let patch = Patch::open_box(e.chart.clone(), f.lower.clone(), f.upper.clone())?;
            verify_grid_frame(&e.connection, &patch, &f, tol, steps, execution)?
        }
        Some("patch-frame") => {
            let f: GridFrame = serde_json::from_value(frame).map_err(bad)?;
            let name = result["patch"].as_str().unwrap_or_default();
            let (_, patch) = e.find_patch(name)?;
            verify_grid_frame(&e.connection, &patch, &f, tol, steps, execution)?
        }
        Some("path-frame") => {
            let f: PathFrame = serde_json::from_value(frame).map_err(bad)?;
            verify_path_frame(&e.connection, &f, f.len(), tol)?
        }
        _ => return usage("the report holds no open-set, patch or path frame"),
    };
    let normal = report.is_normal();
    let out = Output::new(json!({ "kind": result["kind"], "report": report }));
    if normal {
        Ok(out)
    } else {
        Err(Failure::NotNormal(out))
    }
}

fn catalog_cmd(ctx: &mut Context, cmd: &CatalogCmd) -> Run<Output> {
    match cmd {
        CatalogCmd::List => {
            let mut list = Vec::new();
            for id in catalog::builtin_ids() {
                let e = catalog::load_builtin(id)?;
                list.push(json!({
                    "id": id,
                    "dim": e.dim(),
                    "kind": if e.metric.is_some() { "metric" } else { "connection" },
                    "description": e.definition.description,
                }));
            }
            Ok(Output::new(json!({ "entries": list })))
        }
        CatalogCmd::Show { id } => {
            let e = catalog::load_builtin(id)?;
            ctx.entry = Some((e.clone(), json!({ "catalog": id })));
            Ok(Output::new(serde_json::to_value(&e.definition).expect("definitions serialize")))
        }
        CatalogCmd::VerifyAll => {
            let mut reports = Vec::new();
            let mut ok = true;
            for id in catalog::builtin_ids() {
                let r = catalog::verify_facts(&catalog::load_builtin(id)?, ctx.global.seed)?;
                ok &= r.ok;
                reports.push(r);
            }
            let out = Output::new(json!({ "ok": ok, "entries": reports }));
            if ok {
                Ok(out)
            } else {
                Err(Failure::Check(out))
            }
        }
        CatalogCmd::Schema => {
            Ok(Output::new(serde_json::from_str(catalog::SCHEMA).expect("the shipped schema is valid JSON")))
        }
    }
}
