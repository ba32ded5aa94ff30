//! Chart, metric and connection definitions in JSON, and the built-in
//! catalog of examples with their documented facts.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{
    christoffel_from_metric, curvature_at, torsion_at, Chart, ConnectionField, MetricField, DEFAULT_SAMPLES,
};
use crate::normal::{Patch, DEFAULT_TOL_R, DEFAULT_TOL_T};
use crate::pathspace::{FermiWalker, TangentCoefficients, TransportLaw};
use crate::transport::PathCurve;

/// The JSON Schema of definition files.
pub const SCHEMA: &str = include_str!("../catalog/schema.json");

const BUILTIN: &[(&str, &str)] = &[
    ("de-sitter", include_str!("../catalog/de-sitter.json")),
    ("einstein-de-sitter", include_str!("../catalog/einstein-de-sitter.json")),
    ("einstein-static", include_str!("../catalog/einstein-static.json")),
    ("euclidean-cartesian", include_str!("../catalog/euclidean-cartesian.json")),
    ("flat-torus", include_str!("../catalog/flat-torus.json")),
    ("flat-with-torsion", include_str!("../catalog/flat-with-torsion.json")),
    ("light-cone", include_str!("../catalog/light-cone.json")),
    ("minkowski", include_str!("../catalog/minkowski.json")),
    ("one-dim", include_str!("../catalog/one-dim.json")),
    ("polar-plane", include_str!("../catalog/polar-plane.json")),
    ("pseudo-sphere", include_str!("../catalog/pseudo-sphere.json")),
    ("schwarzschild", include_str!("../catalog/schwarzschild.json")),
    ("sphere", include_str!("../catalog/sphere.json")),
    ("torus", include_str!("../catalog/torus.json")),
    ("weyl-example", include_str!("../catalog/weyl-example.json")),
];

/// Absolute tolerance of Christoffel spot values.
pub const SPOT_TOL: f64 = 1e-12;

/// A definition file as written on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Definition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub coords: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    /// Open interval per coordinate name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub domain: BTreeMap<String, [f64; 2]>,
    /// Period per coordinate name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub periodic: BTreeMap<String, f64>,
    /// Points with `condition ≤ 0` are excluded from the domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Upper-triangle rows (`metric[i]` holds `g[i][i..]`), or full rows
    /// whose lower triangle repeats the upper one verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<String>>>,
    /// `gamma[i][j][k]` is `Γⁱⱼₖ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<Vec<Vec<String>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facts: Option<Facts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_set: Option<BoxDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patches: Vec<PatchDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<GeneratorDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tangent_transports: Vec<TangentTransportDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facts {
    pub flat: bool,
    pub torsion: bool,
    #[serde(default)]
    pub christoffel: Vec<SpotValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotValue {
    pub at: Vec<f64>,
    pub index: [usize; 3],
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathDef {
    pub name: String,
    pub components: Vec<String>,
    pub t_range: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDef {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub base: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchExpectation {
    Normal,
    HolonomyObstruction,
    SingularMetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchDef {
    pub name: String,
    pub params: Vec<String>,
    pub components: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub expect: PatchExpectation,
    /// Grid nodes per axis used when checking the expectation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDef {
    pub name: String,
    /// `k × k` expressions in `t`.
    pub matrix: Vec<Vec<String>>,
    pub t_range: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentTransportKind {
    /// `Γⁱⱼₖ ẋʲ` of the entry's connection.
    Connection,
    /// Fermi-Walker-type coefficients with a prescribed acceleration field.
    FermiWalker,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangentTransportDef {
    pub name: String,
    pub kind: TangentTransportKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<Vec<String>>,
}

/// A loaded, validated definition.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub definition: Definition,
    pub chart: Arc<Chart>,
    pub metric: Option<MetricField>,
    pub connection: ConnectionField,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), message: message.into() }
}

/// Parse errors carry the JSON location of the offending expression.
fn at_path<T>(path: impl FnOnce() -> String, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Expr(e) => schema(path(), e.to_string()),
        other => other,
    })
}

/// Parses and validates a definition file.
pub fn load_definition(text: &str) -> Result<CatalogEntry> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let definition: Definition =
        serde_path_to_error::deserialize(de).map_err(|e| schema(e.path().to_string(), e.inner().to_string()))?;
    CatalogEntry::from_definition(definition)
}

impl CatalogEntry {
    pub fn from_definition(definition: Definition) -> Result<Self> {
        let d = &definition;
        let mut chart = Chart::new(&d.coords).map_err(|e| schema("coords", e.to_string()))?;
        let n = chart.dim();
        for (name, value) in &d.constants {
            chart =
                chart.with_constant(name, *value).map_err(|e| schema(format!("constants.{name}"), e.to_string()))?;
        }
        let index = |chart: &Chart, field: &str, name: &str| {
            chart.index_of(name).ok_or_else(|| schema(format!("{field}.{name}"), "not a coordinate"))
        };
        for (name, [lo, hi]) in &d.domain {
            let i = index(&chart, "domain", name)?;
            chart = chart.with_bounds(i, *lo, *hi).map_err(|e| schema(format!("domain.{name}"), e.to_string()))?;
        }
        for (name, p) in &d.periodic {
            let i = index(&chart, "periodic", name)?;
            chart = chart.with_period(i, *p).map_err(|e| schema(format!("periodic.{name}"), e.to_string()))?;
        }
        if let Some(c) = &d.condition {
            chart = at_path(|| "condition".into(), chart.with_condition(c))?;
        }
        let chart = Arc::new(chart);
        let (metric, connection) = match (&d.metric, &d.gamma) {
            (Some(rows), None) => {
                let upper = upper_triangle(rows, n)?;
                let mut exprs = Vec::with_capacity(n * (n + 1) / 2);
                for (i, row) in upper.iter().enumerate() {
                    for (o, s) in row.iter().enumerate() {
                        exprs.push(at_path(|| format!("metric[{i}][{}]", i + o), chart.parse(s))?);
                    }
                }
                let mut g = MetricField::new(chart.clone(), exprs)?;
                if let Some(sig) = &d.signature {
                    if sig.len() != n || sig.iter().any(|s| s.abs() != 1) {
                        return Err(schema("signature", format!("expected {n} entries of ±1")));
                    }
                    g = g.with_signature_hint(sig.clone());
                }
                let c = christoffel_from_metric(&g);
                (Some(g), c)
            }
            (None, Some(gamma)) => {
                let shape_ok = gamma.len() == n && gamma.iter().all(|p| p.len() == n && p.iter().all(|r| r.len() == n));
                if !shape_ok {
                    return Err(schema("gamma", format!("expected {n}×{n}×{n} components")));
                }
                if d.signature.is_some() {
                    return Err(schema("signature", "a signature needs a metric"));
                }
                let mut exprs = Vec::with_capacity(n * n * n);
                for (i, plane) in gamma.iter().enumerate() {
                    for (j, row) in plane.iter().enumerate() {
                        for (k, s) in row.iter().enumerate() {
                            exprs.push(at_path(|| format!("gamma[{i}][{j}][{k}]"), chart.parse(s))?);
                        }
                    }
                }
                (None, ConnectionField::direct(chart.clone(), exprs)?)
            }
            _ => return Err(schema("", "exactly one of `metric` and `gamma` is required")),
        };
        let entry = CatalogEntry { definition, chart, metric, connection };
        entry.check_parts()?;
        Ok(entry)
    }

    /// Shapes of the auxiliary sections; expressions are parsed eagerly so
    /// errors surface at load time.
    fn check_parts(&self) -> Result<()> {
        let d = &self.definition;
        let n = self.chart.dim();
        for (p, path) in d.paths.iter().enumerate() {
            self.path_curve(path).map_err(|e| relocate(e, format!("paths[{p}]")))?;
        }
        if let Some(b) = &d.open_set {
            if b.lower.len() != n || b.upper.len() != n || b.base.len() != n {
                return Err(schema("open_set", format!("lower, upper and base need {n} entries")));
            }
        }
        for (p, patch) in d.patches.iter().enumerate() {
            self.patch(patch).map_err(|e| relocate(e, format!("patches[{p}]")))?;
        }
        for (p, g) in d.generators.iter().enumerate() {
            self.generator(g).map_err(|e| relocate(e, format!("generators[{p}]")))?;
        }
        for (p, t) in d.tangent_transports.iter().enumerate() {
            self.tangent_transport(t).map_err(|e| relocate(e, format!("tangent_transports[{p}]")))?;
        }
        for (p, s) in d.facts.iter().flat_map(|f| &f.christoffel).enumerate() {
            if s.at.len() != n || s.index.iter().any(|i| *i >= n) {
                return Err(schema(format!("facts.christoffel[{p}]"), "point or index has the wrong dimension"));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> Option<&str> {
        self.definition.id.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn path_curve(&self, p: &PathDef) -> Result<PathCurve> {
        let [a, b] = p.t_range;
        let curve = at_path(|| "components".into(), PathCurve::parse(self.chart.clone(), &p.components, (a, b)))?;
        Ok(curve.with_name(p.name.clone()))
    }

    pub fn find_path(&self, name: &str) -> Result<PathCurve> {
        let p = self
            .definition
            .paths
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Invalid(format!("no path named `{name}`")))?;
        self.path_curve(p)
    }

    pub fn patch(&self, p: &PatchDef) -> Result<Patch> {
        at_path(
            || "components".into(),
            Patch::new(self.chart.clone(), &p.params, &p.components, p.lower.clone(), p.upper.clone()),
        )
    }

    pub fn find_patch(&self, name: &str) -> Result<(&PatchDef, Patch)> {
        let p = self
            .definition
            .patches
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Invalid(format!("no patch named `{name}`")))?;
        Ok((p, self.patch(p)?))
    }

    pub fn generator(&self, g: &GeneratorDef) -> Result<TransportLaw> {
        let k = g.matrix.len();
        if k == 0 || g.matrix.iter().any(|r| r.len() != k) {
            return Err(schema("matrix", "generator must be a non-empty square matrix"));
        }
        let flat: Vec<&str> = g.matrix.iter().flatten().map(String::as_str).collect();
        let [a, b] = g.t_range;
        at_path(|| "matrix".into(), TransportLaw::from_exprs(&self.chart, k, &flat, (a, b)))
    }

    pub fn find_generator(&self, name: &str) -> Result<TransportLaw> {
        let g = self
            .definition
            .generators
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::Invalid(format!("no generator named `{name}`")))?;
        self.generator(g)
    }

    pub fn tangent_transport(&self, t: &TangentTransportDef) -> Result<Box<dyn TangentCoefficients>> {
        match (t.kind, &t.acceleration) {
            (TangentTransportKind::Connection, None) => Ok(Box::new(self.connection.clone())),
            (TangentTransportKind::FermiWalker, Some(acc)) => {
                if self.metric.is_none() {
                    return Err(schema("kind", "Fermi-Walker coefficients need a metric"));
                }
                if acc.len() != self.dim() {
                    return Err(schema("acceleration", format!("expected {} components", self.dim())));
                }
                let acceleration = acc
                    .iter()
                    .enumerate()
                    .map(|(i, s)| at_path(|| format!("acceleration[{i}]"), self.chart.parse(s)))
                    .collect::<Result<Vec<Expr>>>()?;
                Ok(Box::new(FermiWalker { connection: self.connection.clone(), acceleration }))
            }
            (TangentTransportKind::Connection, Some(_)) => {
                Err(schema("acceleration", "only Fermi-Walker transports take an acceleration"))
            }
            (TangentTransportKind::FermiWalker, None) => Err(schema("acceleration", "missing")),
        }
    }

    pub fn find_tangent_transport(&self, name: &str) -> Result<Box<dyn TangentCoefficients>> {
        let t = self
            .definition
            .tangent_transports
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Invalid(format!("no tangent transport named `{name}`")))?;
        self.tangent_transport(t)
    }
}

fn relocate(e: Error, prefix: String) -> Error {
    match e {
        Error::Schema { path, message } if path.is_empty() => schema(prefix, message),
        Error::Schema { path, message } => schema(format!("{prefix}.{path}"), message),
        Error::Expr(e) => schema(prefix, e.to_string()),
        Error::Invalid(m) => schema(prefix, m),
        other => other,
    }
}

/// Accepts upper-triangle rows, or full rows whose lower triangle repeats
/// the mirrored upper entry textually (whitespace aside).
fn upper_triangle(rows: &[Vec<String>], n: usize) -> Result<Vec<Vec<String>>> {
    if rows.len() != n {
        return Err(schema("metric", format!("expected {n} rows")));
    }
    let full = rows.iter().all(|r| r.len() == n);
    let tri = rows.iter().enumerate().all(|(i, r)| r.len() == n - i);
    if !full && !tri {
        return Err(schema("metric", "rows must be the upper triangle (row i has n − i entries) or full"));
    }
    if !full {
        return Ok(rows.to_vec());
    }
    let squash = |s: &str| s.split_whitespace().collect::<String>();
    for i in 0..n {
        for j in 0..i {
            if squash(&rows[i][j]) != squash(&rows[j][i]) {
                return Err(schema(
                    format!("metric[{i}][{j}]"),
                    format!(
                        "`{}` differs from metric[{j}][{i}] = `{}`; give the upper triangle only",
                        rows[i][j], rows[j][i]
                    ),
                ));
            }
        }
    }
    Ok(rows.iter().enumerate().map(|(i, r)| r[i..].to_vec()).collect())
}

/// Identifiers of the built-in entries, sorted.
pub fn builtin_ids() -> Vec<&'static str> {
    BUILTIN.iter().map(|(id, _)| *id).collect()
}

/// Raw JSON text of a built-in entry.
pub fn builtin_source(id: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(i, _)| *i == id).map(|(_, s)| *s)
}

pub fn load_builtin(id: &str) -> Result<CatalogEntry> {
    let text = builtin_source(id).ok_or_else(|| Error::Invalid(format!("unknown catalog entry `{id}`")))?;
    let entry = load_definition(text)?;
    if entry.id() != Some(id) {
        return Err(schema("id", format!("built-in entry `{id}` declares a different id")));
    }
    Ok(entry)
}

/// One re-derived documented fact.
#[derive(Debug, Clone, Serialize)]
pub struct FactCheck {
    pub fact: String,
    pub expected: String,
    pub observed: String,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactReport {
    pub id: String,
    pub ok: bool,
    pub checks: Vec<FactCheck>,
}

/// Re-derives the entry's documented facts: flatness and torsion on the
/// sample points, Christoffel spot values, and patch expectations.
pub fn verify_facts(entry: &CatalogEntry, seed: u64) -> Result<FactReport> {
    let mut checks = Vec::new();
    let c = &entry.connection;
    let points = entry.chart.sample_points(DEFAULT_SAMPLES, seed);
    if let Some(f) = &entry.definition.facts {
        let mut curv: f64 = 0.0;
        let mut tors: f64 = 0.0;
        for p in &points {
            curv = curv.max(curvature_at(c, p)?.max_abs());
            tors = tors.max(torsion_at(c, p)?.max_abs());
        }
        checks.push(FactCheck {
            fact: "flat".into(),
            expected: f.flat.to_string(),
            observed: format!("max |R| = {curv:e}"),
            ok: (curv < DEFAULT_TOL_R) == f.flat,
        });
        checks.push(FactCheck {
            fact: "torsion".into(),
            expected: f.torsion.to_string(),
            observed: format!("max |T| = {tors:e}"),
            ok: (tors > DEFAULT_TOL_T) == f.torsion,
        });
        for s in &f.christoffel {
            let [i, j, k] = s.index;
            let v = c.coefficients(&s.at)?.get(i, j, k);
            checks.push(FactCheck {
                fact: format!("christoffel[{i}][{j}][{k}] at {:?}", s.at),
                expected: s.value.to_string(),
                observed: v.to_string(),
                ok: (v - s.value).abs() <= SPOT_TOL * (1.0 + s.value.abs()),
            });
        }
    }
    for p in &entry.definition.patches {
        let patch = entry.patch(p)?;
        let nodes = p.nodes.unwrap_or(crate::normal::DEFAULT_NODES);
        let opts = crate::normal::GridOptions { nodes, ..Default::default() };
        let outcome = match p.expect {
            PatchExpectation::SingularMetric => match &entry.metric {
                Some(g) => patch.check_induced_metric(g, nodes),
                None => Err(Error::Invalid("no metric to induce".into())),
            },
            _ => crate::normal::submanifold_normality(c, &patch, None, &opts).map(|_| ()),
        };
        let (observed, ok) = match (&outcome, p.expect) {
            (Ok(()), PatchExpectation::Normal) => ("normal".to_string(), true),
            (Err(Error::HolonomyObstruction(l)), PatchExpectation::HolonomyObstruction) => {
                (format!("holonomy obstruction, defect {:e}", l.defect), true)
            }
            (Err(Error::SingularMetric { .. }), PatchExpectation::SingularMetric) => {
                ("singular induced metric".into(), true)
            }
            (Ok(()), _) => ("normal".into(), false),
            (Err(e), _) => (e.to_string(), false),
        };
        checks.push(FactCheck {
            fact: format!("patch {}", p.name),
            expected: serde_json::to_value(p.expect)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            observed,
            ok,
        });
    }
    Ok(FactReport { id: entry.id().unwrap_or("inline").to_string(), ok: checks.iter().all(|c| c.ok), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_symmetric_rows_accepted() {
        let e = load_definition(
            r#"{"coords": ["th", "ph"], "domain": {"th": [0, 3]}, "metric": [["1", "0"], ["0", "sin(th)^2"]]}"#,
        )
        .unwrap();
        assert_eq!(e.dim(), 2);
    }

    #[test]
    fn asymmetric_text_rejected() {
        let err = load_definition(r#"{"coords": ["x", "y"], "metric": [["1", "x"], ["y", "1"]]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "metric[1][0]"), "{err}");
    }

    #[test]
    fn unknown_fields_and_names_located() {
        let err = load_definition(r#"{"coords": ["x"], "gamma": [[["0"]]], "colour": 1}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        let err = load_definition(r#"{"coords": ["x", "y"], "metric": [["1", "0"], ["1 + q"]]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "metric[1][1]"), "{err}");
        let err = load_definition(r#"{"coords": ["x"], "gamma": [[["0"]]], "paths": [{"name": "p", "components": ["t", "t"], "t_range": [0, 1]}]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path.starts_with("paths[0]")), "{err}");
    }

    #[test]
    fn every_builtin_loads() {
        for id in builtin_ids() {
            load_builtin(id).unwrap_or_else(|e| panic!("{id}: {e}"));
        }
        assert!(load_builtin("klein-bottle").is_err());
    }

    #[test]
    fn documented_facts_hold() {
        for id in builtin_ids() {
            let r = verify_facts(&load_builtin(id).unwrap(), 0).unwrap();
            assert!(r.ok, "{id}: {:#?}", r.checks);
        }
    }
}
