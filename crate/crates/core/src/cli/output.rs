use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Arrays longer than this are summarised in text output.
const TEXT_ARRAY_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct Output {
    pub result: Value,
    pub table: Option<Table>,
}

impl Output {
    pub fn new(result: Value) -> Self {
        Output { result, table: None }
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }
}

#[derive(Debug, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: Vec<String>,
    pub source: Value,
    pub seed: u64,
    pub status: &'static str,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

pub fn render(envelope: &Envelope, table: Option<&Table>, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(envelope).expect("reports serialize");
            s.push('\n');
            s
        }
        Format::Csv => match table {
            Some(t) if envelope.error.is_none() => csv(t),
            _ => {
                let mut out = String::from("key,value\n");
                for (k, v) in flatten(&serde_json::to_value(envelope).expect("reports serialize")) {
                    let _ = writeln!(out, "{},{}", quote(&k), quote(&v));
                }
                out
            }
        },
        Format::Text => {
            let mut out = String::new();
            for (k, v) in flatten(&serde_json::to_value(envelope).expect("reports serialize")) {
                if k.starts_with("tool.") || k == "schema_version" || k.starts_with("command") {
                    continue;
                }
                let _ = writeln!(out, "{k}: {v}");
            }
            out
        }
    }
}

fn csv(t: &Table) -> String {
    let mut out = t.headers.join(",");
    out.push('\n');
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Dotted key paths with scalar or compact-array values.
fn flatten(v: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    walk(v, String::new(), &mut out);
    out
}

fn walk(v: &Value, key: String, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if key.is_empty() { k.to_string() } else { format!("{key}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                walk(x, join(k), out);
            }
        }
        Value::Array(a) if a.len() > TEXT_ARRAY_LIMIT => {
            out.push((key, format!("[{} items; use --json]", a.len())));
        }
        Value::Array(a) if a.iter().all(is_compact) => {
            out.push((key, Value::Array(a.clone()).to_string()));
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                walk(x, join(&i.to_string()), out);
            }
        }
        Value::String(s) => out.push((key, s.clone())),
        other => out.push((key, other.to_string())),
    }
}

/// Scalars, and arrays of scalars (matrices print on one line).
fn is_compact(v: &Value) -> bool {
    match v {
        Value::Array(a) => a.iter().all(|x| !x.is_array() && !x.is_object()),
        Value::Object(_) => false,
        _ => true,
    }
}
