mod args;
mod output;
mod run;

use std::io::Write;

use clap::Parser;
use serde_json::{json, Value};

use normframe::Error;

use args::Cli;
use output::{render, Envelope, Format, Tool, SCHEMA_VERSION};
use run::{Context, Failure};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_OBSTRUCTION: i32 = 3;

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Expr(_) => "expression",
        Error::SingularMetric { .. } => "singular-metric",
        Error::SingularFrame { .. } => "singular-frame",
        Error::OutsideDomain { .. } => "outside-domain",
        Error::DomainExit { .. } => "domain-exit",
        Error::NonFinite { .. } => "non-finite",
        Error::NoConvergence { .. } => "no-convergence",
        Error::NotALoop { .. } => "not-a-loop",
        Error::TorsionObstruction { .. } => "torsion-obstruction",
        Error::CurvatureObstruction { .. } => "curvature-obstruction",
        Error::HolonomyObstruction(_) => "holonomy-obstruction",
        Error::OutOfRange { .. } => "out-of-range",
        Error::SingularGenerator { .. } => "singular-generator",
        Error::Schema { .. } => "schema",
        Error::Invalid(_) => "invalid",
    }
}

fn error_detail(e: &Error) -> Value {
    match e {
        Error::SingularMetric { point } | Error::SingularFrame { point } | Error::OutsideDomain { point } => {
            json!({ "point": point })
        }
        Error::DomainExit { t, point } => json!({ "t": t, "point": point }),
        Error::NonFinite { t } | Error::SingularGenerator { t } => json!({ "t": t }),
        Error::NoConvergence { residual } => json!({ "residual": residual }),
        Error::NotALoop { gap } => json!({ "gap": gap }),
        Error::TorsionObstruction { point, norm } | Error::CurvatureObstruction { point, norm } => {
            json!({ "point": point, "norm": norm })
        }
        Error::HolonomyObstruction(l) => serde_json::to_value(l).unwrap_or(Value::Null),
        Error::OutOfRange { value, lo, hi } => json!({ "value": value, "lo": lo, "hi": hi }),
        Error::Schema { path, .. } => json!({ "path": path }),
        _ => Value::Null,
    }
}

/// Exit code for a library error: existence questions answered negatively
/// and domain trouble give 3, malformed input gives 2.
fn exit_code(e: &Error) -> i32 {
    if e.is_obstruction_or_domain() || matches!(e, Error::OutOfRange { .. } | Error::SingularGenerator { .. }) {
        EXIT_OBSTRUCTION
    } else {
        EXIT_USAGE
    }
}

/// Parses `argv`, runs the command and writes the report to `out`.
pub fn main_with<W: Write>(argv: Vec<String>, out: &mut W) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let format = if cli.global.json {
        Format::Json
    } else if cli.global.csv {
        Format::Csv
    } else {
        Format::Text
    };
    let mut ctx = Context::new(&cli.global);
    let outcome = run::run(&mut ctx, &cli.command);
    let (status, code, output, error) = match outcome {
        Ok(o) => ("ok", EXIT_OK, Some(o), None),
        Err(Failure::Usage(m)) => ("error", EXIT_USAGE, None, Some(json!({ "kind": "usage", "message": m }))),
        Err(Failure::Check(o)) => ("failed", EXIT_INTERNAL, Some(o), None),
        Err(Failure::NotNormal(o)) => ("not-normal", EXIT_OBSTRUCTION, Some(o), None),
        Err(Failure::Lib(e)) => {
            let code = exit_code(&e);
            let status = if code == EXIT_OBSTRUCTION { "obstruction" } else { "error" };
            let err = json!({ "kind": error_kind(&e), "message": e.to_string(), "detail": error_detail(&e) });
            (status, code, None, Some(err))
        }
    };
    if let Some(err) = &error {
        if format == Format::Text {
            eprintln!("normframe: {}", err["message"].as_str().unwrap_or("error"));
        }
    }
    let (result, table) = match output {
        Some(o) => (o.result, o.table),
        None => (Value::Null, None),
    };
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        tool: Tool { name: "normframe", version: env!("CARGO_PKG_VERSION") },
        command: argv.iter().skip(1).cloned().collect(),
        source: ctx.source(),
        seed: cli.global.seed,
        status,
        result,
        error,
    };
    if out.write_all(render(&envelope, table.as_ref(), format).as_bytes()).is_err() {
        return EXIT_INTERNAL;
    }
    code
}
