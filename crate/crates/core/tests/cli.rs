mod common;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> &'static Path {
    Path::new(env!("CARGO_BIN_EXE_normframe"))
}

fn run(args: &[&str]) -> (i32, Vec<u8>) {
    common::normframe(bin(), args)
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut a = args.to_vec();
    a.push("--json");
    let (code, out) = run(&a);
    (code, serde_json::from_slice(&out).expect("stdout is one JSON document"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli");
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn envelope_fields() {
    let args = ["--catalog", "sphere", "christoffel", "--at", "1", "0.5"];
    let (code, v) = json(&args);
    assert_eq!(code, 0);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["tool"]["name"], "normframe");
    assert_eq!(v["tool"]["version"], env!("CARGO_PKG_VERSION"));
    let argv: Vec<&str> = v["command"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
    assert_eq!(&argv[..args.len()], &args);
    assert_eq!(v["source"]["catalog"], "sphere");
    assert_eq!(v["seed"], 0);
    assert_eq!(v["status"], "ok");
    // Γ^θ_φφ = −sin θ cos θ
    let g = v["result"]["gamma"][0][1][1].as_f64().unwrap();
    assert!((g + 1f64.sin() * 1f64.cos()).abs() < 1e-15);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--catalog", "polar-plane", "christoffel", "--at", "1", "0"]).0, 0);
    // usage
    assert_eq!(run(&["christoffel", "--at", "1", "0"]).0, 2);
    assert_eq!(run(&["--catalog", "sphere", "christoffel"]).0, 2);
    assert_eq!(run(&["--catalog", "no-such-entry", "christoffel", "--at", "1"]).0, 2);
    assert_eq!(run(&["--catalog", "sphere", "christoffel", "--at", "1"]).0, 2);
    // obstruction and domain
    let (code, v) = json(&["--catalog", "sphere", "normal", "open", "--base", "1.0", "0.5"]);
    assert_eq!((code, v["status"].as_str()), (3, Some("obstruction")));
    assert_eq!(v["error"]["kind"], "curvature-obstruction");
    assert_eq!(run(&["--catalog", "sphere", "christoffel", "--at", "-0.5", "0"]).0, 3);
    // help and version are not errors
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["--version"]).0, 0);
}

#[test]
fn schema_errors_name_the_field() {
    let path = scratch("bad-def.json");
    fs::write(&path, r#"{"id": "x", "coords": ["a"], "bogus": 1}"#).unwrap();
    let (code, v) = json(&["--file", path.to_str().unwrap(), "christoffel", "--at", "1"]);
    assert_eq!(code, 2);
    assert_eq!(v["error"]["kind"], "schema");
    assert_eq!(v["error"]["detail"]["path"], "bogus");
}

#[test]
fn files_are_identified_by_hash() {
    let text = normframe::catalog::builtin_source("polar-plane").unwrap();
    let path = scratch("polar.json");
    fs::write(&path, text).unwrap();
    let (code, v) = json(&["--file", path.to_str().unwrap(), "christoffel", "--at", "1", "0"]);
    assert_eq!(code, 0);
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    assert_eq!(v["source"]["sha256"], digest.as_str());
    assert_eq!(v["source"]["file"], path.to_str().unwrap());
}

#[test]
fn saved_frames_verify_and_tampering_is_caught() {
    let args =
        ["--catalog", "polar-plane", "normal", "open", "--lower", "0.5", "0", "--upper", "2", "1", "--base", "1", "0"];
    let (code, out) = run(&[&args[..], &["--grid", "5", "--json"]].concat());
    assert_eq!(code, 0);
    let good = scratch("frame.json");
    fs::write(&good, &out).unwrap();
    let (code, v) = json(&["verify", good.to_str().unwrap()]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["result"]["report"]["verdict"], "normal");

    let mut saved: Value = serde_json::from_slice(&out).unwrap();
    let entry = &mut saved["result"]["frame"]["frames"][7]["data"][0];
    *entry = (entry.as_f64().unwrap() + 0.05).into();
    let bad = scratch("tampered.json");
    fs::write(&bad, serde_json::to_vec(&saved).unwrap()).unwrap();
    let (code, v) = json(&["verify", bad.to_str().unwrap()]);
    assert_eq!(code, 3);
    assert_eq!(v["status"], "not-normal");
}

#[test]
fn edited_definition_files_are_refused_on_verify() {
    let def = scratch("polar-edit.json");
    fs::write(&def, normframe::catalog::builtin_source("polar-plane").unwrap()).unwrap();
    let (code, out) = run(&[
        "--file",
        def.to_str().unwrap(),
        "normal",
        "open",
        "--lower",
        "0.5",
        "0",
        "--upper",
        "2",
        "1",
        "--base",
        "1",
        "0",
        "--grid",
        "5",
        "--json",
    ]);
    assert_eq!(code, 0);
    let report = scratch("polar-edit-report.json");
    fs::write(&report, out).unwrap();
    assert_eq!(run(&["verify", report.to_str().unwrap()]).0, 0);
    let mut text = fs::read_to_string(&def).unwrap();
    text.push('\n');
    fs::write(&def, text).unwrap();
    assert_eq!(run(&["verify", report.to_str().unwrap()]).0, 2);
}

#[test]
fn csv_tables_have_headers() {
    let (code, out) = run(&["--catalog", "polar-plane", "geodesic", "--at", "1", "0", "--velocity", "0", "1", "--csv"]);
    assert_eq!(code, 0);
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,r,ph,dr,dph"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(first, [0.0, 1.0, 0.0, 0.0, 1.0]);
    // straight line r = √(1 + t²) in polar coordinates
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((last[1] - 2f64.sqrt()).abs() < 1e-9 && (last[2] - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
}

#[test]
fn paths_given_inline() {
    let (code, v) =
        json(&["--catalog", "sphere", "holonomy", "--expr", "1", "t", "--t-range", "0", "6.283185307179586"]);
    assert_eq!(code, 0, "{v}");
    let angle = v["result"]["rotation_angle"].as_f64().unwrap().abs();
    let expect = 2.0 * std::f64::consts::PI * (1.0 - 1f64.cos());
    assert!((angle - expect).abs() < 1e-8, "{angle} vs {expect}");
}

#[test]
fn catalog_commands() {
    let (code, v) = json(&["catalog", "list"]);
    assert_eq!(code, 0);
    let ids: Vec<&str> = v["result"]["entries"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    for id in [
        "euclidean-cartesian",
        "polar-plane",
        "sphere",
        "pseudo-sphere",
        "torus",
        "minkowski",
        "schwarzschild",
        "de-sitter",
        "einstein-static",
        "einstein-de-sitter",
        "weyl-example",
        "flat-with-torsion",
        "one-dim",
    ] {
        assert!(ids.contains(&id), "{id}");
    }
    let (code, v) = json(&["catalog", "show", "torus"]);
    assert_eq!(code, 0);
    assert_eq!(v["result"]["id"], "torus");
    assert_eq!(run(&["catalog", "verify-all"]).0, 0);
    let (code, v) = json(&["catalog", "schema"]);
    assert_eq!(code, 0);
    assert!(v["result"]["$defs"]["expr"].is_object());
}

#[test]
fn repeated_runs_are_byte_identical() {
    for args in [
        &["--catalog", "schwarzschild", "curvature", "--at", "0", "4", "1.2", "0.3", "--json"][..],
        &["--catalog", "sphere", "bundle", "linearity", "--transport", "fermi-walker", "--json"],
        &["--catalog", "euclidean-cartesian", "bundle", "normal", "--generator", "shear", "--seed", "7", "--json"],
        &["--catalog", "torus", "transport", "--path", "diagonal", "--vector", "1", "0"],
    ] {
        let a = run(args);
        assert_eq!(a.0, 0, "{args:?}");
        assert_eq!(a, run(args), "{args:?}");
    }
}

#[test]
fn sequential_flag_does_not_change_output() {
    let base = [
        "--catalog",
        "polar-plane",
        "normal",
        "open",
        "--lower",
        "0.5",
        "0",
        "--upper",
        "2",
        "1",
        "--base",
        "1",
        "0",
        "--grid",
        "5",
        "--json",
    ];
    let (a, b) = (run(&base), run(&[&base[..], &["--sequential"]].concat()));
    let strip = |out: &[u8]| {
        let mut v: Value = serde_json::from_slice(out).unwrap();
        v["command"] = Value::Null;
        v
    };
    assert_eq!(strip(&a.1), strip(&b.1));
}
