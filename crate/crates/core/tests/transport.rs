mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use normframe::catalog::{self, CatalogEntry};
use normframe::linalg::Matrix;
use normframe::transport::{
    exp_map, geodesic, holonomy, log_map, parallel_transport, transport_matrix, Curve, PathCurve, Reversed,
};
use normframe::Error;
use proptest::prelude::*;

use common::{hamiltonian_geodesic, max_diff, sphere_latitude_exact};

fn load(id: &str) -> CatalogEntry {
    catalog::load_builtin(id).unwrap()
}

fn latitude(e: &CatalogEntry, theta: f64, phi1: f64) -> PathCurve {
    PathCurve::parse(e.chart.clone(), &[format!("{theta}"), "t".to_string()], (0.0, phi1)).unwrap()
}

#[test]
fn latitude_transport_matches_closed_form() {
    let e = load("sphere");
    for (theta, phi1) in [(1.0, FRAC_PI_2), (0.4, 2.0 * PI), (FRAC_PI_2 - 0.2, 5.0)] {
        let v = [0.3, -0.7];
        let end = parallel_transport(&e.connection, &latitude(&e, theta, phi1), &v, 1600).unwrap();
        let exact = sphere_latitude_exact(theta, phi1, v);
        assert!(max_diff(end.end(), &exact) < 1e-10, "θ = {theta}: {}", max_diff(end.end(), &exact));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transport_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, u in prop::array::uniform2(-1.0f64..1.0), w in prop::array::uniform2(-1.0f64..1.0)) {
        let e = load("polar-plane");
        let curve = e.find_path("spiral").unwrap();
        let t = |v: &[f64]| parallel_transport(&e.connection, &curve, v, 200).unwrap().end().to_vec();
        let mix: Vec<f64> = (0..2).map(|i| a * u[i] + b * w[i]).collect();
        let (tu, tw) = (t(&u), t(&w));
        let expect: Vec<f64> = (0..2).map(|i| a * tu[i] + b * tw[i]).collect();
        prop_assert!(max_diff(&t(&mix), &expect) < 1e-12);
    }

    #[test]
    fn reversal_undoes_transport(theta in 0.5f64..2.5, phi1 in 0.5f64..6.0, u in prop::array::uniform2(-1.0f64..1.0)) {
        let e = load("sphere");
        let curve = latitude(&e, theta, phi1);
        let there = parallel_transport(&e.connection, &curve, &u, 400).unwrap();
        let back = parallel_transport(&e.connection, &Reversed(&curve), there.end(), 400).unwrap();
        prop_assert!(max_diff(back.end(), &u) < 1e-9);
    }

    #[test]
    fn levi_civita_transport_preserves_lengths(s in 0.0f64..1.0, u in prop::array::uniform2(-1.0f64..1.0)) {
        let e = load("torus");
        let curve = e.find_path("diagonal").unwrap();
        let g = e.metric.as_ref().unwrap();
        let along = parallel_transport(&e.connection, &curve, &u, 1200).unwrap();
        let q0 = g.inner(&curve.point(curve.t_range().0).unwrap(), &u, &u).unwrap();
        let i = ((along.ts.len() - 1) as f64 * s) as usize;
        let x = curve.point(along.ts[i]).unwrap();
        let q = g.inner(&x, &along.values[i], &along.values[i]).unwrap();
        prop_assert!((q - q0).abs() < 1e-9 * q0.max(1.0), "{q} {q0} {}", along.ts[i]);
    }
}

#[test]
fn geodesics_agree_with_hamiltonian_oracle() {
    for (id, x0, v0) in [
        ("torus", vec![0.5, 0.5], vec![0.7, 0.2]),
        ("einstein-static", vec![0.5, 1.2, 1.2, 0.5], vec![1.0, 0.1, 0.05, -0.2]),
    ] {
        let e = load(id);
        let lib = geodesic(&e.connection, &x0, &v0, 1.0, 400).unwrap();
        let oracle = hamiltonian_geodesic(&e, &x0, &v0, 1.0, 400);
        for (p, q) in lib.points.iter().zip(&oracle) {
            assert!(max_diff(p, q) < 1e-8, "{id}");
        }
    }
}

#[test]
fn holonomy_of_flat_and_round_loops() {
    let torus = load("flat-torus");
    let loop_ = torus.find_path("x-loop").unwrap();
    let h = holonomy(&torus.connection, &loop_, 200).unwrap();
    assert!(h.defect < 1e-12);

    let s = load("sphere");
    let theta = 0.9;
    let h = holonomy(&s.connection, &latitude(&s, theta, 2.0 * PI), 2000).unwrap();
    for (j, v) in [[1.0, 0.0], [0.0, 1.0]].into_iter().enumerate() {
        let col = sphere_latitude_exact(theta, 2.0 * PI, v);
        assert!((h.matrix[(0, j)] - col[0]).abs() < 1e-10 && (h.matrix[(1, j)] - col[1]).abs() < 1e-10);
    }

    let open = latitude(&s, theta, 3.0);
    assert!(matches!(holonomy(&s.connection, &open, 100), Err(Error::NotALoop { .. })));
}

#[test]
fn matrix_transport_is_columnwise() {
    let e = load("pseudo-sphere");
    let curve = e.find_path("wave").unwrap();
    let u0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap();
    let m = transport_matrix(&e.connection, &curve, &u0, 300).unwrap();
    for j in 0..2 {
        let col = parallel_transport(&e.connection, &curve, &u0.column(j), 300).unwrap();
        assert!(max_diff(&m.column(j), col.end()) < 1e-13);
    }
}

#[test]
fn log_inverts_exp() {
    let e = load("sphere");
    let x0 = [1.0, 0.5];
    for v in [[0.2, 0.1], [-0.3, 0.4], [0.0, -0.6]] {
        let y = exp_map(&e.connection, &x0, &v, 400).unwrap();
        let back = log_map(&e.connection, &x0, &y, 1e-12, 400).unwrap();
        assert!(max_diff(&back, &v) < 1e-9, "{v:?}");
    }
}

#[test]
fn leaving_the_domain_is_reported() {
    let e = load("sphere");
    let r = geodesic(&e.connection, &[0.05, 0.0], &[-1.0, 0.0], 1.0, 100);
    assert!(matches!(r, Err(Error::DomainExit { .. })));
}
