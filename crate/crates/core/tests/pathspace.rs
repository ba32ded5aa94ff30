mod common;

use normframe::catalog::{self, CatalogEntry};
use normframe::geometry::torsion_at;
use normframe::linalg::Matrix;
use normframe::pathspace::{
    autoparallel, extract_coefficients, tangent_transport, tangent_transport_linearity_check, transport_torsion,
    FermiWalker, NormScaled, TransportLaw, LINEARITY_TOL,
};
use normframe::transport::PathCurve;
use normframe::Error;
use proptest::prelude::*;

use common::{max_diff, rk4, sphere_latitude_exact};

fn load(id: &str) -> CatalogEntry {
    catalog::load_builtin(id).unwrap()
}

fn rot(a: f64) -> Matrix {
    Matrix::from_rows(&[vec![a.cos(), -a.sin()], vec![a.sin(), a.cos()]]).unwrap()
}

#[test]
fn rotation_generator_in_closed_form() {
    let law = load("euclidean-cartesian").find_generator("rotation").unwrap();
    for (s, t) in [(0.0, 3.0), (2.5, 0.4), (1.0, 1.7)] {
        assert!(law.matrix(s, t).unwrap().max_abs_diff(&rot(2.0 * (s - t))) < 1e-14);
    }
    assert!(matches!(law.matrix(0.0, 3.5), Err(Error::OutOfRange { .. })));
}

#[test]
fn exponential_generator_against_its_equation() {
    // L_{s→t} = diag(e^{s−t}, 1) solves u̇ = −Γu with Γ = diag(1, 0)
    let law = load("euclidean-cartesian").find_generator("exp-diagonal").unwrap();
    let g = law.derivation().coefficients(1.3).unwrap();
    assert!(g.max_abs_diff(&Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()) < 1e-14);
    let u = rk4(0.5, 1.8, 200, &[2.0, -1.0], |_, y| vec![-y[0], 0.0]);
    let lib = law.apply(0.5, 1.8, &[2.0, -1.0]).unwrap();
    assert!(max_diff(&lib, &u) < 1e-10 && (lib[0] - 2.0 * (-1.3f64).exp()).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shear_transports_compose(s in 0.0f64..2.0, r in 0.0f64..2.0, t in 0.0f64..2.0) {
        let law = load("euclidean-cartesian").find_generator("shear").unwrap();
        let two_step = &law.matrix(r, t).unwrap() * &law.matrix(s, r).unwrap();
        prop_assert!(two_step.max_abs_diff(&law.matrix(s, t).unwrap()) < 1e-12);
        prop_assert!((&law.matrix(t, s).unwrap() * &law.matrix(s, t).unwrap()).max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn shear_derivation_rebuilds_the_generator(t in 0.0f64..2.0) {
        // F Γ = Ḟ with Ḟ written out by hand
        let law = load("euclidean-cartesian").find_generator("shear").unwrap();
        let f = law.generator(t).unwrap();
        let fdot = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0; 3], vec![2.0 * t, 0.0, 1.0]]).unwrap();
        let g = law.derivation().coefficients(t).unwrap();
        prop_assert!((&f * &g).max_abs_diff(&fdot) < 1e-13);
    }

    #[test]
    fn normal_frames_of_a_law_have_no_defect(c in prop::collection::vec(-0.5f64..0.5, 9), s in 0.0f64..2.0, t in 0.0f64..2.0) {
        let law = load("euclidean-cartesian").find_generator("shear").unwrap();
        let c = Matrix::from_fn(3, 3, |i, j| c[i * 3 + j] + if i == j { 1.0 } else { 0.0 });
        let d = law.frame_defect(|t| law.normal_frame(t, Some(&c)), &[(s, t), (t, s)]).unwrap();
        prop_assert!(d < 1e-12, "{d}");
    }
}

#[test]
fn derivation_transport_matches_the_law() {
    let law = load("euclidean-cartesian").find_generator("shear").unwrap();
    let d = law.derivation().transport(0.2, 1.9, 400).unwrap();
    assert!(d.max_abs_diff(&law.matrix(0.2, 1.9).unwrap()) < 1e-9);
}

#[test]
fn singular_generators_are_refused() {
    let e = load("euclidean-cartesian");
    let r = TransportLaw::from_exprs(&e.chart, 1, &["t - 1"], (0.0, 2.0));
    assert!(matches!(r, Err(Error::SingularGenerator { .. })));
}

#[test]
fn families_are_fitted_by_their_generator() {
    let family = |s: f64, t: f64| Ok(rot(0.7 * (s - t)));
    let law = TransportLaw::from_family(2, (0.0, 3.0), 120, family).unwrap();
    // exact at the samples, fourth order between them
    assert!(law.matrix(0.0, 1.5).unwrap().max_abs_diff(&rot(-1.05)) < 1e-13);
    for (s, t) in [(0.01, 2.99), (1.234, 0.567)] {
        assert!(law.matrix(s, t).unwrap().max_abs_diff(&rot(0.7 * (s - t))) < 1e-7);
    }
    let g = law.derivation().coefficients(1.1).unwrap();
    assert!(g.max_abs_diff(&rot(std::f64::consts::FRAC_PI_2).scale(0.7)) < 1e-6);
}

#[test]
fn connection_laws_reproduce_latitude_transport() {
    let e = load("sphere");
    let theta = 0.8;
    let path = PathCurve::parse(e.chart.clone(), &[format!("{theta}"), "t".into()], (0.0, 4.0)).unwrap();
    let law = TransportLaw::from_connection(&e.connection, &path, 1600).unwrap();
    for t in [1.0, 2.5, 4.0] {
        let v = law.apply(0.0, t, &[0.4, 0.9]).unwrap();
        assert!(max_diff(&v, &sphere_latitude_exact(theta, t, [0.4, 0.9])) < 1e-10, "{t}");
    }
}

#[test]
fn fermi_walker_keeps_the_frame_of_a_latitude() {
    // a = Γ(ẋ, ẋ) is the covariant acceleration of every latitude circle
    let e = load("sphere");
    let fw = FermiWalker {
        connection: e.connection.clone(),
        acceleration: vec![e.chart.parse("-sin(th)*cos(th)").unwrap(), e.chart.parse("0").unwrap()],
    };
    let curve = PathCurve::parse(e.chart.clone(), &["0.7", "t"], (0.0, 5.0)).unwrap();
    let m = tangent_transport(&fw, &curve, 800).unwrap();
    assert!(m.max_abs_diff(&Matrix::identity(2)) < 1e-10, "{m:?}");
    // the Levi-Civita transport of the same loop rotates
    let lc = tangent_transport(&e.connection, &curve, 800).unwrap();
    assert!(lc.max_abs_diff(&Matrix::identity(2)) > 0.1);
}

#[test]
fn fermi_walker_boosts_along_a_hyperbola() {
    // x(τ) = (sinh τ, cosh τ, 0, 0) has acceleration equal to its position
    let e = load("minkowski");
    let fw = FermiWalker {
        connection: e.connection.clone(),
        acceleration: ["t", "x", "0", "0"].iter().map(|s| e.chart.parse(s).unwrap()).collect(),
    };
    let curve = PathCurve::parse(e.chart.clone(), &["sinh(t)", "cosh(t)", "0", "0"], (0.0, 1.2)).unwrap();
    let m = tangent_transport(&fw, &curve, 400).unwrap();
    let (c, s) = (1.2f64.cosh(), 1.2f64.sinh());
    let boost = Matrix::from_fn(4, 4, |i, j| match (i, j) {
        (0, 0) | (1, 1) => c,
        (0, 1) | (1, 0) => s,
        (2, 2) | (3, 3) => 1.0,
        _ => 0.0,
    });
    assert!(m.max_abs_diff(&boost) < 1e-10, "{m:?}");
}

#[test]
fn linearity_verdicts() {
    let s = load("sphere");
    let fw = s.find_tangent_transport("fermi-walker").unwrap();
    assert!(!tangent_transport_linearity_check(fw.as_ref(), 20, 3, LINEARITY_TOL, false).unwrap().linear);
    let lc = s.find_tangent_transport("levi-civita").unwrap();
    let r = tangent_transport_linearity_check(lc.as_ref(), 20, 3, LINEARITY_TOL, true).unwrap();
    assert!(r.linear && r.coefficients_vanish == Some(false));
    let flat = load("euclidean-cartesian");
    let r = tangent_transport_linearity_check(&flat.connection, 20, 3, LINEARITY_TOL, true).unwrap();
    assert!(r.linear && r.coefficients_vanish == Some(true));
    let r = tangent_transport_linearity_check(&NormScaled { chart: &s.chart }, 20, 3, LINEARITY_TOL, false).unwrap();
    assert!(!r.linear && r.max_defect > 0.1);
}

#[test]
fn extracted_coefficients_recover_the_connection() {
    for id in ["torus", "flat-with-torsion", "weyl-example"] {
        let e = load(id);
        for x in e.chart.sample_points(4, 9) {
            let g = extract_coefficients(&e.connection, &x).unwrap();
            assert!(max_diff(g.as_slice(), e.connection.coefficients(&x).unwrap().as_slice()) < 1e-15);
            let t = transport_torsion(&e.connection, &x).unwrap();
            let lib = torsion_at(&e.connection, &x).unwrap();
            let n = e.dim();
            for (i, j, k) in (0..n * n * n).map(|f| (f / (n * n), f / n % n, f % n)) {
                assert!((t.get(i, j, k) - lib.get(i, j, k)).abs() < 1e-14, "{id}");
            }
        }
    }
}

#[test]
fn norm_scaled_autoparallels_decelerate() {
    // ẍ = −|ẋ| ẋ: straight line, speed v₀ / (1 + v₀ t)
    let e = load("euclidean-cartesian");
    let v0 = [0.6, 0.8, 0.0];
    let path = autoparallel(&NormScaled { chart: &e.chart }, &[0.0; 3], &v0, 2.0, 400).unwrap();
    let dist = 3.0f64.ln();
    let end = path.points.last().unwrap();
    assert!(max_diff(end, &[0.6 * dist, 0.8 * dist, 0.0]) < 1e-9, "{end:?}");
    let speed = path.velocities.last().unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((speed - 1.0 / 3.0).abs() < 1e-9);
}
