mod common;

use normframe::catalog::{self, CatalogEntry};
use normframe::geometry::{curvature_at, torsion_at, transform_coefficients, Coefficients};
use normframe::linalg::Matrix;
use proptest::prelude::*;

use common::fd_curvature_norm;

fn entries() -> Vec<CatalogEntry> {
    catalog::builtin_ids().into_iter().map(|id| catalog::load_builtin(id).unwrap()).collect()
}

#[test]
fn curvature_matches_difference_oracle() {
    for e in entries() {
        let c = &e.connection;
        for x in e.chart.sample_points(5, 3) {
            let r = curvature_at(c, &x).unwrap();
            // the oracle returns only a norm
            let oracle = fd_curvature_norm(c, &x, 1e-3);
            assert!(
                (r.max_abs() - oracle).abs() < 1e-7 * r.max_abs().max(1.0),
                "{:?} at {x:?}: {} vs {oracle}",
                e.id(),
                r.max_abs()
            );
        }
    }
}

fn metric_entries() -> Vec<CatalogEntry> {
    entries().into_iter().filter(|e| e.metric.is_some()).collect()
}

#[test]
fn levi_civita_is_metric_compatible() {
    let h = 1e-4;
    for e in metric_entries() {
        let g = e.metric.as_ref().unwrap();
        let n = e.dim();
        for x in e.chart.sample_points(5, 4) {
            let gamma = e.connection.coefficients(&x).unwrap();
            let gx = g.at(&x).unwrap();
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let (gp, gm) = (g.at(&xp).unwrap(), g.at(&xm).unwrap());
                for i in 0..n {
                    for j in 0..n {
                        let dg = (gp[(i, j)] - gm[(i, j)]) / (2.0 * h);
                        let mut cov = dg;
                        for a in 0..n {
                            cov -= gamma.get(a, k, i) * gx[(a, j)] + gamma.get(a, k, j) * gx[(i, a)];
                        }
                        assert!(cov.abs() < 1e-6 * (1.0 + dg.abs()), "{:?}: ∇_{k} g_{i}{j} = {cov}", e.id());
                    }
                }
            }
        }
    }
}

#[test]
fn riemann_symmetries_of_metric_connections() {
    for e in metric_entries() {
        let n = e.dim();
        for x in e.chart.sample_points(4, 5) {
            let r = curvature_at(&e.connection, &x).unwrap();
            let low = r.lowered(&e.metric.as_ref().unwrap().at(&x).unwrap());
            let scale = low.max_abs().max(1.0);
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        for l in 0..n {
                            let v = low.get(i, k, j, l);
                            assert!((v - low.get(j, l, i, k)).abs() < 1e-10 * scale, "pair symmetry");
                            assert!((v + low.get(k, i, j, l)).abs() < 1e-10 * scale, "first pair");
                            assert!((v + low.get(i, k, l, j)).abs() < 1e-10 * scale, "second pair");
                            let bianchi = r.get(i, k, j, l) + r.get(i, j, l, k) + r.get(i, l, k, j);
                            assert!(bianchi.abs() < 1e-10 * scale, "first Bianchi identity");
                        }
                    }
                }
            }
        }
    }
}

/// `R_{0101} = K det g` in two dimensions.
fn gaussian_curvature(e: &CatalogEntry, x: &[f64]) -> f64 {
    let g = e.metric.as_ref().unwrap().at(x).unwrap();
    let low = curvature_at(&e.connection, x).unwrap().lowered(&g);
    low.get(0, 1, 0, 1) / g.determinant()
}

#[test]
fn frozen_curvatures() {
    let sphere = catalog::load_builtin("sphere").unwrap();
    let r = curvature_at(&sphere.connection, &[1.0, 0.5]).unwrap();
    assert!((r.get(0, 1, 0, 1) - 1.0f64.sin().powi(2)).abs() < 1e-14);
    assert!((gaussian_curvature(&sphere, &[1.0, 0.5]) - 1.0).abs() < 1e-13);

    let hyper = catalog::load_builtin("pseudo-sphere").unwrap();
    assert!((gaussian_curvature(&hyper, &[1.2, 0.3]) + 1.0).abs() < 1e-12);

    // torus of radii R = 2, a = 1: K = cos u / (a (R + a cos u))
    let torus = catalog::load_builtin("torus").unwrap();
    for u in [0.3f64, 1.9, 3.0] {
        let k = u.cos() / (2.0 + u.cos());
        assert!((gaussian_curvature(&torus, &[u, 0.7]) - k).abs() < 1e-13);
    }

    // Kretschmann scalar 48M²/r⁶
    let s = catalog::load_builtin("schwarzschild").unwrap();
    let x = [0.0, 4.0, 1.2, 0.3];
    let g = s.metric.as_ref().unwrap().at(&x).unwrap();
    let gi = g.inverse().unwrap();
    let r = curvature_at(&s.connection, &x).unwrap();
    let low = r.lowered(&g);
    let mut k = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    // raise all four indices of the lowered tensor (diagonal metric)
                    k += low.get(a, b, c, d).powi(2) * gi[(a, a)] * gi[(b, b)] * gi[(c, c)] * gi[(d, d)];
                }
            }
        }
    }
    assert!((k - 48.0 / 4096.0).abs() < 1e-14, "{k}");
}

#[test]
fn torsion_only_where_documented() {
    for e in entries() {
        let documented = e.definition.facts.as_ref().unwrap().torsion;
        let t = e
            .chart
            .sample_points(5, 6)
            .iter()
            .map(|x| torsion_at(&e.connection, x).unwrap().max_abs())
            .fold(0.0, f64::max);
        assert_eq!(t > 1e-10, documented, "{:?}", e.id());
    }
}

fn invertible(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-0.5f64..0.5, n * n)
        .prop_map(move |v| Matrix::from_fn(n, n, |i, j| v[i * n + j] + if i == j { 1.5 } else { 0.0 }))
}

fn coefficients(n: usize) -> impl Strategy<Value = Coefficients> {
    prop::collection::vec(-2.0f64..2.0, n * n * n)
        .prop_map(move |v| Coefficients::from_fn(n, |i, j, k| v[(i * n + j) * n + k]))
}

proptest! {
    #[test]
    fn constant_frame_changes_compose(g in coefficients(3), a in invertible(3), b in invertible(3)) {
        let zero = vec![Matrix::zeros(3, 3); 3];
        let x = [0.0; 3];
        let step = transform_coefficients(&transform_coefficients(&g, &a, &zero, &x).unwrap(), &b, &zero, &x).unwrap();
        let direct = transform_coefficients(&g, &(&a * &b), &zero, &x).unwrap();
        for (p, q) in step.as_slice().iter().zip(direct.as_slice()) {
            prop_assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn constant_frames_act_tensorially(g in coefficients(2), a in invertible(2)) {
        // Γ′ⁱⱼₖ = (A⁻¹)ⁱₐ Γᵃ_bc Aᵇⱼ Aᶜₖ, written out independently
        let zero = vec![Matrix::zeros(2, 2); 2];
        let out = transform_coefficients(&g, &a, &zero, &[0.0, 0.0]).unwrap();
        let inv = a.inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut v = 0.0;
                    for p in 0..2 { for b in 0..2 { for c in 0..2 {
                        v += inv[(i, p)] * g.get(p, b, c) * a[(b, j)] * a[(c, k)];
                    }}}
                    prop_assert!((out.get(i, j, k) - v).abs() < 1e-10 * (1.0 + v.abs()));
                }
            }
        }
    }
}
