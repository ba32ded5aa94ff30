//! Oracles shared by the integration tests. Nothing here calls the
//! library's integrators or curvature code.
#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use normframe::catalog::CatalogEntry;
use normframe::geometry::ConnectionField;

/// Classic fixed-step RK4 for `y' = f(t, y)`, returning the end state.
pub fn rk4(a: f64, b: f64, steps: usize, y0: &[f64], f: impl Fn(f64, &[f64]) -> Vec<f64>) -> Vec<f64> {
    let h = (b - a) / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], s: f64| y.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    for i in 0..steps {
        let t = a + i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = f(t + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = f(t + h, &axpy(&y, &k3, h));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// `Γⁱⱼₖ(x)` as a flat `(i·n + j)·n + k` vector.
pub fn gamma(c: &ConnectionField, x: &[f64]) -> Vec<f64> {
    c.coefficients(x).unwrap().as_slice().to_vec()
}

/// `max |Rⁱₖⱼₗ|` at `x` with the coefficient derivatives taken by fourth
/// order central differences of step `h`.
pub fn fd_curvature_norm(c: &ConnectionField, x: &[f64], h: f64) -> f64 {
    let n = c.dim();
    let g0 = gamma(c, x);
    let at = |m: usize, s: f64| {
        let mut y = x.to_vec();
        y[m] += s;
        gamma(c, &y)
    };
    // d[m][idx] = ∂ₘ Γ[idx]
    let d: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            let (p1, m1, p2, m2) = (at(m, h), at(m, -h), at(m, 2.0 * h), at(m, -2.0 * h));
            (0..n * n * n).map(|q| (8.0 * (p1[q] - m1[q]) - (p2[q] - m2[q])) / (12.0 * h)).collect()
        })
        .collect();
    let g = |i: usize, j: usize, k: usize| g0[(i * n + j) * n + k];
    let dg = |m: usize, i: usize, j: usize, k: usize| d[m][(i * n + j) * n + k];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let mut r = dg(j, i, l, k) - dg(l, i, j, k);
                    for a in 0..n {
                        r += g(i, j, a) * g(a, l, k) - g(i, l, a) * g(a, j, k);
                    }
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    worst
}

/// Parallel transport along the sphere latitude `θ = θ₀`, `φ ∈ [0, φ₁]`,
/// in closed form: with `w = sin θ₀ · vᵠ`, `(vᶿ, w)` rotates at rate
/// `cos θ₀`.
pub fn sphere_latitude_exact(theta0: f64, phi1: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = (theta0.sin(), theta0.cos());
    let (a, w) = (v[0], s * v[1]);
    let r = c * phi1;
    let a1 = a * r.cos() + w * r.sin();
    let w1 = -a * r.sin() + w * r.cos();
    [a1, w1 / s]
}

/// The same transport integrated from the closed-form coefficients
/// `Γᶿ_φφ = −sin θ cos θ`, `Γᵠ_θφ = Γᵠ_φθ = cot θ`.
pub fn sphere_latitude_rk4(theta0: f64, phi1: f64, v: [f64; 2], steps: usize) -> [f64; 2] {
    let (s, c) = (theta0.sin(), theta0.cos());
    let y = rk4(0.0, phi1, steps, &v, |_, u| vec![s * c * u[1], -(c / s) * u[0]]);
    [y[0], y[1]]
}

/// Geodesic from the metric alone, in Hamiltonian form:
/// `ẋ = g⁻¹p`, `ṗᵢ = ½ ∂ᵢg_ab ẋᵃẋᵇ`. Metric derivatives are central
/// differences of step `h`.
pub fn hamiltonian_geodesic(entry: &CatalogEntry, x0: &[f64], v0: &[f64], t_max: f64, steps: usize) -> Vec<Vec<f64>> {
    let g = entry.metric.as_ref().expect("metric entry");
    let n = x0.len();
    let h = 1e-5;
    let metric = |x: &[f64]| g.at(x).unwrap();
    let p0 = metric(x0).mul_vec(v0);
    let mut y: Vec<f64> = x0.iter().chain(&p0).copied().collect();
    let mut out = vec![x0.to_vec()];
    let dt = t_max / steps as f64;
    for s in 0..steps {
        y = rk4(s as f64 * dt, (s + 1) as f64 * dt, 1, &y, |_, y| {
            let (x, p) = y.split_at(n);
            let v = metric(x).inverse().unwrap().mul_vec(p);
            let mut dy = v.clone();
            for i in 0..n {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let (gp, gm) = (metric(&xp), metric(&xm));
                let mut q = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        q += (gp[(a, b)] - gm[(a, b)]) / (2.0 * h) * v[a] * v[b];
                    }
                }
                dy.push(0.5 * q);
            }
            dy
        });
        out.push(y[..n].to_vec());
    }
    out
}

/// Runs the built binary, returning exit code and stdout.
pub fn normframe(bin: &Path, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(bin).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
