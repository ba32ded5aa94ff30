use normframe::expr::{parse, parse_with_constants};
use proptest::prelude::*;

fn names() -> Vec<String> {
    vec!["x".into(), "y".into()]
}

/// Expressions that stay smooth and finite on `[-1, 1]²`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf =
        prop_oneof![Just("x".to_string()), Just("y".to_string()), (-3.0f64..3.0).prop_map(|c| format!("{c:.3}")),];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (2 + ({b})^2)")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("log(3 + sin({a}))")),
            inner.prop_map(|a| format!("({a})^3")),
        ]
    })
}

fn central(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gradients_match_differences(src in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&src, &names()).unwrap();
        let p = [x, y];
        let d = e.eval_dual(&p).unwrap();
        for i in 0..2 {
            let fd = central(|s| { let mut q = p; q[i] += s; e.eval(&q).unwrap() }, 1e-3);
            let scale = d.partial(i).abs().max(e.eval(&p).unwrap().abs()).max(1.0);
            prop_assert!((d.partial(i) - fd).abs() < 1e-6 * scale, "{src}: ∂{i} {} vs {fd}", d.partial(i));
        }
    }

    #[test]
    fn hessians_match_differences_of_gradients(src in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&src, &names()).unwrap();
        let p = [x, y];
        let j = e.eval_jet2(&p).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                let fd = central(|s| { let mut q = p; q[i] += s; e.eval_dual(&q).unwrap().partial(k) }, 1e-3);
                let scale = j.second(i, k).abs().max(j.partial(k).abs()).max(1.0);
                prop_assert!((j.second(i, k) - fd).abs() < 1e-6 * scale, "{src}: ∂{i}∂{k} {} vs {fd}", j.second(i, k));
            }
            prop_assert_eq!(j.partial(i), e.eval_dual(&p).unwrap().partial(i));
        }
        prop_assert!((j.second(0, 1) - j.second(1, 0)).abs() == 0.0);
    }

    #[test]
    fn render_round_trips(src in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&src, &names()).unwrap();
        let back = parse(&e.render(&names()), &names()).unwrap();
        let (a, b) = (e.eval(&[x, y]).unwrap(), back.eval(&[x, y]).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn frozen_values() {
    let c = names();
    // d/dx [x^2 sin(y)] = 2x sin(y); d²/dy² = −x² sin(y)
    let e = parse("x^2*sin(y)", &c).unwrap();
    let j = e.eval_jet2(&[1.5, 0.4]).unwrap();
    assert!((j.partial(0) - 3.0 * 0.4f64.sin()).abs() < 1e-15);
    assert!((j.second(1, 1) + 2.25 * 0.4f64.sin()).abs() < 1e-15);
    assert!((j.second(0, 1) - 3.0 * 0.4f64.cos()).abs() < 1e-15);
    // Schwarzschild g_tt derivative: d/dr [−(1 − 2M/r)] = −2M/r² at M = 1, r = 4
    let consts = [("M".to_string(), 1.0)].into_iter().collect();
    let g = parse_with_constants("-(1 - 2*M/r)", &["r".to_string()], &consts).unwrap();
    let d = g.eval_dual(&[4.0]).unwrap();
    assert_eq!(d.value, -0.5);
    assert_eq!(d.partial(0), -0.125);
}

#[test]
fn errors_carry_positions() {
    let c = names();
    assert!(parse("x +* y", &c).is_err());
    assert!(parse("z", &c).is_err());
    assert!(parse("sin(x", &c).is_err());
    assert!(parse("sqrt(x)", &c).unwrap().eval(&[-1.0, 0.0]).is_err());
}
