//! Component expressions for metrics, connections, frames and paths.
//!
//! An [`Expr`] is an immutable syntax tree over chart coordinates. It is
//! evaluated by forward-mode Taylor arithmetic, so gradients and Hessians are
//! exact rather than finite-difference estimates. Subtrees without variables
//! are folded to literals when built.

mod jet;
mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::ops;

use thiserror::Error;

use jet::Number;
pub use jet::{Dual, Jet, JetValue, MAX_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("duplicate coordinate name `{0}`")]
    DuplicateCoordinate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expected {expected} coordinates, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    /// `(f, f', f'')` at `x`, or a domain error.
    fn derivatives(self, x: f64) -> Result<(f64, f64, f64), ExprError> {
        Ok(match self {
            Func::Sin => (x.sin(), x.cos(), -x.sin()),
            Func::Cos => (x.cos(), -x.sin(), -x.cos()),
            Func::Tan => {
                if x.cos() == 0.0 {
                    return Err(ExprError::Domain(format!("tan({x}) is undefined")));
                }
                let t = x.tan();
                let sec2 = 1.0 + t * t;
                (t, sec2, 2.0 * t * sec2)
            }
            Func::Sinh => (x.sinh(), x.cosh(), x.sinh()),
            Func::Cosh => (x.cosh(), x.sinh(), x.cosh()),
            Func::Tanh => {
                let t = x.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Func::Exp => {
                let e = x.exp();
                (e, e, e)
            }
            Func::Log => {
                if x <= 0.0 {
                    return Err(ExprError::Domain(format!("log of non-positive value {x}")));
                }
                (x.ln(), 1.0 / x, -1.0 / (x * x))
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {x}")));
                }
                let s = x.sqrt();
                (s, 0.5 / s, -0.25 / (s * x))
            }
            Func::Abs => {
                let sign = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (x.abs(), sign, 0.0)
            }
        })
    }
}

/// Expression tree. Variables are coordinate indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Parses `source` over the named coordinates.
pub fn parse(source: &str, coords: &[String]) -> Result<Expr, ExprError> {
    parse_with_constants(source, coords, &BTreeMap::new())
}

/// Parses `source`, inlining names from `constants`.
pub fn parse_with_constants(
    source: &str,
    coords: &[String],
    constants: &BTreeMap<String, f64>,
) -> Result<Expr, ExprError> {
    for (i, c) in coords.iter().enumerate() {
        if coords[..i].contains(c) {
            return Err(ExprError::DuplicateCoordinate(c.clone()));
        }
    }
    parse::Parser::new(source, coords, constants).parse()
}

impl Expr {
    pub fn num(c: f64) -> Expr {
        Expr::Num(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    /// Builds `-e`, folding literals.
    pub fn negate(e: Expr) -> Expr {
        match e {
            Expr::Num(v) => Expr::Num(-v),
            e => Expr::Neg(Box::new(e)),
        }
    }

    /// Builds `lhs op rhs`, folding literal operands and trivial identities.
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        use Expr::Num;
        match (op, &lhs, &rhs) {
            (_, Num(_), Num(_)) => {
                let folded = Expr::Binary(op, Box::new(lhs.clone()), Box::new(rhs.clone()));
                match folded.eval(&[]) {
                    Ok(v) => Num(v),
                    Err(_) => folded,
                }
            }
            (BinOp::Add, Num(z), _) if *z == 0.0 => rhs,
            (BinOp::Add | BinOp::Sub, _, Num(z)) if *z == 0.0 => lhs,
            (BinOp::Sub, Num(z), _) if *z == 0.0 => Expr::negate(rhs),
            (BinOp::Mul, Num(z), _) | (BinOp::Mul, _, Num(z)) if *z == 0.0 => Num(0.0),
            (BinOp::Mul, Num(o), _) if *o == 1.0 => rhs,
            (BinOp::Mul | BinOp::Div, _, Num(o)) if *o == 1.0 => lhs,
            _ => Expr::Binary(op, Box::new(lhs), Box::new(rhs)),
        }
    }

    pub fn call(func: Func, arg: Expr) -> Expr {
        if let Expr::Num(_) = arg {
            let folded = Expr::Call(func, Box::new(arg.clone()));
            if let Ok(v) = folded.eval(&[]) {
                return Expr::Num(v);
            }
            return folded;
        }
        Expr::Call(func, Box::new(arg))
    }

    pub fn pow(self, exponent: Expr) -> Expr {
        Expr::binary(BinOp::Pow, self, exponent)
    }

    /// Literal value if the expression is constant after folding.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// One past the largest variable index referenced (0 for constants).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(e) | Expr::Call(_, e) => e.arity(),
            Expr::Binary(_, a, b) => a.arity().max(b.arity()),
        }
    }

    /// Replaces every `Var(i)` with `replacements[i]`.
    pub fn substitute(&self, replacements: &[Expr]) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(i) => replacements[*i].clone(),
            Expr::Neg(e) => Expr::negate(e.substitute(replacements)),
            Expr::Call(f, e) => Expr::call(*f, e.substitute(replacements)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(replacements), b.substitute(replacements)),
        }
    }

    fn check_arity(&self, got: usize) -> Result<(), ExprError> {
        let expected = self.arity();
        if got < expected {
            return Err(ExprError::Arity { expected, got });
        }
        Ok(())
    }

    fn eval_generic<N: Number>(&self, vars: &[N], n: usize) -> Result<N, ExprError> {
        let out = match self {
            Expr::Num(v) => N::constant(*v, n),
            Expr::Var(i) => vars[*i],
            Expr::Neg(e) => e.eval_generic(vars, n)?.neg(),
            Expr::Call(f, e) => {
                let a = e.eval_generic(vars, n)?;
                let (f0, f1, f2) = f.derivatives(a.value())?;
                a.chain(f0, f1, f2)
            }
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval_generic(vars, n)?;
                match op {
                    BinOp::Add => a.add(rhs.eval_generic(vars, n)?),
                    BinOp::Sub => a.sub(rhs.eval_generic(vars, n)?),
                    BinOp::Mul => a.mul(rhs.eval_generic(vars, n)?),
                    BinOp::Div => {
                        let b = rhs.eval_generic(vars, n)?;
                        let d = b.value();
                        if d == 0.0 {
                            return Err(ExprError::Domain("division by zero".into()));
                        }
                        a.mul(b.chain(1.0 / d, -1.0 / (d * d), 2.0 / (d * d * d)))
                    }
                    BinOp::Pow => pow(a, rhs, vars, n)?,
                }
            }
        };
        if !out.is_finite() {
            return Err(ExprError::Domain(format!("non-finite intermediate value {}", out.value())));
        }
        Ok(out)
    }

    /// Plain value at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_arity(x.len())?;
        self.eval_generic(x, x.len())
    }

    /// Value and exact gradient at `x`.
    pub fn eval_dual(&self, x: &[f64]) -> Result<Dual, ExprError> {
        let n = x.len();
        self.check_arity(n)?;
        assert!(n <= MAX_DIM, "dimension {n} exceeds {MAX_DIM}");
        let mut vars = [Dual::constant(0.0, n); MAX_DIM];
        for (i, v) in x.iter().enumerate() {
            vars[i] = Dual::variable(i, *v, n);
        }
        self.eval_generic(&vars[..n], n)
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval_jet2(&self, x: &[f64]) -> Result<Jet, ExprError> {
        let n = x.len();
        self.check_arity(n)?;
        assert!(n <= MAX_DIM, "dimension {n} exceeds {MAX_DIM}");
        let mut vars = [Jet::constant(0.0, n); MAX_DIM];
        for (i, v) in x.iter().enumerate() {
            vars[i] = Jet::variable(i, *v, n);
        }
        self.eval_generic(&vars[..n], n)
    }

    /// Value, gradient and Hessian packaged as a [`JetValue`].
    pub fn eval_jet(&self, x: &[f64]) -> Result<JetValue, ExprError> {
        self.eval_jet2(x).map(JetValue::from)
    }

    /// Renders the expression with the given coordinate names. The output
    /// re-parses to an expression with identical values.
    pub fn render(&self, names: &[String]) -> String {
        let mut s = String::new();
        self.write(&mut s, names);
        s
    }

    fn write(&self, s: &mut String, names: &[String]) {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    s.push_str(&format!("(-{})", -v));
                } else {
                    s.push_str(&format!("{v}"));
                }
            }
            Expr::Var(i) => match names.get(*i) {
                Some(name) => s.push_str(name),
                None => s.push_str(&format!("x{i}")),
            },
            Expr::Neg(e) => {
                s.push_str("(-");
                e.write(s, names);
                s.push(')');
            }
            Expr::Call(f, e) => {
                s.push_str(f.name());
                s.push('(');
                e.write(s, names);
                s.push(')');
            }
            Expr::Binary(op, a, b) => {
                s.push('(');
                a.write(s, names);
                s.push_str(&format!(" {} ", op.symbol()));
                b.write(s, names);
                s.push(')');
            }
        }
    }
}

fn pow<N: Number>(base: N, exponent: &Expr, vars: &[N], n: usize) -> Result<N, ExprError> {
    let v = base.value();
    if let Some(p) = exponent.as_constant() {
        if p.fract() == 0.0 && p.abs() < 2f64.powi(31) {
            let k = p as i32;
            return match k {
                0 => Ok(N::constant(1.0, n)),
                1 => Ok(base),
                _ => {
                    if k < 0 && v == 0.0 {
                        return Err(ExprError::Domain("zero raised to a negative power".into()));
                    }
                    let kf = k as f64;
                    Ok(base.chain(v.powi(k), kf * v.powi(k - 1), kf * (kf - 1.0) * v.powi(k - 2)))
                }
            };
        }
        if v <= 0.0 {
            return Err(ExprError::Domain(format!("non-integer power {p} of non-positive base {v}")));
        }
        return Ok(base.chain(v.powf(p), p * v.powf(p - 1.0), p * (p - 1.0) * v.powf(p - 2.0)));
    }
    if v <= 0.0 {
        return Err(ExprError::Domain(format!("variable power of non-positive base {v}")));
    }
    // a^b = exp(b ln a)
    let e = exponent.eval_generic(vars, n)?;
    let ln = base.chain(v.ln(), 1.0 / v, -1.0 / (v * v));
    let prod = e.mul(ln);
    let x = prod.value().exp();
    Ok(prod.chain(x, x, x))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Add, self, rhs)
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Sub, self, rhs)
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Mul, self, rhs)
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Div, self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::negate(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_power_of_function() {
        let e = parse("sin(th)^2", &names(&["th", "ph"])).unwrap();
        assert_eq!(
            e,
            Expr::Binary(BinOp::Pow, Box::new(Expr::Call(Func::Sin, Box::new(Expr::Var(0)))), Box::new(Expr::Num(2.0)))
        );
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = parse("-r^2", &names(&["r"])).unwrap();
        assert_eq!(e, Expr::Neg(Box::new(Expr::Binary(BinOp::Pow, Box::new(Expr::Var(0)), Box::new(Expr::Num(2.0))))));
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        // right associative
        assert_eq!(parse("2^3^2", &[]).unwrap().as_constant(), Some(512.0));
        assert_eq!(parse("2^-1", &[]).unwrap().as_constant(), Some(0.5));
    }

    #[test]
    fn undeclared_constant_is_rejected() {
        let err = parse("1/(1-2*M/r)", &names(&["t", "r", "th", "ph"])).unwrap_err();
        assert_eq!(err, ExprError::UnknownIdentifier { name: "M".into(), offset: 7 });
        let mut k = BTreeMap::new();
        k.insert("M".to_string(), 1.0);
        let e = parse_with_constants("1/(1-2*M/r)", &names(&["t", "r", "th", "ph"]), &k).unwrap();
        assert!((e.eval(&[0.0, 4.0, 1.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("x + * y", &names(&["x", "y"])) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("", &[]), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(x", &names(&["x"])), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("foo(x)", &names(&["x"])), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x", &names(&["x", "x"])), Err(ExprError::DuplicateCoordinate(_))));
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(parse("1.5e-3", &[]).unwrap().as_constant(), Some(1.5e-3));
        assert_eq!(parse("2E+2", &[]).unwrap().as_constant(), Some(200.0));
        assert_eq!(parse(".5", &[]).unwrap().as_constant(), Some(0.5));
    }

    #[test]
    fn product_jet() {
        let e = parse("x*y", &names(&["x", "y"])).unwrap();
        let j = e.eval_jet(&[2.0, 3.0]).unwrap();
        assert_eq!(j.value, 6.0);
        assert_eq!(j.gradient, vec![3.0, 2.0]);
        assert_eq!(j.hessian(0, 1), 1.0);
        assert_eq!(j.hessian(0, 0), 0.0);
        assert_eq!(j.hessian(1, 1), 0.0);
    }

    #[test]
    fn sine_jet() {
        let e = parse("sin(th)", &names(&["th"])).unwrap();
        let j = e.eval_jet(&[std::f64::consts::FRAC_PI_2]).unwrap();
        assert_eq!(j.value, 1.0);
        assert!(j.gradient[0].abs() < 1e-16);
        assert_eq!(j.hessian(0, 0), -1.0);
    }

    #[test]
    fn domain_errors_are_reported() {
        let c = names(&["x"]);
        for src in ["log(x)", "sqrt(x - 1)", "1/x", "x^0.5", "x^(-1)"] {
            let e = parse(src, &c).unwrap();
            let at = if src.starts_with("sqrt") { 0.5 } else { 0.0 };
            assert!(matches!(e.eval(&[at]), Err(ExprError::Domain(_))), "{src}");
        }
        // sqrt at zero has a value but no derivative
        let e = parse("sqrt(x)", &c).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.0);
        assert!(matches!(e.eval_dual(&[0.0]), Err(ExprError::Domain(_))));
        // integer powers accept any base
        let e = parse("x^3", &c).unwrap();
        assert_eq!(e.eval(&[-2.0]).unwrap(), -8.0);
    }

    #[test]
    fn fractional_power_jet() {
        let e = parse("t^(4/3)", &names(&["t"])).unwrap();
        let j = e.eval_jet(&[8.0]).unwrap();
        assert!((j.value - 16.0).abs() < 1e-12);
        assert!((j.gradient[0] - 4.0 / 3.0 * 2.0).abs() < 1e-12);
        assert!((j.hessian(0, 0) - 4.0 / 9.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn variable_exponent() {
        let e = parse("x^y", &names(&["x", "y"])).unwrap();
        let j = e.eval_jet(&[2.0, 3.0]).unwrap();
        assert!((j.value - 8.0).abs() < 1e-12);
        assert!((j.gradient[0] - 12.0).abs() < 1e-12);
        assert!((j.gradient[1] - 8.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn render_round_trips_to_value() {
        let c = names(&["r", "th"]);
        let src = "-r^2*sin(th)^2 + exp(-0.5*r)/(1 + r) - 1e-7*th^3";
        let e = parse(src, &c).unwrap();
        let back = parse(&e.render(&c), &c).unwrap();
        for p in [[1.0, 0.3], [2.5, -1.0], [0.1, 3.0]] {
            assert_eq!(e.eval(&p).unwrap(), back.eval(&p).unwrap());
        }
    }

    #[test]
    fn substitution_composes() {
        let c = names(&["u", "v"]);
        let e = parse("u*v + u", &c).unwrap();
        let t = names(&["t"]);
        let s = e.substitute(&[parse("2*t", &t).unwrap(), parse("t^2", &t).unwrap()]);
        assert_eq!(s.eval(&[3.0]).unwrap(), 6.0 * 9.0 + 6.0);
    }

    #[test]
    fn arity_is_checked() {
        let e = parse("x*y", &names(&["x", "y"])).unwrap();
        assert!(matches!(e.eval(&[1.0]), Err(ExprError::Arity { expected: 2, got: 1 })));
    }
}
