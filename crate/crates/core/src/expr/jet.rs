//! Truncated Taylor arithmetic.
//!
//! [`Dual`] carries a value and gradient, [`Jet`] adds the Hessian. Both have
//! fixed capacity [`MAX_DIM`] so they stay `Copy` and allocation free.

use serde::{Deserialize, Serialize};

/// Largest supported chart dimension.
pub const MAX_DIM: usize = 8;

/// Arithmetic needed by the expression evaluator.
pub(crate) trait Number: Copy {
    fn constant(c: f64, n: usize) -> Self;
    fn variable(index: usize, x: f64, n: usize) -> Self;
    fn value(&self) -> f64;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn neg(self) -> Self;
    /// `f(self)` given `f`, `f'` and `f''` at `self.value()`.
    fn chain(self, f0: f64, f1: f64, f2: f64) -> Self;
    fn is_finite(&self) -> bool;
}

impl Number for f64 {
    fn constant(c: f64, _: usize) -> Self {
        c
    }
    fn variable(_: usize, x: f64, _: usize) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn neg(self) -> Self {
        -self
    }
    fn chain(self, f0: f64, _: f64, _: f64) -> Self {
        f0
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// First-order jet: value and gradient.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub value: f64,
    grad: [f64; MAX_DIM],
    n: u8,
}

impl Dual {
    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad[..self.n as usize]
    }

    pub fn partial(&self, i: usize) -> f64 {
        self.grad[i]
    }
}

impl Number for Dual {
    fn constant(c: f64, n: usize) -> Self {
        Dual { value: c, grad: [0.0; MAX_DIM], n: n as u8 }
    }
    fn variable(index: usize, x: f64, n: usize) -> Self {
        let mut d = Self::constant(x, n);
        d.grad[index] = 1.0;
        d
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn add(mut self, o: Self) -> Self {
        self.value += o.value;
        for i in 0..self.n as usize {
            self.grad[i] += o.grad[i];
        }
        self
    }
    fn sub(mut self, o: Self) -> Self {
        self.value -= o.value;
        for i in 0..self.n as usize {
            self.grad[i] -= o.grad[i];
        }
        self
    }
    fn mul(self, o: Self) -> Self {
        let mut r = self;
        r.value = self.value * o.value;
        for i in 0..self.n as usize {
            r.grad[i] = self.value * o.grad[i] + o.value * self.grad[i];
        }
        r
    }
    fn neg(mut self) -> Self {
        self.value = -self.value;
        for i in 0..self.n as usize {
            self.grad[i] = -self.grad[i];
        }
        self
    }
    fn chain(mut self, f0: f64, f1: f64, _: f64) -> Self {
        self.value = f0;
        for i in 0..self.n as usize {
            self.grad[i] *= f1;
        }
        self
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad[..self.n as usize].iter().all(|v| v.is_finite())
    }
}

/// Second-order jet: value, gradient and the upper triangle of the Hessian.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: f64,
    grad: [f64; MAX_DIM],
    // only entries with i <= j are ever written or read
    hess: [[f64; MAX_DIM]; MAX_DIM],
    n: u8,
}

impl Jet {
    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad[..self.n as usize]
    }

    pub fn partial(&self, i: usize) -> f64 {
        self.grad[i]
    }

    /// `∂ᵢ∂ⱼf`, symmetric in its arguments.
    pub fn second(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.hess[i][j]
        } else {
            self.hess[j][i]
        }
    }
}

impl Number for Jet {
    fn constant(c: f64, n: usize) -> Self {
        Jet { value: c, grad: [0.0; MAX_DIM], hess: [[0.0; MAX_DIM]; MAX_DIM], n: n as u8 }
    }
    fn variable(index: usize, x: f64, n: usize) -> Self {
        let mut d = Self::constant(x, n);
        d.grad[index] = 1.0;
        d
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn add(mut self, o: Self) -> Self {
        let n = self.n as usize;
        self.value += o.value;
        for i in 0..n {
            self.grad[i] += o.grad[i];
            for j in i..n {
                self.hess[i][j] += o.hess[i][j];
            }
        }
        self
    }
    fn sub(mut self, o: Self) -> Self {
        let n = self.n as usize;
        self.value -= o.value;
        for i in 0..n {
            self.grad[i] -= o.grad[i];
            for j in i..n {
                self.hess[i][j] -= o.hess[i][j];
            }
        }
        self
    }
    fn mul(self, o: Self) -> Self {
        let n = self.n as usize;
        let mut r = self;
        r.value = self.value * o.value;
        for i in 0..n {
            r.grad[i] = self.value * o.grad[i] + o.value * self.grad[i];
            for j in i..n {
                r.hess[i][j] = self.value * o.hess[i][j]
                    + o.value * self.hess[i][j]
                    + self.grad[i] * o.grad[j]
                    + self.grad[j] * o.grad[i];
            }
        }
        r
    }
    fn neg(mut self) -> Self {
        let n = self.n as usize;
        self.value = -self.value;
        for i in 0..n {
            self.grad[i] = -self.grad[i];
            for j in i..n {
                self.hess[i][j] = -self.hess[i][j];
            }
        }
        self
    }
    fn chain(mut self, f0: f64, f1: f64, f2: f64) -> Self {
        let n = self.n as usize;
        self.value = f0;
        for i in 0..n {
            for j in i..n {
                self.hess[i][j] = f1 * self.hess[i][j] + f2 * self.grad[i] * self.grad[j];
            }
        }
        for i in 0..n {
            self.grad[i] *= f1;
        }
        self
    }
    fn is_finite(&self) -> bool {
        let n = self.n as usize;
        self.value.is_finite()
            && (0..n).all(|i| self.grad[i].is_finite() && (i..n).all(|j| self.hess[i][j].is_finite()))
    }
}

/// Value, gradient and Hessian of a scalar field at a point.
///
/// The Hessian is stored as its upper triangle, row by row, so symmetry holds
/// by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetValue {
    pub value: f64,
    pub gradient: Vec<f64>,
    hessian_upper: Vec<f64>,
}

impl JetValue {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn tri_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.dim();
        i * n - i * (i + 1) / 2 + j
    }

    pub fn hessian(&self, i: usize, j: usize) -> f64 {
        self.hessian_upper[self.tri_index(i, j)]
    }

    /// Upper triangle, row-major (`n(n+1)/2` entries).
    pub fn hessian_upper(&self) -> &[f64] {
        &self.hessian_upper
    }
}

impl From<Jet> for JetValue {
    fn from(j: Jet) -> Self {
        let n = j.dim();
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for a in 0..n {
            for b in a..n {
                upper.push(j.hess[a][b]);
            }
        }
        JetValue { value: j.value, gradient: j.gradient().to_vec(), hessian_upper: upper }
    }
}
