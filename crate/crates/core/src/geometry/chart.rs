use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{self, Expr, MAX_DIM};

/// Fraction of each box side trimmed off before sampling.
pub const SAMPLE_SHRINK: f64 = 0.05;

/// Default number of sample points used by invariant checks.
pub const DEFAULT_SAMPLES: usize = 20;

/// A single coordinate chart.
///
/// The domain is an open box (per-coordinate bounds, each optional), optionally
/// intersected with `{x : condition(x) > 0}`. Periodic coordinates only affect
/// loop-closure tests; evaluation always uses the raw coordinate value.
#[derive(Debug, Clone)]
pub struct Chart {
    names: Vec<String>,
    bounds: Vec<Option<(f64, f64)>>,
    periods: Vec<Option<f64>>,
    condition: Option<Expr>,
    constants: BTreeMap<String, f64>,
}

impl Chart {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        if names.is_empty() {
            return Err(Error::Invalid("a chart needs at least one coordinate".into()));
        }
        if names.len() > MAX_DIM {
            return Err(Error::Invalid(format!(
                "chart dimension {} exceeds the supported maximum {MAX_DIM}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(expr::ExprError::DuplicateCoordinate(n.clone()).into());
            }
        }
        let dim = names.len();
        Ok(Chart {
            names,
            bounds: vec![None; dim],
            periods: vec![None; dim],
            condition: None,
            constants: BTreeMap::new(),
        })
    }

    /// Euclidean-style chart with coordinates `x0, x1, …`.
    pub fn numbered(dim: usize) -> Result<Self> {
        let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        Self::new(&names)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Result<Self> {
        if self.index_of(name).is_some() {
            return Err(Error::Invalid(format!("constant `{name}` shadows a coordinate")));
        }
        self.constants.insert(name.to_string(), value);
        Ok(self)
    }

    pub fn with_bounds(mut self, coord: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Invalid(format!("empty interval ({lo}, {hi}) for `{}`", self.names[coord])));
        }
        self.bounds[coord] = Some((lo, hi));
        Ok(self)
    }

    pub fn with_period(mut self, coord: usize, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Invalid(format!("period must be positive, got {period}")));
        }
        self.periods[coord] = Some(period);
        Ok(self)
    }

    /// Restricts the domain to points where `source` evaluates positive.
    pub fn with_condition(mut self, source: &str) -> Result<Self> {
        self.condition = Some(self.parse(source)?);
        Ok(self)
    }

    pub fn bounds(&self, coord: usize) -> Option<(f64, f64)> {
        self.bounds[coord]
    }

    pub fn period(&self, coord: usize) -> Option<f64> {
        self.periods[coord]
    }

    pub fn condition(&self) -> Option<&Expr> {
        self.condition.as_ref()
    }

    /// Parses an expression over this chart's coordinates and constants.
    pub fn parse(&self, source: &str) -> Result<Expr> {
        Ok(expr::parse_with_constants(source, &self.names, &self.constants)?)
    }

    /// Parses an expression in a single curve parameter `t`.
    pub fn parse_in_parameter(&self, source: &str) -> Result<Expr> {
        self.parse_in(source, &["t".to_string()])
    }

    /// Parses over arbitrary variable names, with this chart's constants.
    pub fn parse_in(&self, source: &str, vars: &[String]) -> Result<Expr> {
        Ok(expr::parse_with_constants(source, vars, &self.constants)?)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let in_box = self.bounds.iter().zip(x).all(|(b, v)| b.is_none_or(|(lo, hi)| lo < *v && *v < hi));
        in_box && self.condition.as_ref().is_none_or(|c| matches!(c.eval(x), Ok(v) if v > 0.0))
    }

    pub fn require(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain { point: x.to_vec() })
        }
    }

    /// Difference `b − a`, reduced into `(−P/2, P/2]` along periodic axes.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .zip(&self.periods)
            .map(|((x, y), p)| {
                let d = y - x;
                match p {
                    Some(p) => d - p * (d / p).round(),
                    None => d,
                }
            })
            .collect()
    }

    /// Max-norm distance between two points, honouring periodic axes.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.displacement(a, b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// The sampling box: each bounded side trimmed by [`SAMPLE_SHRINK`] of its
    /// length, unbounded coordinates mapped to `[-1, 1]`.
    pub fn sampling_box(&self) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|b| match b {
                Some((lo, hi)) => {
                    let pad = SAMPLE_SHRINK * (hi - lo);
                    (lo + pad, hi - pad)
                }
                None => (-1.0, 1.0),
            })
            .collect()
    }

    /// Deterministic quasi-random points in the sampling box, excluded points
    /// rejected. `seed = 0` gives the plain Halton sequence; any other seed
    /// applies a random shift modulo one per axis.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_box(&self.sampling_box(), count, seed, |x| self.contains(x))
    }
}

const PRIMES: [u64; MAX_DIM] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Halton points in a box, filtered by `accept`.
pub fn sample_box(bx: &[(f64, f64)], count: usize, seed: u64, accept: impl Fn(&[f64]) -> bool) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = if seed == 0 {
        vec![0.0; bx.len()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        bx.iter().map(|_| rng.gen::<f64>()).collect()
    };
    let mut out = Vec::with_capacity(count);
    let mut index = 1u64;
    // rejection can fail forever on an empty domain
    let max_index = 1000 * count as u64 + 1000;
    while out.len() < count && index < max_index {
        let p: Vec<f64> = bx
            .iter()
            .enumerate()
            .map(|(d, (lo, hi))| {
                let u = (radical_inverse(index, PRIMES[d]) + shift[d]).fract();
                lo + u * (hi - lo)
            })
            .collect();
        if accept(&p) {
            out.push(p);
        }
        index += 1;
    }
    out
}
