use serde::Serialize;

use crate::linalg::Matrix;

/// Default tolerance for normality verdicts.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default curvature threshold for flatness.
pub const DEFAULT_TOL_R: f64 = 1e-8;
/// Default torsion threshold.
pub const DEFAULT_TOL_T: f64 = 1e-10;

/// Where normality was checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Point { point: Vec<f64> },
    Path { t_range: (f64, f64), samples: usize },
    Grid { lower: Vec<f64>, upper: Vec<f64>, nodes: usize },
    Patch { lower: Vec<f64>, upper: Vec<f64>, nodes: usize },
    Samples { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Normal,
    NotNormal,
}

/// Result of checking that connection coefficients vanish on a region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub region: Region,
    pub sup_norm: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Location of the largest value: a point, a parameter, or grid
    /// parameters depending on the region.
    pub worst_sample: Vec<f64>,
}

impl NormalityReport {
    /// Builds a report from `(location, value)` samples. Non-finite values
    /// count as infinitely bad.
    pub fn from_samples<I>(region: Region, tolerance: f64, samples: I) -> Self
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let mut sup = 0.0;
        let mut worst = Vec::new();
        let mut first = true;
        for (loc, v) in samples {
            let v = if v.is_finite() { v.abs() } else { f64::INFINITY };
            if first || v > sup {
                sup = v;
                worst = loc;
                first = false;
            }
        }
        NormalityReport {
            region,
            sup_norm: sup,
            tolerance,
            verdict: if sup < tolerance { Verdict::Normal } else { Verdict::NotNormal },
            worst_sample: worst,
        }
    }

    pub fn is_normal(&self) -> bool {
        self.verdict == Verdict::Normal
    }
}

/// The loop with the largest holonomy defect found by a loop battery.
#[derive(Debug, Clone, Serialize)]
pub struct LoopInfo {
    pub description: String,
    /// Loop vertices in patch parameters.
    pub vertices: Vec<Vec<f64>>,
    pub defect: f64,
    pub matrix: Matrix,
}
