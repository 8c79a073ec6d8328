//! Relative performance as a quadratic in the natural log of the corpus
//! ratio: `p(r) = a·(ln r)² + b·ln r + c`, with p in percent.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Reference curve for conventional continual pre-training.
pub const VANILLA: ScalingCurve = ScalingCurve { a: -0.04, b: 13.3, c: 100.0 };
/// Reference curve for structure-aware training.
pub const STRUCTURE_AWARE: ScalingCurve = ScalingCurve { a: -1.11, b: 7.63, c: 133.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("corpus ratio must be positive, got {0}")]
    DomainError(f64),
    #[error("fit needs at least 3 distinct ratios, got {0}")]
    SingularFit(usize),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

impl ScalingCurve {
    pub fn eval(&self, r: f64) -> Result<f64, ScalingError> {
        eval_scaling(self, r)
    }
}

pub fn eval_scaling(curve: &ScalingCurve, r: f64) -> Result<f64, ScalingError> {
    if r.is_nan() || r <= 0.0 {
        return Err(ScalingError::DomainError(r));
    }
    let x = r.ln();
    Ok(curve.a * x * x + curve.b * x + curve.c)
}

/// Least-squares fit on the basis `[(ln r)², ln r, 1]` through the normal
/// equations, solved by Gaussian elimination with partial pivoting.
pub fn fit_scaling_curve(points: &[ScalingPoint]) -> Result<ScalingCurve, ScalingError> {
    for pt in points {
        if !pt.p.is_finite() || !pt.r.is_finite() || pt.r <= 0.0 || pt.r > 1.0 {
            return Err(ScalingError::InvalidPoint(format!("r = {}, p = {}; r must lie in (0, 1]", pt.r, pt.p)));
        }
    }
    let mut rs: Vec<f64> = points.iter().map(|p| p.r).collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    if rs.len() < 3 {
        return Err(ScalingError::SingularFit(rs.len()));
    }
    let mut m = [[0.0f64; 4]; 3];
    for pt in points {
        let x = pt.r.ln();
        let basis = [x * x, x, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            m[i][3] += basis[i] * pt.p;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        if m[pivot][col].abs() < 1e-300 {
            return Err(ScalingError::SingularFit(rs.len()));
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Ok(ScalingCurve {
        a: m[0][3] / m[0][0],
        b: m[1][3] / m[1][1],
        c: m[2][3] / m[2][2],
    })
}
