//! Descriptive statistics, Pearson correlation, variance inflation factors,
//! the dense solver used by Newton steps, and tail probabilities.

mod dist;
mod linalg;

pub use dist::{chisq_sf, normal_cdf, normal_sf, two_sided_p};
pub use linalg::{dot, solve_spd, Cholesky, Matrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary of one numeric column. `std_dev` uses the `n − 1` denominator and
/// is absent for a single value; `skewness` is the adjusted Fisher–Pearson
/// coefficient, absent below three values and `0` for a constant column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub n: usize,
    pub mean: f64,
    pub std_dev: Option<f64>,
    pub minimum: f64,
    pub median: f64,
    pub maximum: f64,
    pub skewness: Option<f64>,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `n − 1` denominator. Caller guarantees `n ≥ 2`.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn describe(column: &[f64]) -> Result<DescriptiveStats> {
    let n = column.len();
    if n == 0 {
        return Err(Error::degenerate("cannot describe an empty column"));
    }
    if let Some(bad) = column.iter().find(|v| !v.is_finite()) {
        return Err(Error::degenerate(format!("non-finite value {bad}")));
    }
    let m = mean(column);
    let minimum = column.iter().copied().fold(f64::INFINITY, f64::min);
    let maximum = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let m2 = column.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    let m3 = column.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n as f64;
    let std_dev = (n >= 2).then(|| (m2 * n as f64 / (n - 1) as f64).sqrt());
    let skewness = (n >= 3).then(|| {
        if minimum == maximum || m2 == 0.0 {
            0.0
        } else {
            let g1 = m3 / m2.powf(1.5);
            let nf = n as f64;
            g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0)
        }
    });

    Ok(DescriptiveStats {
        n,
        mean: m,
        std_dev,
        minimum,
        median: median(column),
        maximum,
        skewness,
    })
}

/// Symmetric matrix of pairwise Pearson coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: Matrix,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.r[(i, j)])
    }
}

fn centered_columns(names: &[String], x: &Matrix) -> Result<Vec<(Vec<f64>, f64)>> {
    (0..x.cols())
        .map(|j| {
            let col = x.column(j);
            let m = mean(&col);
            let dev: Vec<f64> = col.iter().map(|v| v - m).collect();
            let ss: f64 = dev.iter().map(|d| d * d).sum();
            if ss == 0.0 {
                return Err(Error::ZeroVariance(names[j].clone()));
            }
            Ok((dev, ss.sqrt()))
        })
        .collect()
}

/// Sample Pearson correlation for every pair of columns of `x`.
pub fn pearson_matrix(names: &[String], x: &Matrix) -> Result<CorrelationMatrix> {
    if names.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: names.len(),
        });
    }
    if x.rows() < 2 {
        return Err(Error::degenerate("correlation needs at least two rows"));
    }
    let cols = centered_columns(names, x)?;
    let p = cols.len();
    let mut r = Matrix::identity(p);
    for j in 0..p {
        for k in (j + 1)..p {
            let v = (dot(&cols[j].0, &cols[k].0) / (cols[j].1 * cols[k].1)).clamp(-1.0, 1.0);
            r[(j, k)] = v;
            r[(k, j)] = v;
        }
    }
    Ok(CorrelationMatrix {
        names: names.to_vec(),
        r,
    })
}

/// Pivot threshold on the correlation-matrix Cholesky below which a column is
/// treated as an exact linear combination of the preceding ones.
const COLLINEAR_PIVOT: f64 = 1e-10;

/// Variance inflation factor of each column, `1 / (1 − R²_j)`.
///
/// Computed as the diagonal of the inverse correlation matrix, which equals
/// the OLS-with-intercept definition.
pub fn vif(names: &[String], x: &Matrix) -> Result<Vec<f64>> {
    let p = x.cols();
    if x.rows() <= p {
        return Err(Error::degenerate(format!(
            "VIF needs more rows than columns (n = {}, p = {p})",
            x.rows()
        )));
    }
    let corr = pearson_matrix(names, x)?;
    let chol = Cholesky::factor_with_tol(&corr.r, COLLINEAR_PIVOT).map_err(|e| match e {
        Error::Singular { pivot } => Error::Collinear(names[pivot].clone()),
        other => other,
    })?;
    let inv = chol.inverse();
    Ok((0..p).map(|j| inv[(j, j)].max(1.0)).collect())
}
