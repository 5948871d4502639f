//! Maximum-likelihood binary logistic regression.
//!
//! The fit is Newton–Raphson on the Bernoulli log-likelihood (equivalently
//! IRLS), with step halving so that the log-likelihood never decreases
//! between accepted iterates. Standard errors come from the inverse of the
//! Fisher information `XᵀWX` at the optimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::FeatureMatrix;
use crate::stats::{chisq_sf, dot, two_sided_p, Cholesky, Matrix};

/// Design with a leading intercept column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: Matrix,
    y: Vec<u8>,
    feature_names: Vec<String>,
}

impl DesignMatrix {
    /// Prepends the intercept column to `features`.
    pub fn new(features: &Matrix, y: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let n = features.rows();
        let k = features.cols() + 1;
        let mut data = Vec::with_capacity(n * k);
        for r in features.iter_rows() {
            data.push(1.0);
            data.extend_from_slice(r);
        }
        Self::with_intercept_column(Matrix::from_row_major(n, k, data)?, y, feature_names)
    }

    /// Uses `x` as given; its first column must be all ones.
    pub fn with_intercept_column(x: Matrix, y: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        let (n, k) = (x.rows(), x.cols());
        if k == 0 || (0..n).any(|i| x[(i, 0)] != 1.0) {
            return Err(Error::InvalidArgument(
                "first design column must be the all-ones intercept".into(),
            ));
        }
        if feature_names.len() + 1 != k {
            return Err(Error::DimensionMismatch {
                expected: k - 1,
                got: feature_names.len(),
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "response value {bad} is not binary"
            )));
        }
        if n <= k {
            return Err(Error::degenerate(format!(
                "need more observations than parameters (n = {n}, k = {k})"
            )));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("design contains non-finite values"));
        }
        Ok(DesignMatrix { x, y, feature_names })
    }

    pub fn intercept_only(y: Vec<u8>) -> Result<Self> {
        let n = y.len();
        Self::with_intercept_column(Matrix::from_row_major(n, 1, vec![1.0; n])?, y, Vec::new())
    }

    /// Design over the named columns of `m`, restricted to `rows`.
    pub fn from_features(m: &FeatureMatrix, names: &[String], rows: &[usize]) -> Result<Self> {
        let cols = m.resolve(names)?;
        let sub = m.values().select_rows(rows).select_columns(&cols);
        let y = rows.iter().map(|&i| m.target()[i]).collect();
        Self::new(&sub, y, names.to_vec())
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_obs(&self) -> usize {
        self.x.rows()
    }

    /// Parameter count including the intercept.
    pub fn k(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    pub max_iter: usize,
    /// Sup-norm gradient tolerance.
    pub tol: f64,
    /// Relative log-likelihood change accepted as convergence.
    pub rel_loglik_tol: f64,
    /// `‖β‖∞` beyond this is reported as separation.
    pub separation_bound: f64,
    /// Optional ridge penalty on the non-intercept coefficients. Zero means
    /// plain maximum likelihood.
    pub ridge: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            max_iter: 1000,
            tol: 1e-8,
            rel_loglik_tol: 1e-12,
            separation_bound: 50.0,
            ridge: 0.0,
        }
    }
}

/// A fitted model with its inferential statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub feature_names: Vec<String>,
    /// Intercept first.
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub z: Vec<f64>,
    pub p_two_sided: Vec<f64>,
    pub exp_b: Vec<f64>,
    pub wald: Vec<f64>,
    pub log_lik: f64,
    pub log_lik_null: f64,
    pub pseudo_r2: f64,
    pub llr_stat: f64,
    pub llr_p: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Negative log-likelihood at the returned coefficients.
    pub final_neg_loglik: f64,
    pub gradient_sup_norm: f64,
    /// Ridge penalty used; non-zero output is not a pure MLE.
    pub ridge: f64,
    /// Log-likelihood after each accepted iterate, starting point included.
    pub loglik_trace: Vec<f64>,
}

impl LogitFit {
    pub fn linear_predictor(&self, features: &[f64]) -> Result<f64> {
        if features.len() + 1 != self.coef.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coef.len() - 1,
                got: features.len(),
            });
        }
        Ok(self.coef[0] + dot(&self.coef[1..], features))
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood `Σ y·log σ(xβ) + (1−y)·log(1−σ(xβ))`.
pub fn log_likelihood(x: &Matrix, y: &[u8], beta: &[f64]) -> f64 {
    x.iter_rows()
        .zip(y)
        .map(|(r, &yi)| {
            let eta = dot(r, beta);
            if yi == 1 {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

/// Score vector `Xᵀ(y − σ(Xβ))`.
pub fn gradient(x: &Matrix, y: &[u8], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.cols()];
    for (r, &yi) in x.iter_rows().zip(y) {
        let resid = yi as f64 - sigmoid(dot(r, beta));
        for (gj, xj) in g.iter_mut().zip(r) {
            *gj += resid * xj;
        }
    }
    g
}

/// Fisher information `XᵀWX` with `W = diag(p(1−p))`.
pub fn fisher_information(x: &Matrix, beta: &[f64]) -> Matrix {
    let k = x.cols();
    let mut h = Matrix::zeros(k, k);
    for r in x.iter_rows() {
        let p = sigmoid(dot(r, beta));
        let w = p * (1.0 - p);
        for a in 0..k {
            let wa = w * r[a];
            for b in 0..=a {
                h[(a, b)] += wa * r[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h
}

/// `n·[p̄ ln p̄ + (1−p̄) ln(1−p̄)]`, the intercept-only maximum.
pub fn null_log_likelihood(y: &[u8]) -> f64 {
    let n = y.len() as f64;
    let ones = y.iter().filter(|&&v| v == 1).count() as f64;
    let p = ones / n;
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    n * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// `(AIC, BIC) = (2k − 2ℓ, k·ln n − 2ℓ)`.
pub fn information_criteria(log_lik: f64, k: usize, n: usize) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k - 2.0 * log_lik, k * (n as f64).ln() - 2.0 * log_lik)
}

/// McFadden pseudo-R², `1 − ℓ/ℓ₀`.
pub fn pseudo_r2(log_lik: f64, log_lik_null: f64) -> Result<f64> {
    if log_lik_null == 0.0 {
        return Err(Error::degenerate(
            "pseudo R² undefined for a zero null log-likelihood",
        ));
    }
    Ok(1.0 - log_lik / log_lik_null)
}

/// Likelihood-ratio statistic against the null model and its chi-square
/// p-value with `df` degrees of freedom.
pub fn llr_test(log_lik: f64, log_lik_null: f64, df: usize) -> Result<(f64, f64)> {
    let stat = 2.0 * (log_lik - log_lik_null);
    if stat < -1e-9 {
        return Err(Error::Invariant(format!(
            "model log-likelihood {log_lik} is below the null {log_lik_null}"
        )));
    }
    let stat = stat.max(0.0);
    Ok((stat, chisq_sf(stat, df)?))
}

/// Rejects constant and exactly collinear feature columns before iterating,
/// so that later Cholesky failures can only mean vanishing weights.
fn check_rank(d: &DesignMatrix) -> Result<()> {
    let x = d.x();
    let name = |j: usize| {
        if j == 0 {
            "(intercept)".to_string()
        } else {
            d.feature_names()[j - 1].clone()
        }
    };
    for j in 1..x.cols() {
        let first = x[(0, j)];
        if (0..x.rows()).all(|i| x[(i, j)] == first) {
            return Err(Error::Collinear(name(j)));
        }
    }
    let k = x.cols();
    let mut g = Matrix::zeros(k, k);
    for r in x.iter_rows() {
        for a in 0..k {
            for b in 0..=a {
                g[(a, b)] += r[a] * r[b];
            }
        }
    }
    let scale: Vec<f64> = (0..k).map(|j| g[(j, j)].sqrt()).collect();
    for a in 0..k {
        for b in 0..=a {
            let v = g[(a, b)] / (scale[a] * scale[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    match Cholesky::factor_with_tol(&g, 1e-11) {
        Ok(_) => Ok(()),
        Err(Error::Singular { pivot }) => Err(Error::Collinear(name(pivot))),
        Err(e) => Err(e),
    }
}

fn separates(x: &Matrix, y: &[u8], beta: &[f64]) -> bool {
    x.iter_rows().zip(y).all(|(r, &yi)| {
        let eta = dot(r, beta);
        if yi == 1 {
            eta > 0.0
        } else {
            eta < 0.0
        }
    })
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn penalized(ll: f64, beta: &[f64], ridge: f64) -> f64 {
    ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

fn max_residual(x: &Matrix, y: &[u8], beta: &[f64]) -> f64 {
    x.iter_rows()
        .zip(y)
        .map(|(r, &yi)| (yi as f64 - sigmoid(dot(r, beta))).abs())
        .fold(0.0, f64::max)
}

const MAX_HALVINGS: usize = 40;

/// Fits the model by Newton–Raphson with step halving.
///
/// An unconverged fit (iteration budget exhausted) is returned with
/// `converged = false`; separation and rank problems are errors.
pub fn fit_logistic(d: &DesignMatrix, opts: &LogitOptions) -> Result<LogitFit> {
    let ones = d.y().iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == d.n_obs() {
        return Err(Error::SingleClass(u8::from(ones != 0)));
    }
    check_rank(d)?;

    let (x, y) = (d.x(), d.y());
    let (n, k) = (d.n_obs(), d.k());
    let ridge = opts.ridge.max(0.0);
    let separation = || Error::Separation {
        bound: opts.separation_bound,
    };

    let mut beta = vec![0.0; k];
    let p_bar = ones as f64 / n as f64;
    beta[0] = (p_bar / (1.0 - p_bar)).ln();

    let mut ll = log_likelihood(x, y, &beta);
    let mut obj = penalized(ll, &beta, ridge);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm;

    loop {
        let mut g = gradient(x, y, &beta);
        for j in 1..k {
            g[j] -= ridge * beta[j];
        }
        grad_norm = sup_norm(&g);
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut h = fisher_information(x, &beta);
        for j in 1..k {
            h[(j, j)] += ridge;
        }
        let step = Cholesky::factor(&h).map_err(|_| separation())?.solve(&g);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_ll = log_likelihood(x, y, &cand);
            let cand_obj = penalized(cand_ll, &cand, ridge);
            if cand_obj >= obj {
                accepted = Some((cand, cand_ll, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll, cand_obj)) = accepted else {
            // No ascent along the Newton direction: numerically at the optimum.
            converged = true;
            break;
        };

        let rel_change = (cand_obj - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        beta = cand;
        ll = cand_ll;
        obj = cand_obj;
        trace.push(ll);

        if sup_norm(&beta) > opts.separation_bound {
            return Err(separation());
        }
        if max_residual(x, y, &beta) < 1e-9 {
            return Err(separation());
        }
        if rel_change <= opts.rel_loglik_tol {
            let mut g = gradient(x, y, &beta);
            for j in 1..k {
                g[j] -= ridge * beta[j];
            }
            grad_norm = sup_norm(&g);
            converged = true;
            break;
        }
    }

    // A predictor that classifies every row strictly correctly is itself a
    // separating hyperplane, so no finite maximum exists. The gradient can
    // fall below tolerance before the coefficient bound trips.
    if ridge == 0.0 && separates(x, y, &beta) {
        return Err(separation());
    }

    let mut h = fisher_information(x, &beta);
    for j in 1..k {
        h[(j, j)] += ridge;
    }
    let cov = Cholesky::factor(&h).map_err(|_| separation())?.inverse();
    let std_err: Vec<f64> = (0..k).map(|j| cov[(j, j)].sqrt()).collect();
    let z: Vec<f64> = beta.iter().zip(&std_err).map(|(b, s)| b / s).collect();

    let log_lik_null = null_log_likelihood(y);
    let (aic, bic) = information_criteria(ll, k, n);
    let (llr_stat, llr_p) = if k > 1 {
        llr_test(ll, log_lik_null, k - 1)?
    } else {
        (0.0, 1.0)
    };

    Ok(LogitFit {
        feature_names: d.feature_names().to_vec(),
        p_two_sided: z.iter().map(|&v| two_sided_p(v)).collect(),
        exp_b: beta.iter().map(|b| b.exp()).collect(),
        wald: z.iter().map(|v| v * v).collect(),
        coef: beta,
        std_err,
        z,
        log_lik: ll,
        log_lik_null,
        pseudo_r2: pseudo_r2(ll, log_lik_null)?,
        llr_stat,
        llr_p,
        aic,
        bic,
        n_obs: n,
        k,
        iterations,
        converged,
        final_neg_loglik: -ll,
        gradient_sup_norm: grad_norm,
        ridge,
        loglik_trace: trace,
    })
}

/// One coefficient's row of the inference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRow {
    pub variable: String,
    pub coef: f64,
    pub std_err: f64,
    pub z: f64,
    pub p_value: f64,
    pub exp_b: f64,
    pub wald: f64,
}

impl InferenceRow {
    /// Derives z, p, odds ratio and Wald from a coefficient and its
    /// standard error.
    pub fn from_estimate(variable: impl Into<String>, coef: f64, std_err: f64) -> Self {
        let z = if coef == 0.0 { 0.0 } else { coef / std_err };
        InferenceRow {
            variable: variable.into(),
            coef,
            std_err,
            z,
            p_value: two_sided_p(z),
            exp_b: coef.exp(),
            wald: z * z,
        }
    }
}

pub const INTERCEPT: &str = "const";

/// Coefficient table, intercept first. Refuses unconverged fits.
pub fn inference_table(fit: &LogitFit) -> Result<Vec<InferenceRow>> {
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        });
    }
    let names = std::iter::once(INTERCEPT).chain(fit.feature_names.iter().map(String::as_str));
    Ok(names
        .enumerate()
        .map(|(j, name)| InferenceRow {
            variable: name.to_string(),
            coef: fit.coef[j],
            std_err: fit.std_err[j],
            z: fit.z[j],
            p_value: fit.p_two_sided[j],
            exp_b: fit.exp_b[j],
            wald: fit.wald[j],
        })
        .collect())
}

/// Checks the algebraic identities tying a fit's derived fields together.
pub fn verify_fit_identities(fit: &LogitFit) -> Result<()> {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let fail = |what: &str| Err(Error::Invariant(format!("fit identity broken: {what}")));
    for j in 0..fit.k {
        let e = fit.coef[j].exp();
        if e != 0.0 && e.is_finite() && rel(fit.exp_b[j], e) > 1e-12 {
            return fail("exp_b = exp(coef)");
        }
        let z2 = fit.z[j] * fit.z[j];
        if z2 > 0.0 && rel(fit.wald[j], z2) > 1e-9 {
            return fail("wald = z²");
        }
    }
    if fit.log_lik_null != 0.0 && (fit.pseudo_r2 - (1.0 - fit.log_lik / fit.log_lik_null)).abs() > 1e-12 {
        return fail("pseudo_r2");
    }
    let (aic, bic) = information_criteria(fit.log_lik, fit.k, fit.n_obs);
    if (fit.aic - aic).abs() > 1e-9 || (fit.bic - bic).abs() > 1e-9 {
        return fail("aic/bic");
    }
    if fit.final_neg_loglik != -fit.log_lik {
        return fail("final_neg_loglik = -log_lik");
    }
    Ok(())
}
