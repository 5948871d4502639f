//! SHAP attribution for fitted logistic models and LOWESS trend curves.
//!
//! Attributions are on the log-odds scale, where the model is linear and the
//! Shapley values have the closed form `β_j·(x_j − μ_j)` for a single
//! background point `μ`. The exact enumerator [`exact_shapley`] works for
//! any value function and serves as the cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logit::LogitFit;
use crate::stats::{dot, median, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub model_id: String,
    pub feature_names: Vec<String>,
    pub row_ids: Vec<String>,
    /// Feature values the attributions were computed for.
    pub inputs: Matrix,
    /// `φ_ij`, log-odds units.
    pub values: Matrix,
    /// Log-odds at the background point.
    pub base_value: f64,
}

impl ShapMatrix {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// `base_value + Σ_j φ_ij` for row `i`.
    pub fn reconstructed(&self, i: usize) -> f64 {
        self.base_value + self.values.row(i).iter().sum::<f64>()
    }
}

fn check_dims(fit: &LogitFit, p: usize, means: &[f64]) -> Result<()> {
    let want = fit.coef.len() - 1;
    for got in [p, means.len()] {
        if got != want {
            return Err(Error::DimensionMismatch { expected: want, got });
        }
    }
    Ok(())
}

/// Closed-form SHAP values of a linear log-odds model.
pub fn linear_shap(
    fit: &LogitFit,
    x: &Matrix,
    background_means: &[f64],
    row_ids: &[String],
    model_id: &str,
) -> Result<ShapMatrix> {
    check_dims(fit, x.cols(), background_means)?;
    if row_ids.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: row_ids.len(),
        });
    }
    let beta = &fit.coef[1..];
    let mut data = Vec::with_capacity(x.rows() * x.cols());
    for r in x.iter_rows() {
        data.extend(
            r.iter()
                .zip(beta)
                .zip(background_means)
                .map(|((xv, b), m)| b * (xv - m)),
        );
    }
    Ok(ShapMatrix {
        model_id: model_id.to_string(),
        feature_names: fit.feature_names.clone(),
        row_ids: row_ids.to_vec(),
        inputs: x.clone(),
        values: Matrix::from_row_major(x.rows(), x.cols(), data)?,
        base_value: fit.coef[0] + dot(beta, background_means),
    })
}

pub const DEFAULT_MAX_SHAPLEY_P: usize = 12;

/// Exact Shapley values of `value` at `x` relative to `background`, by
/// enumerating all `2^p` coalitions. Absent features take their background
/// value.
pub fn exact_shapley<F>(value: F, x: &[f64], background: &[f64], max_p: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let p = x.len();
    if background.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: background.len(),
        });
    }
    if p > max_p {
        return Err(Error::TooManyFeatures { p, max_p });
    }
    let n_masks = 1usize << p;
    let mut point = background.to_vec();
    let v: Vec<f64> = (0..n_masks)
        .map(|mask| {
            for j in 0..p {
                point[j] = if mask & (1 << j) != 0 { x[j] } else { background[j] };
            }
            value(&point)
        })
        .collect();

    // w(s) = s!(p−s−1)!/p!
    let fact: Vec<f64> = (0..=p)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let weight: Vec<f64> = (0..p).map(|s| fact[s] * fact[p - s - 1] / fact[p]).collect();

    let mut phi = vec![0.0; p];
    for mask in 0..n_masks {
        let s = mask.count_ones() as usize;
        for (j, phi_j) in phi.iter_mut().enumerate() {
            let bit = 1 << j;
            if mask & bit == 0 {
                *phi_j += weight[s] * (v[mask | bit] - v[mask]);
            }
        }
    }
    Ok(phi)
}

/// Exact Shapley values of the model's log-odds for one row.
pub fn kernel_shap(
    fit: &LogitFit,
    x_row: &[f64],
    background_means: &[f64],
    max_p: usize,
) -> Result<Vec<f64>> {
    check_dims(fit, x_row.len(), background_means)?;
    let beta = &fit.coef[1..];
    exact_shapley(|z| fit.coef[0] + dot(beta, z), x_row, background_means, max_p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Features by descending mean |φ|; equal values keep column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub model_id: String,
    pub entries: Vec<Importance>,
}

pub fn mean_abs_importance(s: &ShapMatrix) -> Result<ImportanceRanking> {
    let n = s.values.rows();
    if n == 0 {
        return Err(Error::degenerate("importance needs at least one row"));
    }
    let mut entries: Vec<Importance> = s
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, f)| Importance {
            feature: f.clone(),
            mean_abs_shap: s.values.iter_rows().map(|r| r[j].abs()).sum::<f64>() / n as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap));
    Ok(ImportanceRanking {
        model_id: s.model_id.clone(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub x: f64,
    pub smoothed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCurve {
    pub feature: String,
    pub model_id: String,
    pub frac: f64,
    pub robust_iters: usize,
    /// One point per distinct x, strictly increasing in x.
    pub points: Vec<TrendPoint>,
}

impl TrendCurve {
    fn labelled(mut self, feature: &str, model_id: &str) -> Self {
        self.feature = feature.to_string();
        self.model_id = model_id.to_string();
        self
    }
}

pub const DEFAULT_LOWESS_FRAC: f64 = 2.0 / 3.0;

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

fn bisquare(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// Local weighted linear fit at `x0` over points sorted by x.
fn local_fit(xs: &[f64], ys: &[f64], robust: &[f64], x0: f64, q: usize, dist: &mut Vec<f64>) -> f64 {
    dist.clear();
    dist.extend(xs.iter().map(|x| (x - x0).abs()));
    let mut sorted = dist.clone();
    sorted.select_nth_unstable_by(q - 1, f64::total_cmp);
    let h = sorted[q - 1];

    let weight_at = |i: usize, use_robust: bool| {
        let d = dist[i];
        let w = if h > 0.0 {
            tricube(d / h)
        } else if d == 0.0 {
            1.0
        } else {
            0.0
        };
        if use_robust {
            w * robust[i]
        } else {
            w
        }
    };

    let mut use_robust = true;
    let mut sw: f64 = (0..xs.len()).map(|i| weight_at(i, true)).sum();
    if sw <= 0.0 {
        use_robust = false;
        sw = (0..xs.len()).map(|i| weight_at(i, false)).sum();
    }
    // y is taken relative to y0 so constant input gives exact zeros.
    let y0 = ys[0];
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..xs.len() {
        let w = weight_at(i, use_robust);
        mx += w * xs[i];
        my += w * (ys[i] - y0);
    }
    mx /= sw;
    my /= sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..xs.len() {
        let w = weight_at(i, use_robust);
        let dx = xs[i] - mx;
        sxx += w * dx * dx;
        sxy += w * dx * (ys[i] - y0 - my);
    }
    let span = xs[xs.len() - 1] - xs[0];
    if sxx <= 1e-12 * span * span * sw {
        y0 + my
    } else {
        y0 + (my + sxy / sxx * (x0 - mx))
    }
}

/// LOWESS: local linear regression at each distinct x with tricube weights
/// over the `⌈frac·n⌉` nearest points, optionally followed by
/// `robust_iters` bisquare reweighting passes.
pub fn lowess(x: &[f64], y: &[f64], frac: f64, robust_iters: usize) -> Result<TrendCurve> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "LOWESS fraction {frac} must be in (0, 1]"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::degenerate("LOWESS input contains non-finite values"));
    }
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let mut sites = xs.clone();
    sites.dedup();
    if sites.len() < 2 {
        return Err(Error::degenerate("LOWESS needs at least two distinct x values"));
    }
    let q = ((frac * n as f64).ceil() as usize).clamp(2, n);

    let mut robust = vec![1.0; n];
    let mut dist = Vec::with_capacity(n);
    let mut fitted_sites = Vec::new();
    for iter in 0..=robust_iters {
        fitted_sites = sites
            .iter()
            .map(|&s| local_fit(&xs, &ys, &robust, s, q, &mut dist))
            .collect();
        if iter == robust_iters {
            break;
        }
        let mut site = 0;
        let resid: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(&xv, &yv)| {
                while sites[site] != xv {
                    site += 1;
                }
                yv - fitted_sites[site]
            })
            .collect();
        let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        let cmad = 6.0 * median(&abs);
        let mean_abs = abs.iter().sum::<f64>() / n as f64;
        if cmad < 1e-7 * mean_abs || cmad == 0.0 {
            break;
        }
        for (w, a) in robust.iter_mut().zip(&abs) {
            *w = if *a <= 0.001 * cmad {
                1.0
            } else if *a > 0.999 * cmad {
                0.0
            } else {
                bisquare(a / cmad)
            };
        }
    }

    Ok(TrendCurve {
        feature: String::new(),
        model_id: String::new(),
        frac,
        robust_iters,
        points: sites
            .into_iter()
            .zip(fitted_sites)
            .map(|(x, smoothed)| TrendPoint { x, smoothed })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendComparison {
    pub feature: String,
    pub full: TrendCurve,
    /// `None` when the optimized model dropped the feature.
    pub optimized: Option<TrendCurve>,
    pub notice: Option<String>,
}

fn feature_curve(s: &ShapMatrix, j: usize, frac: f64, robust_iters: usize) -> Result<TrendCurve> {
    let x = s.inputs.column(j);
    let y = s.values.column(j);
    Ok(lowess(&x, &y, frac, robust_iters)?.labelled(&s.feature_names[j], &s.model_id))
}

/// LOWESS curves of one feature's SHAP values in two models over the same
/// observations.
pub fn trend_compare(
    full: &ShapMatrix,
    optimized: &ShapMatrix,
    feature: &str,
    frac: f64,
    robust_iters: usize,
) -> Result<TrendComparison> {
    if full.row_ids != optimized.row_ids {
        return Err(Error::InvalidArgument(
            "SHAP matrices cover different observations".into(),
        ));
    }
    let j = full
        .feature_index(feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let full_curve = feature_curve(full, j, frac, robust_iters)?;
    let (optimized_curve, notice) = match optimized.feature_index(feature) {
        Some(k) => (Some(feature_curve(optimized, k, frac, robust_iters)?), None),
        None => (
            None,
            Some(format!(
                "feature {feature} is not in model {}; only the {} curve is available",
                optimized.model_id, full.model_id
            )),
        ),
    };
    Ok(TrendComparison {
        feature: feature.to_string(),
        full: full_curve,
        optimized: optimized_curve,
        notice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_with(coef: Vec<f64>, names: &[&str]) -> LogitFit {
        let k = coef.len();
        LogitFit {
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            std_err: vec![1.0; k],
            z: coef.clone(),
            p_two_sided: vec![1.0; k],
            exp_b: coef.iter().map(|c| c.exp()).collect(),
            wald: coef.iter().map(|c| c * c).collect(),
            coef,
            log_lik: -1.0,
            log_lik_null: -2.0,
            pseudo_r2: 0.5,
            llr_stat: 2.0,
            llr_p: 0.1,
            aic: 0.0,
            bic: 0.0,
            n_obs: 10,
            k,
            iterations: 1,
            converged: true,
            final_neg_loglik: 1.0,
            gradient_sup_norm: 0.0,
            ridge: 0.0,
            loglik_trace: vec![],
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn background_row_has_zero_attribution() {
        let f = fit_with(vec![0.3, 1.0, -2.0], &["a", "b"]);
        let x = Matrix::from_rows(&[vec![1.5, 2.0]]).unwrap();
        let s = linear_shap(&f, &x, &[1.5, 2.0], &ids(1), "m").unwrap();
        assert_eq!(s.values.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn single_feature_hand_example() {
        let f = fit_with(vec![0.0, 2.0], &["a"]);
        let x = Matrix::from_rows(&[vec![3.0]]).unwrap();
        let s = linear_shap(&f, &x, &[1.0], &ids(1), "m").unwrap();
        assert_eq!(s.values[(0, 0)], 4.0);
        assert_eq!(s.base_value, 2.0);
        assert_eq!(s.reconstructed(0), 6.0);
    }

    #[test]
    fn exact_shapley_single_player_and_symmetry() {
        let f = fit_with(vec![0.5, 1.3], &["a"]);
        let phi = kernel_shap(&f, &[2.0], &[0.5], 12).unwrap();
        let fx = 0.5 + 1.3 * 2.0;
        let fm = 0.5 + 1.3 * 0.5;
        assert!((phi[0] - (fx - fm)).abs() < 1e-15);

        let g = fit_with(vec![0.0, 0.7, 0.7], &["a", "b"]);
        let phi = kernel_shap(&g, &[2.0, 3.0], &[1.0, 2.0], 12).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-15);
    }

    #[test]
    fn exact_shapley_on_interaction_game() {
        // v(S) = x0·x1: the interaction splits evenly.
        let phi = exact_shapley(|z| z[0] * z[1], &[1.0, 1.0], &[0.0, 0.0], 12).unwrap();
        assert_eq!(phi, vec![0.5, 0.5]);
        assert!(exact_shapley(|_| 0.0, &[0.0; 13], &[0.0; 13], 12).is_err());
    }

    #[test]
    fn importance_hand_example() {
        let f = fit_with(vec![0.0, 1.0, 1.0], &["a", "b"]);
        let s = ShapMatrix {
            model_id: "m".into(),
            feature_names: f.feature_names.clone(),
            row_ids: ids(2),
            inputs: Matrix::zeros(2, 2),
            values: Matrix::from_rows(&[vec![1.0, -1.0], vec![3.0, 1.0]]).unwrap(),
            base_value: 0.0,
        };
        let r = mean_abs_importance(&s).unwrap();
        assert_eq!(r.entries[0].feature, "a");
        assert_eq!(r.entries[0].mean_abs_shap, 2.0);
        assert_eq!(r.entries[1].mean_abs_shap, 1.0);

        let zero = ShapMatrix {
            values: Matrix::zeros(2, 2),
            ..s
        };
        let r = mean_abs_importance(&zero).unwrap();
        assert!(r.entries.iter().all(|e| e.mean_abs_shap == 0.0));
        assert_eq!(r.entries[0].feature, "a");
    }

    #[test]
    fn lowess_constant_and_linear() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let c = lowess(&x, &vec![4.2; 30], DEFAULT_LOWESS_FRAC, 2).unwrap();
        assert!(c.points.iter().all(|p| p.smoothed == 4.2));

        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let l = lowess(&x, &y, 1.0, 0).unwrap();
        assert!(l
            .points
            .iter()
            .all(|p| (p.smoothed - (2.0 * p.x + 1.0)).abs() < 1e-9));
        assert!(l.points.windows(2).all(|w| w[1].x > w[0].x));
    }

    #[test]
    fn lowess_groups_duplicate_sites() {
        let x = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 5.0, 5.0, 4.0];
        let c = lowess(&x, &y, 1.0, 0).unwrap();
        assert_eq!(c.points.len(), 4);
    }

    #[test]
    fn lowess_rejects_degenerate() {
        assert!(lowess(&[1.0, 1.0], &[0.0, 1.0], 0.5, 0).is_err());
        assert!(lowess(&[1.0], &[0.0], 0.5, 0).is_err());
        assert!(lowess(&[1.0, 2.0], &[0.0, 1.0], 0.0, 0).is_err());
        assert!(lowess(&[1.0, 2.0], &[0.0], 0.5, 0).is_err());
    }

    #[test]
    fn robust_pass_downweights_outlier() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 0.5 * v + 0.3 * (1.7 * v).sin()).collect();
        y[20] = 100.0;
        let plain = lowess(&x, &y, 0.3, 0).unwrap();
        let robust = lowess(&x, &y, 0.3, 3).unwrap();
        let err = |c: &TrendCurve| (c.points[20].smoothed - 10.0).abs();
        assert!(err(&robust) < 0.5);
        assert!(err(&plain) > 5.0);
    }

    fn shap_for(coef: Vec<f64>, names: &[&str], x: &Matrix, id: &str) -> ShapMatrix {
        let f = fit_with(coef, names);
        let means = vec![0.0; names.len()];
        linear_shap(&f, x, &means, &ids(x.rows()), id).unwrap()
    }

    #[test]
    fn trend_comparison_cases() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64 % 7.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let full = shap_for(vec![0.1, 2.0, 1.0], &["a", "b"], &x, "full");
        let same = trend_compare(&full, &full, "a", 0.6, 0).unwrap();
        assert_eq!(same.full.points, same.optimized.as_ref().unwrap().points);

        let x_a = x.select_columns(&[0]);
        let opt = shap_for(vec![0.1, 1.0], &["a"], &x_a, "opt");
        let cmp = trend_compare(&full, &opt, "a", 0.6, 0).unwrap();
        for (f, o) in cmp.full.points.iter().zip(&cmp.optimized.unwrap().points) {
            assert!((f.smoothed - 2.0 * o.smoothed).abs() < 1e-9);
        }

        let dropped = trend_compare(&full, &opt, "b", 0.6, 0).unwrap();
        assert!(dropped.optimized.is_none());
        assert!(dropped.notice.is_some());
        assert!(matches!(
            trend_compare(&full, &opt, "zz", 0.6, 0),
            Err(Error::UnknownFeature(_))
        ));
    }
}
