//! Train/validation splitting, classification metrics, ROC/AUC and k-fold
//! cross-validation.
//!
//! All randomness comes from PCG32 (64-bit LCG state, XSH-RR output) seeded
//! as `pcg32_srandom(seed, 54)`. Bounded draws use the reference
//! `pcg32_boundedrand` rejection rule and permutations are Fisher–Yates from
//! the last position down. This makes splits reproducible across platforms
//! and across implementations in other languages.

use rand::Rng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::FeatureMatrix;
use crate::logit::{fit_logistic, sigmoid, DesignMatrix, LogitFit, LogitOptions};
use crate::model_select::ModelSpec;
use crate::stats::Matrix;

/// Stream selector passed as `initseq`.
pub const PCG_STREAM: u64 = 54;

/// Seeded PCG32 with unbiased bounded draws.
pub struct SplitRng(Pcg32);

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng(Pcg32::new(seed, PCG_STREAM))
    }

    pub fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below((i + 1) as u32) as usize;
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Random partition of `0..n`; the training part has `round(fraction·n)`
/// rows. Both index lists are returned in ascending order.
pub fn make_split(n: usize, train_fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} leaves an empty partition for n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    SplitRng::new(seed).shuffle(&mut perm);
    let mut train_indices = perm[..n_train].to_vec();
    let mut val_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    Ok(Split {
        train_indices,
        val_indices,
        seed,
        train_fraction,
    })
}

/// `σ(x·β)` kept strictly inside `(0, 1)`.
pub fn predict_prob(fit: &LogitFit, row: &[f64]) -> Result<f64> {
    let p = sigmoid(fit.linear_predictor(row)?);
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn classify(prob: f64, threshold: f64) -> u8 {
    u8::from(prob >= threshold)
}

/// Class 1 (Increase) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[u8], actual: &[u8]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                expected: actual.len(),
                got: predicted.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (1, 1) => cm.tp += 1,
                (1, _) => cm.fp += 1,
                (_, 1) => cm.fn_ += 1,
                _ => cm.tn += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold reaching this point; `None` for the origin, which
    /// lies above every score.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over every distinct score; AUC by the trapezoid rule, which
/// counts tied positive/negative pairs as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::degenerate("ROC scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(u8::from(pos > 0)));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Trapezoid in count units: Δfp · (tp0 + tp) / 2.
        area += (fp - fp0) as f64 * (tp0 + tp) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: Some(s),
        });
    }
    Ok(RocCurve {
        points,
        auc: area / (pos as f64 * neg as f64),
    })
}

/// Probabilities, confusion matrix, metrics and ROC of a fit on given rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `None` when the rows contain a single class.
    pub roc: Option<RocCurve>,
}

pub fn evaluate_fit(fit: &LogitFit, x: &Matrix, y: &[u8], threshold: f64) -> Result<Evaluation> {
    let probs = x
        .iter_rows()
        .map(|r| predict_prob(fit, r))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<u8> = probs.iter().map(|&p| classify(p, threshold)).collect();
    let confusion = ConfusionMatrix::from_predictions(&predicted, y)?;
    let roc = match roc_auc(&probs, y) {
        Ok(r) => Some(r),
        Err(Error::SingleClass(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        n: y.len(),
        threshold,
        confusion,
        metrics: metrics(&confusion),
        roc,
    })
}

/// Assigns a shuffled `0..n` round-robin to `k` folds, so fold sizes differ
/// by at most one. Each fold lists its rows in ascending order.
pub fn fold_assignment(n: usize, k: usize, rng: &mut SplitRng) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let mut folds = vec![Vec::new(); k];
    for (pos, &row) in perm.iter().enumerate() {
        folds[pos % k].push(row);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

pub const MAX_FOLD_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub val_indices: Vec<usize>,
    pub metrics: Metrics,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn mean_std(values: impl Iterator<Item = Option<f64>>) -> Option<MeanStd> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd {
        mean,
        std,
        n: v.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub seed: u64,
    pub attempts: usize,
    pub folds: Vec<FoldResult>,
    pub accuracy: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub auc: Option<MeanStd>,
}

fn has_both(target: &[u8], rows: impl Iterator<Item = usize>) -> bool {
    let (mut zero, mut one) = (false, false);
    for i in rows {
        if target[i] == 1 {
            one = true;
        } else {
            zero = true;
        }
    }
    zero && one
}

/// k-fold cross-validation of `spec` on `m`.
///
/// Every training complement must contain both classes, as must every
/// held-out fold with two or more rows; otherwise folds are redrawn from the
/// same generator stream, up to [`MAX_FOLD_ATTEMPTS`] times.
pub fn k_fold_cv(
    m: &FeatureMatrix,
    spec: &ModelSpec,
    k: usize,
    seed: u64,
    opts: &LogitOptions,
) -> Result<CvResult> {
    let n = m.n_rows();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} folds must satisfy 2 <= k <= n = {n}"
        )));
    }
    let cols = m.resolve(spec.features())?;
    let target = m.target();
    let mut rng = SplitRng::new(seed);
    let mut chosen = None;
    for attempt in 1..=MAX_FOLD_ATTEMPTS {
        let folds = fold_assignment(n, k, &mut rng);
        let ok = folds.iter().all(|f| {
            let mut in_fold = vec![false; n];
            f.iter().for_each(|&i| in_fold[i] = true);
            let train_ok = has_both(target, (0..n).filter(|&i| !in_fold[i]));
            let val_ok = f.len() < 2 || has_both(target, f.iter().copied());
            train_ok && val_ok
        });
        if ok {
            chosen = Some((folds, attempt));
            break;
        }
    }
    let (folds, attempts) = chosen.ok_or(Error::ClassStarvedFolds {
        attempts: MAX_FOLD_ATTEMPTS,
    })?;

    let results = folds
        .iter()
        .enumerate()
        .map(|(fi, val)| {
            let mut in_fold = vec![false; n];
            val.iter().for_each(|&i| in_fold[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
            let design = DesignMatrix::from_features(m, spec.features(), &train)?;
            let fit = fit_logistic(&design, opts)?;
            let x_val = m.values().select_rows(val).select_columns(&cols);
            let y_val: Vec<u8> = val.iter().map(|&i| target[i]).collect();
            let ev = evaluate_fit(&fit, &x_val, &y_val, DEFAULT_THRESHOLD)?;
            Ok(FoldResult {
                fold: fi,
                val_indices: val.clone(),
                metrics: ev.metrics,
                auc: ev.roc.map(|r| r.auc),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CvResult {
        k,
        seed,
        attempts,
        accuracy: mean_std(results.iter().map(|f| f.metrics.accuracy)),
        precision: mean_std(results.iter().map(|f| f.metrics.precision)),
        recall: mean_std(results.iter().map(|f| f.metrics.recall)),
        f1: mean_std(results.iter().map(|f| f.metrics.f1)),
        auc: mean_std(results.iter().map(|f| f.auc)),
        folds: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcg32_reference_vector() {
        // pcg32_srandom_r(42, 54) from the PCG reference implementation.
        let mut rng = SplitRng::new(42);
        let got: Vec<u32> = (0..6).map(|_| rng.next_u32()).collect();
        assert_eq!(
            got,
            [0xa15c02b7, 0x7b47f409, 0xba1d3330, 0x83d2f293, 0xbfa4784b, 0xcbed606e]
        );
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = make_split(459, 0.7, 7).unwrap();
        assert_eq!(s.train_indices.len(), 321);
        assert_eq!(s.val_indices.len(), 138);
        let mut all: Vec<usize> = s.train_indices.iter().chain(&s.val_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..459).collect::<Vec<_>>());
        assert_eq!(make_split(10, 0.5, 3).unwrap(), make_split(10, 0.5, 3).unwrap());
        assert_ne!(
            make_split(10, 0.5, 1).unwrap().train_indices,
            make_split(10, 0.5, 2).unwrap().train_indices
        );
    }

    #[test]
    fn split_rejects_empty_partitions() {
        assert!(make_split(1, 0.5, 0).is_err());
        assert!(make_split(10, 0.0, 0).is_err());
        assert!(make_split(10, 1.0, 0).is_err());
        assert!(make_split(3, 0.1, 0).is_err());
    }

    fn fit_with(coef: Vec<f64>) -> LogitFit {
        let k = coef.len();
        LogitFit {
            feature_names: (1..k).map(|i| format!("x{i}")).collect(),
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

    #[test]
    fn probabilities_and_classes() {
        let f = fit_with(vec![0.0, 1.0]);
        let p = predict_prob(&f, &[0.0]).unwrap();
        assert_eq!(p, 0.5);
        assert_eq!(classify(p, DEFAULT_THRESHOLD), 1);
        assert!((predict_prob(&f, &[3f64.ln()]).unwrap() - 0.75).abs() < 1e-15);
        let tiny = predict_prob(&f, &[-40.0]).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-17);
        let clamped = predict_prob(&f, &[-1e6]).unwrap();
        assert!(clamped > 0.0);
        assert!(predict_prob(&f, &[1e6]).unwrap() < 1.0);
        assert!(predict_prob(&f, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metric_examples() {
        let perfect = metrics(&ConfusionMatrix {
            tp: 10,
            fp: 0,
            tn: 10,
            fn_: 0,
        });
        assert_eq!(perfect.accuracy, Some(1.0));
        assert_eq!(perfect.f1, Some(1.0));

        let m = metrics(&ConfusionMatrix {
            tp: 49,
            fp: 23,
            tn: 55,
            fn_: 11,
        });
        assert!((m.accuracy.unwrap() - 104.0 / 138.0).abs() < 1e-15);
        assert!((m.precision.unwrap() - 49.0 / 72.0).abs() < 1e-15);
        assert!((m.recall.unwrap() - 49.0 / 60.0).abs() < 1e-15);
        let (p, r) = (49.0 / 72.0, 49.0 / 60.0);
        assert!((m.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-15);

        let none = metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 3,
        });
        assert_eq!(none.precision, None);
        assert_eq!(none.recall, Some(0.0));
        assert_eq!(none.f1, None);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[0, 1, 0, 1]).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap().auc, 0.75);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::SingleClass(1))
        ));
    }

    #[test]
    fn roc_points_are_monotone() {
        let curve = roc_auc(&[0.9, 0.1, 0.5, 0.5, 0.7, 0.2], &[1, 0, 1, 0, 0, 1]).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(curve
            .points
            .windows(2)
            .all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }

    #[test]
    fn folds_partition_rows() {
        let folds = fold_assignment(6, 6, &mut SplitRng::new(1));
        assert!(folds.iter().all(|f| f.len() == 1));
        let folds = fold_assignment(23, 5, &mut SplitRng::new(9));
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(folds, fold_assignment(23, 5, &mut SplitRng::new(9)));
    }
}
