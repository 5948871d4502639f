//! Candidate-model enumeration, backward stepwise elimination, and the
//! comparison table ranking models by information criteria.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{evaluate_fit, Metrics, Split, SplitRng, DEFAULT_THRESHOLD};
use crate::indicators::FeatureMatrix;
use crate::logit::{fit_logistic, DesignMatrix, LogitFit, LogitOptions};

/// Non-empty ordered subset of feature names. The intercept is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelSpec {
    features: Vec<String>,
}

impl ModelSpec {
    pub fn new(features: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument(
                "a model needs at least one feature".into(),
            ));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = features.iter().find(|f| !seen.insert(f.as_str())) {
            return Err(Error::InvalidArgument(format!("feature `{dup}` listed twice")));
        }
        Ok(ModelSpec { features })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn contains(&self, name: &str) -> bool {
        self.features.iter().any(|f| f == name)
    }

    /// Parameter count including the intercept.
    pub fn k(&self) -> usize {
        self.features.len() + 1
    }

    pub fn id(&self) -> String {
        self.features.join("+")
    }

    fn without(&self, name: &str) -> Option<ModelSpec> {
        let rest: Vec<String> = self.features.iter().filter(|f| *f != name).cloned().collect();
        ModelSpec::new(rest).ok()
    }
}

pub const DEFAULT_MAX_P: usize = 15;

/// Every non-empty subset of the columns of `m`, in binary-counter order:
/// mask `1, 2, 3, …` with bit `j` selecting column `j`.
pub fn enumerate_subsets(m: &FeatureMatrix, max_p: usize) -> Result<Vec<ModelSpec>> {
    let p = m.n_cols();
    if p > max_p || p >= usize::BITS as usize {
        return Err(Error::TooManyFeatures { p, max_p });
    }
    let names = m.column_names();
    Ok((1usize..(1 << p))
        .map(|mask| ModelSpec {
            features: (0..p)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| names[j].clone())
                .collect(),
        })
        .collect())
}

/// Up to `count` distinct random subsets (each column kept with
/// probability ½), for feature counts too large to enumerate.
pub fn random_subsets(m: &FeatureMatrix, count: usize, seed: u64) -> Vec<ModelSpec> {
    let p = m.n_cols();
    let limit = if p >= 63 { usize::MAX } else { (1usize << p) - 1 };
    let target = count.min(limit);
    let mut rng = SplitRng::new(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let mask: Vec<bool> = (0..p).map(|_| rng.next_u32() & 1 == 1).collect();
        if !mask.iter().any(|&b| b) || !seen.insert(mask.clone()) {
            continue;
        }
        out.push(ModelSpec {
            features: m
                .column_names()
                .iter()
                .zip(&mask)
                .filter(|(_, &keep)| keep)
                .map(|(n, _)| n.clone())
                .collect(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    /// Intercept first, then the model's features in order.
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_lik: f64,
    pub log_lik_null: f64,
    pub pseudo_r2: f64,
    pub llr_p: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_neg_loglik: f64,
    /// Validation-partition metrics at threshold 0.5.
    pub validation: Metrics,
    pub validation_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub spec: ModelSpec,
    pub k: usize,
    pub summary: Option<ModelSummary>,
    pub failure: Option<RowFailure>,
}

impl ComparisonRow {
    /// AIC of a usable (converged, error-free) fit.
    pub fn aic(&self) -> Option<f64> {
        match (&self.summary, &self.failure) {
            (Some(s), None) => Some(s.aic),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.aic().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Rows ordered by ascending AIC; failed rows last, ties kept in input
    /// order.
    pub fn sorted_by_aic(&self) -> Vec<&ComparisonRow> {
        let mut rows: Vec<&ComparisonRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| match (a.aic(), b.aic()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        rows
    }

    pub fn best(&self) -> Option<&ComparisonRow> {
        self.sorted_by_aic().into_iter().find(|r| r.is_ok())
    }
}

/// Fits `spec` on the training rows and scores it on the validation rows.
pub fn fit_spec(
    spec: &ModelSpec,
    m: &FeatureMatrix,
    split: &Split,
    opts: &LogitOptions,
) -> Result<(LogitFit, ModelSummary)> {
    let design = DesignMatrix::from_features(m, spec.features(), &split.train_indices)?;
    let fit = fit_logistic(&design, opts)?;
    let cols = m.resolve(spec.features())?;
    let x_val = m.values().select_rows(&split.val_indices).select_columns(&cols);
    let y_val: Vec<u8> = split.val_indices.iter().map(|&i| m.target()[i]).collect();
    let ev = evaluate_fit(&fit, &x_val, &y_val, DEFAULT_THRESHOLD)?;
    let summary = ModelSummary {
        coef: fit.coef.clone(),
        std_err: fit.std_err.clone(),
        p_values: fit.p_two_sided.clone(),
        log_lik: fit.log_lik,
        log_lik_null: fit.log_lik_null,
        pseudo_r2: fit.pseudo_r2,
        llr_p: fit.llr_p,
        aic: fit.aic,
        bic: fit.bic,
        iterations: fit.iterations,
        converged: fit.converged,
        final_neg_loglik: fit.final_neg_loglik,
        validation: ev.metrics,
        validation_auc: ev.roc.map(|r| r.auc),
    };
    Ok((fit, summary))
}

fn fit_row(spec: &ModelSpec, m: &FeatureMatrix, split: &Split, opts: &LogitOptions) -> ComparisonRow {
    match fit_spec(spec, m, split, opts) {
        Ok((fit, summary)) => ComparisonRow {
            spec: spec.clone(),
            k: spec.k(),
            failure: (!fit.converged).then(|| RowFailure {
                code: "not_converged".into(),
                message: format!("no convergence within {} iterations", fit.iterations),
            }),
            summary: Some(summary),
        },
        Err(e) => ComparisonRow {
            spec: spec.clone(),
            k: spec.k(),
            summary: None,
            failure: Some(RowFailure {
                code: e.code().into(),
                message: e.to_string(),
            }),
        },
    }
}

/// Fits every spec independently; failures are recorded per row.
/// Row order equals `specs` order regardless of scheduling.
pub fn fit_all(
    specs: &[ModelSpec],
    m: &FeatureMatrix,
    split: &Split,
    opts: &LogitOptions,
) -> ComparisonTable {
    ComparisonTable {
        rows: specs.par_iter().map(|s| fit_row(s, m, split, opts)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseStep {
    pub step: usize,
    /// Feature deleted to reach this model; `None` for the starting model.
    pub removed: Option<String>,
    pub row: ComparisonRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    pub path: Vec<StepwiseStep>,
    pub best: ModelSpec,
}

/// Backward elimination on AIC starting from all columns of `m`.
///
/// Each step fits every single-feature deletion and moves to the one with
/// the lowest AIC when that is strictly below the current AIC.
pub fn backward_stepwise(m: &FeatureMatrix, split: &Split, opts: &LogitOptions) -> Result<StepwiseResult> {
    let full = ModelSpec::new(m.column_names().to_vec())?;
    let (fit, summary) = fit_spec(&full, m, split, opts)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        });
    }
    let mut current = ComparisonRow {
        spec: full.clone(),
        k: full.k(),
        summary: Some(summary),
        failure: None,
    };
    let mut path = vec![StepwiseStep {
        step: 0,
        removed: None,
        row: current.clone(),
    }];

    while current.spec.features().len() > 1 {
        let cur_aic = current.aic().expect("current model is usable");
        let candidates: Vec<(String, ModelSpec)> = current
            .spec
            .features()
            .iter()
            .filter_map(|f| current.spec.without(f).map(|s| (f.clone(), s)))
            .collect();
        let rows: Vec<ComparisonRow> = candidates
            .par_iter()
            .map(|(_, s)| fit_row(s, m, split, opts))
            .collect();
        let best = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.aic().map(|a| (i, a)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, aic)) if aic < cur_aic => {
                current = rows[i].clone();
                path.push(StepwiseStep {
                    step: path.len(),
                    removed: Some(candidates[i].0.clone()),
                    row: current.clone(),
                });
            }
            _ => break,
        }
    }
    Ok(StepwiseResult {
        best: current.spec,
        path,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the comparison in the wide layout: one column per model, rows for
/// each feature coefficient followed by the performance figures.
pub fn write_wide_csv<W: Write>(rows: &[&ComparisonRow], feature_order: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Variables".to_string()];
    header.extend(rows.iter().map(|r| r.spec.id()));
    w.write_record(&header)?;
    for name in feature_order {
        let mut rec = vec![name.clone()];
        for r in rows {
            let v = r.summary.as_ref().and_then(|s| {
                r.spec
                    .features()
                    .iter()
                    .position(|f| f == name)
                    .map(|j| s.coef[j + 1])
            });
            rec.push(fmt_opt(v));
        }
        w.write_record(&rec)?;
    }
    type Getter = fn(&ModelSummary) -> Option<f64>;
    let metrics: [(&str, Getter); 11] = [
        ("Accuracy", |s| s.validation.accuracy),
        ("Precision", |s| s.validation.precision),
        ("Recall", |s| s.validation.recall),
        ("F1-Score", |s| s.validation.f1),
        ("AUC", |s| s.validation_auc),
        ("Log-Likelihood", |s| Some(s.log_lik)),
        ("LL-Null", |s| Some(s.log_lik_null)),
        ("Pseudo R-squared", |s| Some(s.pseudo_r2)),
        ("LLR p-value", |s| Some(s.llr_p)),
        ("AIC", |s| Some(s.aic)),
        ("BIC", |s| Some(s.bic)),
    ];
    for (label, get) in metrics {
        let mut rec = vec![label.to_string()];
        rec.extend(rows.iter().map(|r| fmt_opt(r.summary.as_ref().and_then(get))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
