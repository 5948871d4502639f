//! End-to-end analysis run and report emission.
//!
//! A run is fully determined by its [`RunConfig`]; the report echoes the
//! config so a second run from the echo reproduces it byte for byte.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{
    linear_shap, mean_abs_importance, trend_compare, ImportanceRanking, ShapMatrix, TrendComparison,
    DEFAULT_LOWESS_FRAC,
};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_fit, make_split, Evaluation, Split, DEFAULT_THRESHOLD};
use crate::indicators::{build_feature_matrix, CompositeWeights, FeatureMatrix, FEATURE_NAMES};
use crate::ingest::{filter_eligible, parse_dataset, Dataset, Schema};
use crate::logit::{inference_table, verify_fit_identities, InferenceRow, LogitFit, LogitOptions};
use crate::model_select::{
    backward_stepwise, enumerate_subsets, fit_all, fit_spec, write_wide_csv, ComparisonRow, ModelSpec,
    StepwiseStep, DEFAULT_MAX_P,
};
use crate::network::{
    build_graph, core_authors, girvan_newman, read_edge_list_path, CollabGraph, CoreAuthor, Partition,
    RemovalStep,
};
use crate::stats::{describe, mean, pearson_matrix, vif, CorrelationMatrix, DescriptiveStats};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Enumerate,
    Stepwise,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enumerate" => Ok(SelectionMode::Enumerate),
            "stepwise" => Ok(SelectionMode::Stepwise),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection mode `{other}` (expected enumerate or stepwise)"
            ))),
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Enumerate => "enumerate",
            SelectionMode::Stepwise => "stepwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub coauthor_edges: Option<PathBuf>,
    /// CSV `author,corresponding`; only read when edges are given.
    pub corresponding_authors: Option<PathBuf>,
    pub alpha: f64,
    pub beta: f64,
    /// Restricts the full model to these columns; all indicators when `None`.
    pub features: Option<Vec<String>>,
    pub train_fraction: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub selection: SelectionMode,
    pub max_p: usize,
    pub lowess_frac: f64,
    pub lowess_iters: usize,
    /// Where outputs go; not echoed, since it does not affect results.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            coauthor_edges: None,
            corresponding_authors: None,
            alpha: 1.0,
            beta: 1.0,
            features: None,
            train_fraction: 0.7,
            seed: 42,
            max_iter: 1000,
            tol: 1e-8,
            selection: SelectionMode::Enumerate,
            max_p: DEFAULT_MAX_P,
            lowess_frac: DEFAULT_LOWESS_FRAC,
            lowess_iters: 0,
            out_dir: None,
        }
    }

    pub fn weights(&self) -> Result<CompositeWeights> {
        CompositeWeights::new(self.alpha, self.beta)
    }

    pub fn logit_options(&self) -> LogitOptions {
        LogitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            ..LogitOptions::default()
        }
    }

    /// Range checks that need no input files.
    pub fn validate_values(&self) -> Result<()> {
        self.weights()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train fraction {} must be in (0, 1)",
                self.train_fraction
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tolerance {} must be positive", self.tol));
        }
        if !(self.lowess_frac > 0.0 && self.lowess_frac <= 1.0) {
            return bad(format!("LOWESS fraction {} must be in (0, 1]", self.lowess_frac));
        }
        if self.max_p == 0 {
            return bad("max_p must be at least 1".into());
        }
        if let Some(f) = &self.features {
            ModelSpec::new(f.clone())?;
        }
        Ok(())
    }

    /// Range checks plus existence of every referenced input.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        self.check_feature_names()?;
        self.check_inputs()
    }

    /// Every requested feature is a known indicator.
    pub fn check_feature_names(&self) -> Result<()> {
        let unknown = self
            .features
            .iter()
            .flatten()
            .find(|n| !FEATURE_NAMES.contains(&n.as_str()));
        match unknown {
            Some(n) => Err(Error::UnknownFeature(n.clone())),
            None => Ok(()),
        }
    }

    /// Every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        let paths = std::iter::once(&self.input)
            .chain(&self.coauthor_edges)
            .chain(&self.corresponding_authors);
        for p in paths {
            if !p.is_file() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Indicators,
    Describe,
    Split,
    Fit,
    Select,
    Evaluate,
    Attribute,
    Communities,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Indicators => "indicators",
            Stage::Describe => "describe",
            Stage::Split => "split",
            Stage::Fit => "fit",
            Stage::Select => "select",
            Stage::Evaluate => "evaluate",
            Stage::Attribute => "attribute",
            Stage::Communities => "communities",
            Stage::Report => "report",
        }
    }
}

/// A failed run: where it stopped and whether earlier stages completed.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
    pub partial: bool,
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        self.error.code()
    }

    pub fn exit_code(&self) -> i32 {
        self.error.kind().exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} stage failed [{}]: {}",
            self.stage.as_str(),
            self.code(),
            self.error
        )
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub source_rows: usize,
    pub eligible_rows: usize,
    pub increase: usize,
    pub decrease: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub variable: String,
    #[serde(flatten)]
    pub stats: DescriptiveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifRow {
    pub variable: String,
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    pub correlation: CorrelationMatrix,
    pub vif: Vec<VifRow>,
    pub mean_vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub seed: u64,
    pub train_fraction: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub id: String,
    pub features: Vec<String>,
    pub inference: Vec<InferenceRow>,
    pub n_obs: usize,
    pub k: usize,
    pub log_lik: f64,
    pub log_lik_null: f64,
    pub pseudo_r2: f64,
    pub llr_stat: f64,
    pub llr_p: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_sup_norm: f64,
    pub loglik_trace: Vec<f64>,
    pub validation: Evaluation,
}

impl ModelReport {
    fn new(spec: &ModelSpec, fit: &LogitFit, validation: Evaluation) -> Result<Self> {
        Ok(ModelReport {
            id: spec.id(),
            features: spec.features().to_vec(),
            inference: inference_table(fit)?,
            n_obs: fit.n_obs,
            k: fit.k,
            log_lik: fit.log_lik,
            log_lik_null: fit.log_lik_null,
            pseudo_r2: fit.pseudo_r2,
            llr_stat: fit.llr_stat,
            llr_p: fit.llr_p,
            aic: fit.aic,
            bic: fit.bic,
            iterations: fit.iterations,
            converged: fit.converged,
            gradient_sup_norm: fit.gradient_sup_norm,
            loglik_trace: fit.loglik_trace.clone(),
            validation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    /// Enumeration: every candidate in enumeration order. Stepwise: the
    /// accepted model at each step.
    pub comparison: Vec<ComparisonRow>,
    pub stepwise_path: Option<Vec<StepwiseStep>>,
    pub best_model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub rows: usize,
    /// Training-row feature means used as the SHAP background.
    pub background: Vec<f64>,
    pub full_importance: ImportanceRanking,
    pub optimized_importance: ImportanceRanking,
    pub trends: Vec<TrendComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityReport {
    pub nodes: usize,
    pub edges: usize,
    pub dropped_self_loops: usize,
    pub node_ids: Vec<String>,
    pub steps: Vec<RemovalStep>,
    /// Community count of each recorded dendrogram level.
    pub dendrogram_sizes: Vec<usize>,
    pub best: Partition,
    pub core_authors: Option<Vec<CoreAuthor>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub descriptive: Vec<DescriptiveRow>,
    pub collinearity: CollinearityReport,
    pub split: SplitSummary,
    pub full_model: ModelReport,
    pub selection: SelectionReport,
    pub optimized_model: ModelReport,
    pub attribution: AttributionReport,
    pub communities: Option<CommunityReport>,
}

impl AnalysisReport {
    /// Canonical JSON text; stable across runs with equal inputs.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub partial: bool,
    pub completed_stages: Vec<Stage>,
    pub failed_stage: Stage,
    pub error_code: String,
    pub message: String,
}

/// Everything a run produces, including the large per-row tables that
/// only go to side files.
pub struct RunArtifacts {
    pub report: AnalysisReport,
    pub features: FeatureMatrix,
    pub split: Split,
    pub full_shap: ShapMatrix,
    pub optimized_shap: ShapMatrix,
    pub graph: Option<CollabGraph>,
}

struct Tracker {
    completed: Vec<Stage>,
}

impl Tracker {
    fn run<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce() -> Result<T>,
    ) -> std::result::Result<T, PipelineError> {
        match f() {
            Ok(v) => {
                self.completed.push(stage);
                Ok(v)
            }
            Err(error) => Err(PipelineError {
                stage,
                error,
                partial: !self.completed.is_empty(),
            }),
        }
    }
}

pub fn summarize_dataset(raw: &Dataset, eligible: &Dataset, m: &FeatureMatrix) -> DatasetSummary {
    let (inc, dec) = m.class_counts();
    DatasetSummary {
        source: raw.provenance.source.clone(),
        source_rows: raw.provenance.source_rows,
        eligible_rows: eligible.len(),
        increase: inc,
        decrease: dec,
    }
}

/// Runs every stage from the raw scholar CSV and returns the report.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<AnalysisReport, PipelineError> {
    run_pipeline_artifacts(cfg).map(|a| a.report)
}

pub fn run_pipeline_artifacts(cfg: &RunConfig) -> std::result::Result<RunArtifacts, PipelineError> {
    let mut t = Tracker { completed: vec![] };
    let result = (|| {
        t.run(Stage::Config, || {
            cfg.validate_values()?;
            cfg.check_feature_names()
        })?;
        let (raw, eligible) = t.run(Stage::Ingest, || {
            cfg.check_inputs()?;
            let raw = parse_dataset(&cfg.input, &Schema::default())?;
            let eligible = filter_eligible(&raw);
            if eligible.is_empty() {
                return Err(Error::degenerate("no eligible scholar records"));
            }
            Ok((raw, eligible))
        })?;
        let m = t.run(Stage::Indicators, || {
            build_feature_matrix(&eligible, cfg.weights()?)
        })?;
        let summary = summarize_dataset(&raw, &eligible, &m);
        analyse(cfg, summary, m, &mut t)
    })();
    finish(cfg, result, &t)
}

/// Runs every stage after indicator construction, e.g. from a persisted
/// feature table. Equal inputs give a report equal to [`run_pipeline`].
pub fn run_from_features(
    cfg: &RunConfig,
    dataset: DatasetSummary,
    m: FeatureMatrix,
) -> std::result::Result<RunArtifacts, PipelineError> {
    let mut t = Tracker { completed: vec![] };
    let result = (|| {
        t.run(Stage::Config, || {
            cfg.validate_values()?;
            if let Some(f) = &cfg.features {
                m.resolve(f)?;
            }
            Ok(())
        })?;
        analyse(cfg, dataset, m, &mut t)
    })();
    finish(cfg, result, &t)
}

fn finish(
    cfg: &RunConfig,
    result: std::result::Result<RunArtifacts, PipelineError>,
    t: &Tracker,
) -> std::result::Result<RunArtifacts, PipelineError> {
    match result {
        Ok(a) => {
            if let Some(dir) = &cfg.out_dir {
                write_outputs(&a, dir).map_err(|error| PipelineError {
                    stage: Stage::Report,
                    error,
                    partial: true,
                })?;
            }
            Ok(a)
        }
        Err(e) => {
            if let (Some(dir), true) = (&cfg.out_dir, e.partial) {
                let partial = PartialReport {
                    schema_version: SCHEMA_VERSION,
                    tool_version: TOOL_VERSION.into(),
                    config: cfg.clone(),
                    partial: true,
                    completed_stages: t.completed.clone(),
                    failed_stage: e.stage,
                    error_code: e.code().into(),
                    message: e.error.to_string(),
                };
                // The stage error is what the caller needs; a failure to
                // write the partial file must not mask it.
                let _ = std::fs::create_dir_all(dir).and_then(|_| {
                    let text = serde_json::to_string_pretty(&partial).unwrap_or_default();
                    std::fs::write(dir.join("partial_report.json"), text + "\n")
                });
            }
            Err(e)
        }
    }
}

/// The named columns of `m`, in the given order.
pub fn select_features(m: &FeatureMatrix, names: &[String]) -> Result<FeatureMatrix> {
    let idx = m.resolve(names)?;
    FeatureMatrix::new(
        names.to_vec(),
        m.values().select_columns(&idx),
        m.target().to_vec(),
        m.row_ids().to_vec(),
    )
}

fn validation_eval(fit: &LogitFit, m: &FeatureMatrix, spec: &ModelSpec, split: &Split) -> Result<Evaluation> {
    let cols = m.resolve(spec.features())?;
    let x = m.values().select_rows(&split.val_indices).select_columns(&cols);
    let y: Vec<u8> = split.val_indices.iter().map(|&i| m.target()[i]).collect();
    evaluate_fit(fit, &x, &y, DEFAULT_THRESHOLD)
}

fn shap_for(
    fit: &LogitFit,
    m: &FeatureMatrix,
    spec: &ModelSpec,
    all_names: &[String],
    background: &[f64],
) -> Result<ShapMatrix> {
    let cols = m.resolve(spec.features())?;
    let means: Vec<f64> = spec
        .features()
        .iter()
        .map(|f| {
            background[all_names
                .iter()
                .position(|n| n == f)
                .expect("feature of the full set")]
        })
        .collect();
    let s = linear_shap(
        fit,
        &m.values().select_columns(&cols),
        &means,
        m.row_ids(),
        &spec.id(),
    )?;
    for (i, row) in s.inputs.iter_rows().enumerate() {
        let eta = fit.linear_predictor(row)?;
        if (s.reconstructed(i) - eta).abs() > 1e-9 * eta.abs().max(1.0) {
            return Err(Error::Invariant(format!("SHAP additivity broken on row {i}")));
        }
    }
    Ok(s)
}

/// Reads CSV `author,corresponding` with 0/1 or true/false flags.
pub fn read_corresponding(path: &Path) -> Result<HashMap<String, bool>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (a, c) = (col("author")?, col("corresponding")?);
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(c).unwrap_or_default();
        let flag = match raw.to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => {
                return Err(Error::BadCell {
                    row: i + 1,
                    column: "corresponding".into(),
                    raw: raw.into(),
                    reason: "expected 0/1 or true/false".into(),
                })
            }
        };
        out.insert(rec.get(a).unwrap_or_default().to_string(), flag);
    }
    Ok(out)
}

/// Descriptive statistics, correlations and VIFs of every column of `m`.
pub fn describe_features(m: &FeatureMatrix) -> Result<(Vec<DescriptiveRow>, CollinearityReport)> {
    let names = m.column_names();
    let descriptive = names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            Ok(DescriptiveRow {
                variable: n.clone(),
                stats: describe(&m.values().column(j)).map_err(|e| e.with_context(n.clone()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correlation = pearson_matrix(names, m.values())?;
    let v = vif(names, m.values())?;
    let collinearity = CollinearityReport {
        correlation,
        mean_vif: mean(&v),
        vif: names
            .iter()
            .zip(&v)
            .map(|(n, &vif)| VifRow {
                variable: n.clone(),
                vif,
            })
            .collect(),
    };
    Ok((descriptive, collinearity))
}

/// Fits `spec` on the training rows and scores it on the validation rows.
pub fn fit_model(
    spec: &ModelSpec,
    m: &FeatureMatrix,
    split: &Split,
    opts: &LogitOptions,
) -> Result<(LogitFit, ModelReport)> {
    let (fit, _) = fit_spec(spec, m, split, opts)?;
    let ev = validation_eval(&fit, m, spec, split)?;
    let report = ModelReport::new(spec, &fit, ev)?;
    Ok((fit, report))
}

/// Runs model selection over the columns of `m` and returns the chosen spec.
pub fn select_model(
    m: &FeatureMatrix,
    split: &Split,
    mode: SelectionMode,
    max_p: usize,
    opts: &LogitOptions,
) -> Result<(SelectionReport, ModelSpec)> {
    match mode {
        SelectionMode::Enumerate => {
            let specs = enumerate_subsets(m, max_p)?;
            let table = fit_all(&specs, m, split, opts);
            let best = table
                .best()
                .ok_or_else(|| Error::degenerate("no candidate model converged"))?
                .spec
                .clone();
            Ok((
                SelectionReport {
                    mode,
                    best_model_id: best.id(),
                    comparison: table.rows,
                    stepwise_path: None,
                },
                best,
            ))
        }
        SelectionMode::Stepwise => {
            let sw = backward_stepwise(m, split, opts)?;
            Ok((
                SelectionReport {
                    mode,
                    best_model_id: sw.best.id(),
                    comparison: sw.path.iter().map(|s| s.row.clone()).collect(),
                    stepwise_path: Some(sw.path),
                },
                sw.best,
            ))
        }
    }
}

/// Builds the co-authorship graph from an edge list and splits it with
/// Girvan-Newman. With a `target`, the partition reported is the first
/// level with at least that many communities; otherwise the level of
/// highest modularity.
pub fn detect_communities(
    edges: &Path,
    corresponding: Option<&Path>,
    target: Option<usize>,
) -> Result<(CollabGraph, CommunityReport)> {
    let g = build_graph(&read_edge_list_path(edges)?)?;
    let gn = girvan_newman(&g, target)?;
    let chosen = match target {
        Some(_) => gn.dendrogram.last().cloned().unwrap_or_else(|| gn.best.clone()),
        None => gn.best.clone(),
    };
    let core = match corresponding {
        Some(p) => Some(core_authors(&g, &chosen, &read_corresponding(p)?)?),
        None => None,
    };
    let report = CommunityReport {
        nodes: g.n_nodes(),
        edges: g.n_edges(),
        dropped_self_loops: g.dropped_self_loops(),
        node_ids: g.node_ids().to_vec(),
        dendrogram_sizes: gn.dendrogram.iter().map(|p| p.n_communities).collect(),
        steps: gn.steps,
        best: chosen,
        core_authors: core,
    };
    Ok((g, report))
}

fn analyse(
    cfg: &RunConfig,
    dataset: DatasetSummary,
    all: FeatureMatrix,
    t: &mut Tracker,
) -> std::result::Result<RunArtifacts, PipelineError> {
    let opts = cfg.logit_options();
    let names = cfg
        .features
        .clone()
        .unwrap_or_else(|| all.column_names().to_vec());

    let (m, descriptive, collinearity) = t.run(Stage::Describe, || {
        let m = select_features(&all, &names)?;
        let (descriptive, collinearity) = describe_features(&m)?;
        Ok((m, descriptive, collinearity))
    })?;

    let split = t.run(Stage::Split, || {
        make_split(m.n_rows(), cfg.train_fraction, cfg.seed)
    })?;

    let full_spec = ModelSpec::new(names.clone()).map_err(|error| PipelineError {
        stage: Stage::Fit,
        error,
        partial: true,
    })?;
    let (full_fit, full_report) = t.run(Stage::Fit, || fit_model(&full_spec, &m, &split, &opts))?;

    let (selection, best_spec) = t.run(Stage::Select, || {
        select_model(&m, &split, cfg.selection, cfg.max_p, &opts)
    })?;

    let (opt_fit, opt_report) = t.run(Stage::Evaluate, || fit_model(&best_spec, &m, &split, &opts))?;

    let (full_shap, optimized_shap, attribution) = t.run(Stage::Attribute, || {
        let train = m.values().select_rows(&split.train_indices);
        let background: Vec<f64> = (0..train.cols()).map(|j| mean(&train.column(j))).collect();
        let full_shap = shap_for(&full_fit, &m, &full_spec, &names, &background)?;
        let opt_shap = shap_for(&opt_fit, &m, &best_spec, &names, &background)?;
        let trends = names
            .iter()
            .map(|f| {
                trend_compare(&full_shap, &opt_shap, f, cfg.lowess_frac, cfg.lowess_iters)
                    .map_err(|e| e.with_context(format!("trend for {f}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let report = AttributionReport {
            rows: m.n_rows(),
            background,
            full_importance: mean_abs_importance(&full_shap)?,
            optimized_importance: mean_abs_importance(&opt_shap)?,
            trends,
        };
        Ok((full_shap, opt_shap, report))
    })?;

    let (graph, communities) = match &cfg.coauthor_edges {
        None => (None, None),
        Some(path) => t.run(Stage::Communities, || {
            let (g, report) = detect_communities(path, cfg.corresponding_authors.as_deref(), None)?;
            Ok((Some(g), Some(report)))
        })?,
    };

    let report = t.run(Stage::Report, || {
        verify_fit_identities(&full_fit)?;
        verify_fit_identities(&opt_fit)?;
        for ev in [&full_report.validation, &opt_report.validation] {
            if let Some(roc) = &ev.roc {
                if !(0.0..=1.0).contains(&roc.auc) {
                    return Err(Error::Invariant(format!("AUC {} outside [0, 1]", roc.auc)));
                }
            }
        }
        if split.train_indices.len() != full_fit.n_obs {
            return Err(Error::Invariant(
                "training rows differ from fitted observations".into(),
            ));
        }
        Ok(AnalysisReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            config: RunConfig {
                out_dir: None,
                ..cfg.clone()
            },
            dataset,
            descriptive,
            collinearity,
            split: SplitSummary {
                seed: split.seed,
                train_fraction: split.train_fraction,
                train_rows: split.train_indices.len(),
                validation_rows: split.val_indices.len(),
            },
            full_model: full_report,
            selection,
            optimized_model: opt_report,
            attribution,
            communities,
        })
    })?;

    Ok(RunArtifacts {
        report,
        features: all,
        split,
        full_shap,
        optimized_shap,
        graph,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path, source })
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Io {
            path: "<output>".into(),
            source: std::io::Error::other(e.to_string()),
        })?
        .flush()
        .map_err(|source| Error::Io {
            path: "<output>".into(),
            source,
        })
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_descriptive_csv<W: Write>(rows: &[DescriptiveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Variables",
        "Mean",
        "Standard Deviation",
        "Minimum",
        "Median",
        "Maximum",
    ])?;
    for r in rows {
        let s = &r.stats;
        w.write_record([
            r.variable.clone(),
            num(s.mean),
            opt(s.std_dev),
            num(s.minimum),
            num(s.median),
            num(s.maximum),
        ])?;
    }
    flush(w)
}

pub fn write_correlation_csv<W: Write>(c: &CollinearityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(c.correlation.names.iter().cloned());
    header.push("VIF".into());
    w.write_record(&header)?;
    for (i, name) in c.correlation.names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(c.correlation.r.row(i).iter().map(|&v| num(v)));
        rec.push(num(c.vif[i].vif));
        w.write_record(&rec)?;
    }
    flush(w)
}

pub fn write_inference_csv<W: Write>(rows: &[InferenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Variable", "Coef", "Std.Err", "z", "P>|z|", "Exp(B)", "Wald"])?;
    for r in rows {
        w.write_record([
            r.variable.clone(),
            num(r.coef),
            num(r.std_err),
            num(r.z),
            num(r.p_value),
            num(r.exp_b),
            num(r.wald),
        ])?;
    }
    flush(w)
}

pub fn write_importance_csv<W: Write>(rankings: &[&ImportanceRanking], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "rank", "feature", "mean_abs_shap"])?;
    for r in rankings {
        for (i, e) in r.entries.iter().enumerate() {
            w.write_record([
                r.model_id.clone(),
                (i + 1).to_string(),
                e.feature.clone(),
                num(e.mean_abs_shap),
            ])?;
        }
    }
    flush(w)
}

pub fn write_trends_csv<W: Write>(trends: &[TrendComparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "model", "x", "smoothed"])?;
    for t in trends {
        for c in std::iter::once(&t.full).chain(&t.optimized) {
            for p in &c.points {
                w.write_record([t.feature.clone(), c.model_id.clone(), num(p.x), num(p.smoothed)])?;
            }
        }
    }
    flush(w)
}

pub fn write_roc_csv<W: Write>(models: &[&ModelReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "threshold", "fpr", "tpr"])?;
    for m in models {
        if let Some(roc) = &m.validation.roc {
            for p in &roc.points {
                w.write_record([m.id.clone(), opt(p.threshold), num(p.fpr), num(p.tpr)])?;
            }
        }
    }
    flush(w)
}

pub fn write_shap_csv<W: Write>(s: &ShapMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scholar_id".to_string()];
    header.extend(s.feature_names.iter().cloned());
    header.push("base_value".into());
    w.write_record(&header)?;
    for (id, row) in s.row_ids.iter().zip(s.values.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&v| num(v)));
        rec.push(num(s.base_value));
        w.write_record(&rec)?;
    }
    flush(w)
}

pub fn write_json<T: Serialize>(value: &T, out: impl Write) -> Result<()> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|source| Error::Io {
        path: "<output>".into(),
        source,
    })
}

/// Writes `report.json`, the intermediates needed by [`run_from_features`]
/// and CSV side tables into `dir`.
pub fn write_outputs(a: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let r = &a.report;
    create(dir, "report.json")?
        .write_all(r.to_json()?.as_bytes())
        .map_err(|source| Error::Io {
            path: dir.join("report.json"),
            source,
        })?;
    write_json(&r.dataset, create(dir, "dataset.json")?)?;
    a.features.write_csv(create(dir, "features.csv")?)?;
    write_descriptive_csv(&r.descriptive, create(dir, "descriptive.csv")?)?;
    write_correlation_csv(&r.collinearity, create(dir, "correlation.csv")?)?;
    write_inference_csv(&r.full_model.inference, create(dir, "inference_full.csv")?)?;
    write_inference_csv(
        &r.optimized_model.inference,
        create(dir, "inference_optimized.csv")?,
    )?;
    let rows: Vec<&ComparisonRow> = r.selection.comparison.iter().collect();
    write_wide_csv(&rows, &r.full_model.features, create(dir, "comparison.csv")?)?;
    write_importance_csv(
        &[
            &r.attribution.full_importance,
            &r.attribution.optimized_importance,
        ],
        create(dir, "importance.csv")?,
    )?;
    write_trends_csv(&r.attribution.trends, create(dir, "trends.csv")?)?;
    write_roc_csv(&[&r.full_model, &r.optimized_model], create(dir, "roc.csv")?)?;
    write_shap_csv(&a.full_shap, create(dir, "shap_full.csv")?)?;
    write_shap_csv(&a.optimized_shap, create(dir, "shap_optimized.csv")?)?;
    if let (Some(g), Some(c)) = (&a.graph, &r.communities) {
        c.best.write_csv(g, create(dir, "partition.csv")?)?;
        write_json(&c.steps, create(dir, "dendrogram.json")?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::write_dataset;
    use crate::synth::{synthetic_cohort, CohortSpec};

    fn fixture(dir: &Path, spec: CohortSpec) -> PathBuf {
        let d = synthetic_cohort(spec).unwrap();
        let path = dir.join("cohort.csv");
        write_dataset(&d, &Schema::default(), File::create(&path).unwrap()).unwrap();
        path
    }

    #[test]
    fn small_run_and_reproduction() {
        let tmp = tempfile::tempdir().unwrap();
        let input = fixture(
            tmp.path(),
            CohortSpec {
                n: 120,
                increases: 55,
                seed: 9,
            },
        );
        let mut cfg = RunConfig::new(&input);
        cfg.features = Some(["TD", "FR", "P", "AW"].map(String::from).to_vec());
        cfg.out_dir = Some(tmp.path().join("out"));
        let a = run_pipeline_artifacts(&cfg).unwrap();
        assert_eq!(a.report.split.train_rows, 84);
        assert_eq!(a.report.selection.comparison.len(), 15);
        for f in [
            "report.json",
            "features.csv",
            "descriptive.csv",
            "comparison.csv",
            "trends.csv",
        ] {
            assert!(tmp.path().join("out").join(f).is_file(), "{f}");
        }

        let echo: AnalysisReport =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report.json")).unwrap())
                .unwrap();
        let mut cfg2 = echo.config.clone();
        cfg2.out_dir = None;
        let again = run_pipeline(&cfg2).unwrap();
        assert_eq!(again, a.report);

        let out = tmp.path().join("out");
        let features = FeatureMatrix::read_csv(File::open(out.join("features.csv")).unwrap()).unwrap();
        let dataset: DatasetSummary =
            serde_json::from_reader(File::open(out.join("dataset.json")).unwrap()).unwrap();
        let regen = run_from_features(&cfg2, dataset, features).unwrap();
        assert_eq!(regen.report, a.report);
        assert_eq!(regen.report.to_json().unwrap(), a.report.to_json().unwrap());
    }

    #[test]
    fn stage_errors() {
        let e = run_pipeline(&RunConfig::new("/nonexistent/cohort.csv")).unwrap_err();
        assert_eq!(e.stage, Stage::Ingest);
        assert_eq!(e.code(), "io");
        assert_eq!(e.exit_code(), 2);
        assert!(e.partial);

        let mut cfg = RunConfig::new("/nonexistent/cohort.csv");
        cfg.features = Some(vec!["NOPE".into()]);
        assert!(matches!(
            run_pipeline(&cfg).unwrap_err().error,
            Error::UnknownFeature(_)
        ));

        let mut cfg = RunConfig::new("x");
        cfg.train_fraction = 1.0;
        assert!(matches!(
            run_pipeline(&cfg).unwrap_err().error,
            Error::InvalidArgument(_)
        ));
        assert!("bogus".parse::<SelectionMode>().is_err());
    }

    #[test]
    fn data_error_writes_partial_report() {
        let tmp = tempfile::tempdir().unwrap();
        let input = tmp.path().join("bad.csv");
        std::fs::write(&input, "scholar_id,account_days\nA,1\n").unwrap();
        let mut cfg = RunConfig::new(&input);
        cfg.out_dir = Some(tmp.path().join("out"));
        let e = run_pipeline(&cfg).unwrap_err();
        assert_eq!(e.stage, Stage::Ingest);
        assert_eq!(e.exit_code(), 3);
        assert!(e.partial);
        let p: PartialReport = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("out/partial_report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(p.completed_stages, vec![Stage::Config]);
        assert_eq!(p.failed_stage, Stage::Ingest);
    }
}
