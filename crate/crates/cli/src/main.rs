use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stratlogit::attribution::DEFAULT_LOWESS_FRAC;
use stratlogit::evaluate::{k_fold_cv, make_split};
use stratlogit::indicators::{build_feature_matrix, CompositeWeights, FeatureMatrix, FEATURE_NAMES};
use stratlogit::ingest::{filter_eligible, parse_dataset, Schema};
use stratlogit::model_select::{write_wide_csv, ComparisonRow, ModelSpec, DEFAULT_MAX_P};
use stratlogit::pipeline::{
    describe_features, detect_communities, fit_model, run_from_features, run_pipeline_artifacts,
    select_features, select_model, summarize_dataset, write_correlation_csv, write_descriptive_csv,
    write_importance_csv, write_inference_csv, write_json, write_roc_csv, write_shap_csv, write_trends_csv,
    AnalysisReport, DatasetSummary, PipelineError, RunConfig, SelectionMode, Stage,
};
use stratlogit::Error;

type CliResult<T> = std::result::Result<T, PipelineError>;

#[derive(Parser)]
#[command(
    name = "stratlogit",
    version,
    about = "Logistic attribution of scholar social-media indicators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse scholar records and write the indicator table.
    Ingest {
        /// Scholar records CSV.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        weights: Weights,
        #[arg(long)]
        out: PathBuf,
    },
    /// Descriptive statistics, correlations and VIFs.
    Describe {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one logistic model on the training split.
    Fit {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fitting: Fitting,
        /// Comma-separated indicator columns; all when omitted.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare candidate models and pick the one with the lowest AIC.
    Select {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fitting: Fitting,
        #[command(flatten)]
        selection: Selection,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation metrics and ROC curve, optionally with k-fold CV.
    Evaluate {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fitting: Fitting,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        /// Also run k-fold cross-validation with this many folds.
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SHAP values, importance rankings and LOWESS trends.
    Attribute {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        fitting: Fitting,
        #[command(flatten)]
        selection: Selection,
        #[command(flatten)]
        smoothing: Smoothing,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Girvan-Newman communities of the co-authorship graph.
    Communities {
        /// CSV `author_a,author_b[,weight]`.
        #[arg(long)]
        coauthor_edges: PathBuf,
        /// CSV `author,corresponding`.
        #[arg(long)]
        corresponding: Option<PathBuf>,
        /// Stop once this many communities exist.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full run: every stage, every output file.
    Report {
        /// Scholar records CSV.
        #[arg(long, required_unless_present = "from", conflicts_with = "from")]
        input: Option<PathBuf>,
        /// Regenerate from a previous output directory (report.json,
        /// features.csv and dataset.json), reusing its configuration.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, conflicts_with = "from")]
        coauthor_edges: Option<PathBuf>,
        #[arg(long, requires = "coauthor_edges")]
        corresponding: Option<PathBuf>,
        #[command(flatten)]
        weights: Weights,
        #[command(flatten)]
        fitting: Fitting,
        #[command(flatten)]
        selection: Selection,
        #[command(flatten)]
        smoothing: Smoothing,
        #[arg(long, value_delimiter = ',', conflicts_with = "from")]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Weights {
    /// Weight of TD in the composite activity index.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Weight of the follower term in the composite activity index.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false, id = "table")]
struct Source {
    /// Scholar records CSV.
    #[arg(long, group = "table")]
    input: Option<PathBuf>,
    /// Indicator table written by `ingest` or `report`.
    #[arg(long, group = "table")]
    features: Option<PathBuf>,
    /// dataset.json matching --features.
    #[arg(long, requires = "features")]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    weights: Weights,
}

#[derive(Args, Clone)]
struct Fitting {
    #[arg(long = "train-frac", default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args, Clone)]
struct Selection {
    /// enumerate or stepwise.
    #[arg(long = "select", default_value_t = SelectionMode::Enumerate)]
    mode: SelectionMode,
    /// Largest column count allowed for exhaustive enumeration.
    #[arg(long, default_value_t = DEFAULT_MAX_P)]
    max_p: usize,
}

#[derive(Args, Clone)]
struct Smoothing {
    #[arg(long, default_value_t = DEFAULT_LOWESS_FRAC)]
    lowess_frac: f64,
    /// Robustness iterations for LOWESS.
    #[arg(long, default_value_t = 0)]
    lowess_iters: usize,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> CliResult<T>;
}

impl<T> AtStage<T> for stratlogit::Result<T> {
    fn at(self, stage: Stage) -> CliResult<T> {
        self.map_err(|error| PipelineError {
            stage,
            error,
            partial: false,
        })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(dir: &Path, name: &str) -> stratlogit::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io_err(&path, e))
}

fn open(path: &Path) -> stratlogit::Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn config(input: PathBuf, weights: &Weights, fitting: &Fitting) -> RunConfig {
    let mut cfg = RunConfig::new(input);
    cfg.alpha = weights.alpha;
    cfg.beta = weights.beta;
    cfg.train_fraction = fitting.train_fraction;
    cfg.seed = fitting.seed;
    cfg.max_iter = fitting.max_iter;
    cfg.tol = fitting.tol;
    cfg
}

fn check_columns(columns: &Option<Vec<String>>) -> stratlogit::Result<()> {
    if let Some(cols) = columns {
        if let Some(bad) = cols.iter().find(|c| !FEATURE_NAMES.contains(&c.as_str())) {
            return Err(Error::UnknownFeature(bad.clone()));
        }
        ModelSpec::new(cols.clone())?;
    }
    Ok(())
}

/// Loads the indicator table from either source and restricts it to
/// `columns`.
fn load(source: &Source, columns: &Option<Vec<String>>) -> CliResult<(DatasetSummary, FeatureMatrix)> {
    let w = CompositeWeights::new(source.weights.alpha, source.weights.beta).at(Stage::Config)?;
    let (summary, m) = match (&source.input, &source.features) {
        (Some(input), _) => {
            check_columns(columns).at(Stage::Config)?;
            let raw = parse_dataset(input, &Schema::default()).at(Stage::Ingest)?;
            let eligible = filter_eligible(&raw);
            if eligible.is_empty() {
                return Err(Error::degenerate("no eligible scholar records")).at(Stage::Ingest);
            }
            let m = build_feature_matrix(&eligible, w).at(Stage::Indicators)?;
            (summarize_dataset(&raw, &eligible, &m), m)
        }
        (None, Some(path)) => {
            let m = FeatureMatrix::read_csv(open(path).at(Stage::Ingest)?).at(Stage::Ingest)?;
            if let Some(cols) = columns {
                m.resolve(cols).at(Stage::Config)?;
            }
            let summary = match &source.dataset {
                Some(d) => serde_json::from_reader(open(d).at(Stage::Ingest)?)
                    .map_err(Error::from)
                    .at(Stage::Ingest)?,
                None => {
                    let (inc, dec) = m.class_counts();
                    DatasetSummary {
                        source: path.display().to_string(),
                        source_rows: m.n_rows(),
                        eligible_rows: m.n_rows(),
                        increase: inc,
                        decrease: dec,
                    }
                }
            };
            (summary, m)
        }
        (None, None) => unreachable!("clap requires one table source"),
    };
    let m = match columns {
        Some(cols) => select_features(&m, cols).at(Stage::Describe)?,
        None => m,
    };
    Ok((summary, m))
}

/// Four decimals, or `n/a` for a metric with a zero denominator.
fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn source_path(source: &Source) -> PathBuf {
    source
        .input
        .clone()
        .or_else(|| source.features.clone())
        .unwrap_or_default()
}

fn spec_for(m: &FeatureMatrix) -> CliResult<ModelSpec> {
    ModelSpec::new(m.column_names().to_vec()).at(Stage::Fit)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { input, weights, out } => {
            let w = CompositeWeights::new(weights.alpha, weights.beta).at(Stage::Config)?;
            let raw = parse_dataset(&input, &Schema::default()).at(Stage::Ingest)?;
            let eligible = filter_eligible(&raw);
            if eligible.is_empty() {
                return Err(Error::degenerate("no eligible scholar records")).at(Stage::Ingest);
            }
            let m = build_feature_matrix(&eligible, w).at(Stage::Indicators)?;
            let summary = summarize_dataset(&raw, &eligible, &m);
            m.write_csv(create(&out, "features.csv").at(Stage::Report)?)
                .at(Stage::Report)?;
            write_json(&summary, create(&out, "dataset.json").at(Stage::Report)?).at(Stage::Report)?;
            println!(
                "{} of {} records eligible ({} increase, {} decrease)",
                summary.eligible_rows, summary.source_rows, summary.increase, summary.decrease
            );
        }

        Command::Describe { source, columns, out } => {
            let (_, m) = load(&source, &columns)?;
            let (rows, coll) = describe_features(&m).at(Stage::Describe)?;
            write_descriptive_csv(&rows, create(&out, "descriptive.csv").at(Stage::Report)?)
                .at(Stage::Report)?;
            write_correlation_csv(&coll, create(&out, "correlation.csv").at(Stage::Report)?)
                .at(Stage::Report)?;
            println!("{} variables, mean VIF {:.4}", rows.len(), coll.mean_vif);
        }

        Command::Fit {
            source,
            fitting,
            columns,
            out,
        } => {
            let cfg = config(source_path(&source), &source.weights, &fitting);
            cfg.validate_values().at(Stage::Config)?;
            let (_, m) = load(&source, &columns)?;
            let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed).at(Stage::Split)?;
            let spec = spec_for(&m)?;
            let (_, report) = fit_model(&spec, &m, &split, &cfg.logit_options()).at(Stage::Fit)?;
            write_inference_csv(
                &report.inference,
                create(&out, "inference.csv").at(Stage::Report)?,
            )
            .at(Stage::Report)?;
            write_json(&report, create(&out, "fit.json").at(Stage::Report)?).at(Stage::Report)?;
            println!(
                "{}: AIC {:.3}, BIC {:.3}, pseudo R2 {:.4}",
                report.id, report.aic, report.bic, report.pseudo_r2
            );
        }

        Command::Select {
            source,
            fitting,
            selection,
            columns,
            out,
        } => {
            let mut cfg = config(source_path(&source), &source.weights, &fitting);
            cfg.selection = selection.mode;
            cfg.max_p = selection.max_p;
            cfg.validate_values().at(Stage::Config)?;
            let (_, m) = load(&source, &columns)?;
            let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed).at(Stage::Split)?;
            let (report, best) =
                select_model(&m, &split, cfg.selection, cfg.max_p, &cfg.logit_options()).at(Stage::Select)?;
            let rows: Vec<&ComparisonRow> = report.comparison.iter().collect();
            write_wide_csv(
                &rows,
                m.column_names(),
                create(&out, "comparison.csv").at(Stage::Report)?,
            )
            .at(Stage::Report)?;
            write_json(&report, create(&out, "selection.json").at(Stage::Report)?).at(Stage::Report)?;
            println!("{} candidates, best {}", report.comparison.len(), best.id());
        }

        Command::Evaluate {
            source,
            fitting,
            columns,
            folds,
            out,
        } => {
            let cfg = config(source_path(&source), &source.weights, &fitting);
            cfg.validate_values().at(Stage::Config)?;
            let (_, m) = load(&source, &columns)?;
            let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed).at(Stage::Split)?;
            let spec = spec_for(&m)?;
            let opts = cfg.logit_options();
            let (_, report) = fit_model(&spec, &m, &split, &opts).at(Stage::Fit)?;
            write_json(
                &report.validation,
                create(&out, "evaluation.json").at(Stage::Report)?,
            )
            .at(Stage::Report)?;
            write_roc_csv(&[&report], create(&out, "roc.csv").at(Stage::Report)?).at(Stage::Report)?;
            let ev = &report.validation.metrics;
            print!(
                "accuracy {}, precision {}, recall {}, F1 {}",
                show(ev.accuracy),
                show(ev.precision),
                show(ev.recall),
                show(ev.f1)
            );
            match &report.validation.roc {
                Some(roc) => println!(", AUC {:.4}", roc.auc),
                None => println!(),
            }
            if let Some(k) = folds {
                let cv = k_fold_cv(&m, &spec, k, cfg.seed, &opts).at(Stage::Evaluate)?;
                write_json(&cv, create(&out, "cv.json").at(Stage::Report)?).at(Stage::Report)?;
                match &cv.accuracy {
                    Some(acc) => println!("{k}-fold accuracy {:.4} +/- {:.4}", acc.mean, acc.std),
                    None => println!("{k}-fold accuracy undefined"),
                }
            }
        }

        Command::Attribute {
            source,
            fitting,
            selection,
            smoothing,
            columns,
            out,
        } => {
            let mut cfg = config(source_path(&source), &source.weights, &fitting);
            cfg.selection = selection.mode;
            cfg.max_p = selection.max_p;
            cfg.lowess_frac = smoothing.lowess_frac;
            cfg.lowess_iters = smoothing.lowess_iters;
            cfg.validate_values().at(Stage::Config)?;
            let (summary, m) = load(&source, &columns)?;
            let a = run_from_features(&cfg, summary, m)?;
            let r = &a.report.attribution;
            let report_err = |e| PipelineError {
                stage: Stage::Report,
                error: e,
                partial: true,
            };
            let file = |name| create(&out, name).map_err(report_err);
            write_importance_csv(
                &[&r.full_importance, &r.optimized_importance],
                file("importance.csv")?,
            )
            .map_err(report_err)?;
            write_trends_csv(&r.trends, file("trends.csv")?).map_err(report_err)?;
            write_shap_csv(&a.full_shap, file("shap_full.csv")?).map_err(report_err)?;
            write_shap_csv(&a.optimized_shap, file("shap_optimized.csv")?).map_err(report_err)?;
            write_json(r, file("attribution.json")?).map_err(report_err)?;
            let top = r
                .full_importance
                .entries
                .first()
                .map(|e| e.feature.as_str())
                .unwrap_or("-");
            println!("{} rows attributed; top feature {top}", r.rows);
        }

        Command::Communities {
            coauthor_edges,
            corresponding,
            target,
            out,
        } => {
            let (g, report) = detect_communities(&coauthor_edges, corresponding.as_deref(), target)
                .at(Stage::Communities)?;
            report
                .best
                .write_csv(&g, create(&out, "partition.csv").at(Stage::Report)?)
                .at(Stage::Report)?;
            write_json(&report.steps, create(&out, "dendrogram.json").at(Stage::Report)?)
                .at(Stage::Report)?;
            write_json(&report, create(&out, "communities.json").at(Stage::Report)?).at(Stage::Report)?;
            println!(
                "{} communities over {} nodes (modularity {:.4})",
                report.best.n_communities, report.nodes, report.best.modularity
            );
        }

        Command::Report {
            input,
            from,
            coauthor_edges,
            corresponding,
            weights,
            fitting,
            selection,
            smoothing,
            columns,
            out,
        } => {
            let a = match from {
                Some(dir) => {
                    let prev: AnalysisReport =
                        serde_json::from_reader(open(&dir.join("report.json")).at(Stage::Ingest)?)
                            .map_err(Error::from)
                            .at(Stage::Config)?;
                    let summary: DatasetSummary =
                        serde_json::from_reader(open(&dir.join("dataset.json")).at(Stage::Ingest)?)
                            .map_err(Error::from)
                            .at(Stage::Ingest)?;
                    let m = FeatureMatrix::read_csv(open(&dir.join("features.csv")).at(Stage::Ingest)?)
                        .at(Stage::Ingest)?;
                    let mut cfg = prev.config;
                    cfg.out_dir = Some(out.clone());
                    if cfg.coauthor_edges.is_some() {
                        cfg.validate().at(Stage::Config)?;
                    }
                    run_from_features(&cfg, summary, m)?
                }
                None => {
                    let mut cfg = config(input.unwrap_or_default(), &weights, &fitting);
                    cfg.coauthor_edges = coauthor_edges;
                    cfg.corresponding_authors = corresponding;
                    cfg.features = columns;
                    cfg.selection = selection.mode;
                    cfg.max_p = selection.max_p;
                    cfg.lowess_frac = smoothing.lowess_frac;
                    cfg.lowess_iters = smoothing.lowess_iters;
                    cfg.out_dir = Some(out.clone());
                    run_pipeline_artifacts(&cfg)?
                }
            };
            let r = &a.report;
            println!(
                "full model AIC {:.3}; best {} (AIC {:.3}); report in {}",
                r.full_model.aic,
                r.selection.best_model_id,
                r.optimized_model.aic,
                out.join("report.json").display()
            );
            if let Some(c) = &r.communities {
                println!(
                    "{} communities (modularity {:.4})",
                    c.best.n_communities, c.best.modularity
                );
            }
        }
    }
    Ok(())
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("STRAT_THREADS") else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "STRAT_THREADS must be a positive integer, got {raw:?}"
            )))
            .at(Stage::Config)
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))
        .at(Stage::Config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("stratlogit: error: {e}");
            if e.partial {
                eprintln!("stratlogit: earlier stages completed; see partial_report.json if --out was given");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
