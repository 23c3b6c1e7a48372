//! Experiment runner: replicated train/test evaluation of interval methods,
//! with per-observation CSVs, a report table and an aggregate JSON summary.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! report.csv                 one row per method x replicate
//! aggregate.json             per-method means over replicates
//! <method>/<replicate>.csv   one row per test observation
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{self, BootstrapError};
use crate::conformal::{
    AggregatedConformal, ConformalError, ConformalPredictor, ConformityKind, FullConformal, GridSpec,
    PValueConvention, SplitConformal, FULL_GRID_POINTS, INDUCTIVE_GRID_POINTS,
};
use crate::data::{self, DataError, Dataset, TargetColumn};
use crate::evaluation::{
    self, AgrestiCoull, BurdenLedger, ConditionalBinReport, CountingLearner, CoverageSummary, PiOutcome,
    ReplicateAggregate, DEFAULT_ALPHA_TEST,
};
use crate::interval::PredictionInterval;
use crate::learners::{Activation, LearnerKind, LearnerSpec};
use crate::rng;
use crate::synthetic::{GeneratorSpec, SyntheticError};

pub const REPORT_FILE: &str = "report.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const SWEEP_FILE: &str = "sweep.csv";
/// Ledger label for the split-conformal pass that sizes an automatic grid.
pub const AUTO_GRID_LABEL: &str = "auto-grid";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot parse {what}: {source}")]
    Parse { what: String, source: serde_json::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for failures detected before any output is written.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Read { .. }
                | HarnessError::Parse { .. }
                | HarnessError::Data(_)
                | HarnessError::Synthetic(_)
        )
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Error from one method on one replicate. Recorded, not fatal.
#[derive(Debug, Error)]
pub enum MethodError {
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("automatic grid: {0}")]
    AutoGrid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        target_column: TargetColumn,
        #[serde(default = "default_header")]
        header: bool,
    },
    Synthetic(GeneratorSpec),
}

fn default_header() -> bool {
    true
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, HarnessError> {
        Ok(match self {
            DatasetSource::Csv { path, target_column, header } => data::load_csv(path, target_column, *header)?,
            DatasetSource::Synthetic(spec) => spec.generate()?.dataset,
        })
    }

    pub fn label(&self) -> String {
        match self {
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".to_string()),
            DatasetSource::Synthetic(spec) => format!("synthetic-{}", spec.kind.name()),
        }
    }
}

/// One interval method and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    PivotBootstrap {
        resamples: usize,
    },
    PercentileBootstrap {
        resamples: usize,
    },
    SplitConformal {
        #[serde(default)]
        conformity: ConformityKind,
    },
    CrossConformal {
        folds: usize,
        #[serde(default)]
        conformity: ConformityKind,
    },
    BootstrapConformal {
        resamples: usize,
        #[serde(default)]
        conformity: ConformityKind,
    },
    FullConformal {
        #[serde(default)]
        conformity: ConformityKind,
    },
}

impl MethodSpec {
    /// Directory-safe label, unique per parameter setting.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::PivotBootstrap { resamples } => format!("pivot-bootstrap-b{resamples}"),
            MethodSpec::PercentileBootstrap { resamples } => format!("percentile-bootstrap-b{resamples}"),
            MethodSpec::SplitConformal { conformity } => format!("split-conformal-{}", conformity.short_name()),
            MethodSpec::CrossConformal { folds, conformity } => {
                format!("cross-conformal-k{folds}-{}", conformity.short_name())
            }
            MethodSpec::BootstrapConformal { resamples, conformity } => {
                format!("bootstrap-conformal-b{resamples}-{}", conformity.short_name())
            }
            MethodSpec::FullConformal { conformity } => format!("full-conformal-{}", conformity.short_name()),
        }
    }

    pub fn uses_grid(&self) -> bool {
        !matches!(self, MethodSpec::PivotBootstrap { .. } | MethodSpec::PercentileBootstrap { .. })
    }

    pub fn default_grid_points(&self) -> usize {
        match self {
            MethodSpec::FullConformal { .. } => FULL_GRID_POINTS,
            _ => INDUCTIVE_GRID_POINTS,
        }
    }

    /// Learner fits needed for one replicate with `test_points` test rows
    /// and `grid_points` candidates per full-conformal interval.
    pub fn expected_trainings(&self, grid_points: usize, test_points: usize) -> u64 {
        match self {
            MethodSpec::PivotBootstrap { resamples }
            | MethodSpec::PercentileBootstrap { resamples }
            | MethodSpec::BootstrapConformal { resamples, .. } => *resamples as u64,
            MethodSpec::SplitConformal { .. } => 1,
            MethodSpec::CrossConformal { folds, .. } => *folds as u64,
            MethodSpec::FullConformal { .. } => 1 + (grid_points * test_points) as u64,
        }
    }

    fn check(&self, train_rows: usize) -> Result<(), HarnessError> {
        let label = self.label();
        match *self {
            MethodSpec::PivotBootstrap { resamples } | MethodSpec::BootstrapConformal { resamples, .. }
                if resamples < 2 =>
            {
                Err(invalid(format!("{label}: need at least 2 resamples")))
            }
            MethodSpec::PercentileBootstrap { resamples } if resamples < bootstrap::PERCENTILE_MIN_B => Err(
                invalid(format!("{label}: need at least {} resamples", bootstrap::PERCENTILE_MIN_B)),
            ),
            MethodSpec::PercentileBootstrap { resamples } => {
                if resamples < bootstrap::PERCENTILE_RECOMMENDED_B {
                    log::warn!(
                        "{label}: fewer than {} resamples; tail quantiles will be noisy",
                        bootstrap::PERCENTILE_RECOMMENDED_B
                    );
                }
                Ok(())
            }
            MethodSpec::CrossConformal { folds, .. } if folds < 2 || folds > train_rows / 2 => Err(invalid(
                format!("{label}: folds must lie in [2, {}] for {train_rows} training rows", train_rows / 2),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HalfWidth {
    Fixed(f64),
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl Default for HalfWidth {
    fn default() -> Self {
        HalfWidth::Auto(AutoKeyword::Auto)
    }
}

/// Candidate grid. `points` overrides the per-method default; an `"auto"`
/// half-width is the mean split-conformal width on the replicate's
/// training set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub half_width: HalfWidth,
}

impl GridConfig {
    pub fn points_for(&self, method: &MethodSpec) -> usize {
        self.points.unwrap_or_else(|| method.default_grid_points())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConditionalKey {
    /// The method's point prediction.
    Prediction,
    Feature(usize),
}

/// Coverage broken down by bins of a feature or of the prediction.
/// Exactly one of `edges` and `categories` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalSpec {
    pub key: ConditionalKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub learner: LearnerSpec,
    pub methods: Vec<MethodSpec>,
    pub alpha: f64,
    pub test_count: usize,
    pub replicates: usize,
    #[serde(default)]
    pub grid: GridConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional: Option<ConditionalSpec>,
    /// Counting rule for conformal p-values; strict unless set.
    #[serde(default)]
    pub p_value_convention: PValueConvention,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|source| HarnessError::Parse { what: "config".into(), source })
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| HarnessError::Parse { what: path.display().to_string(), source })
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(invalid("no methods configured"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be positive"));
        }
        if self.test_count == 0 {
            return Err(invalid("test_count must be positive"));
        }
        self.learner.validate().map_err(|e| invalid(format!("learner: {e}")))?;
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("method {} configured twice", w[0])));
        }
        if let Some(points) = self.grid.points {
            if points < 2 {
                return Err(invalid("grid.points must be at least 2"));
            }
        }
        if let HalfWidth::Fixed(w) = self.grid.half_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(invalid(format!("grid.half_width must be positive, got {w}")));
            }
        }
        if let Some(c) = &self.conditional {
            match (&c.edges, &c.categories) {
                (Some(edges), None) => {
                    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(invalid("conditional.edges must be finite and increasing"));
                    }
                }
                (None, Some(_)) => {}
                _ => return Err(invalid("conditional needs exactly one of edges and categories")),
            }
        }
        Ok(())
    }
}

/// How each replicate picks its test rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// `test_count` rows drawn afresh per replicate.
    Random,
    /// Replicate `r` tests on fold `r` of a single `k`-fold assignment; the
    /// replicate count becomes `k`.
    KFold(usize),
}

/// A validated config with its data loaded. Nothing has been written yet.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub dataset_label: String,
    pub partition: Partition,
}

pub fn prepare(config: ExperimentConfig, partition: Partition) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let data = config.dataset.load()?;
    let n = data.n_rows();
    let train_rows = match partition {
        Partition::Random => {
            if config.test_count + 4 > n {
                return Err(invalid(format!(
                    "test_count {} leaves fewer than 4 training rows out of {n}",
                    config.test_count
                )));
            }
            n - config.test_count
        }
        Partition::KFold(k) => {
            if k < 2 || n < 2 * k {
                return Err(invalid(format!("{k}-fold partition needs k >= 2 and at least {} rows", 2 * k)));
            }
            n - n.div_ceil(k)
        }
    };
    for m in &config.methods {
        m.check(train_rows)?;
    }
    if let Some(ConditionalSpec { key: ConditionalKey::Feature(j), .. }) = &config.conditional {
        if *j >= data.n_features() {
            return Err(invalid(format!("conditional feature {j} out of range for {} features", data.n_features())));
        }
    }
    Ok(Prepared { dataset_label: config.dataset.label(), config, data, partition })
}

/// One test observation scored by one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub test_row: usize,
    pub prediction: f64,
    pub outcome: PiOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub replicate: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub se_coverage: f64,
    pub se_width: f64,
    pub trainings: u64,
    pub empty_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub spec: MethodSpec,
    pub completed_replicates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ReplicateAggregate>,
    /// Root mean squared error of the point predictions over all test rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    /// Agresti–Coull test at the nominal level `1 - alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<AgrestiCoull>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional: Option<ConditionalBinReport>,
    /// Fits per replicate, failed replicates included.
    pub trainings: Vec<u64>,
    pub total_trainings: u64,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub learner: LearnerSpec,
    pub alpha: f64,
    pub seed: u64,
    pub replicates: usize,
    pub auto_grid_trainings: u64,
    pub methods: Vec<MethodAggregate>,
}

impl AggregateReport {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| HarnessError::Parse { what: path.display().to_string(), source })
    }

    pub fn methods_without_results(&self) -> Vec<&str> {
        self.methods.iter().filter(|m| m.completed_replicates == 0).map(|m| m.method.as_str()).collect()
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: AggregateReport,
    pub observations: Vec<Vec<Option<Vec<Observation>>>>,
}

struct ReplicateSplit {
    train: Dataset,
    test_rows: Vec<usize>,
}

fn replicate_splits(p: &Prepared) -> Result<Vec<ReplicateSplit>, DataError> {
    let cfg = &p.config;
    match p.partition {
        Partition::Random => (0..cfg.replicates)
            .map(|r| {
                let seed = rng::substream_seed(rng::substream_seed(cfg.seed, r as u64), 0);
                let idx = data::train_test_indices(p.data.n_rows(), cfg.test_count, seed)?;
                Ok(ReplicateSplit { train: p.data.subset(&idx.train)?, test_rows: idx.test })
            })
            .collect(),
        Partition::KFold(k) => {
            let folds = data::kfold_split(p.data.n_rows(), k, rng::substream_seed(cfg.seed, u64::MAX))?;
            (0..k)
                .map(|f| Ok(ReplicateSplit { train: p.data.subset(&folds.complement(f))?, test_rows: folds.fold(f) }))
                .collect()
        }
    }
}

/// Mean split-conformal width `2 s*` with absolute-residual scores, where
/// `s*` is the smallest calibration score still rejected at level `alpha`.
pub fn auto_half_width(
    learner: &dyn crate::learners::Learner,
    train: &Dataset,
    alpha: f64,
    seed: u64,
) -> Result<f64, MethodError> {
    let split = SplitConformal::calibrate(learner, train, &ConformityKind::AbsoluteResidual, seed)?;
    let scores = split.calibration_scores();
    let l = scores.len();
    let k = (alpha * (l + 1) as f64 - 1e-9).ceil().max(1.0) as usize;
    if k > l {
        return Err(MethodError::AutoGrid(format!("alpha {alpha} rejects every candidate with {l} calibration rows")));
    }
    let width = 2.0 * scores[l - k];
    if !(width.is_finite() && width > 0.0) {
        return Err(MethodError::AutoGrid(format!("degenerate split width {width}")));
    }
    Ok(width)
}

fn conformal_observations(
    predictor: &dyn ConformalPredictor,
    data: &Dataset,
    test_rows: &[usize],
    grid: &GridSpec,
    alpha: f64,
) -> Result<Vec<Observation>, MethodError> {
    test_rows
        .par_iter()
        .map(|&i| {
            let x = data.row(i);
            let (interval, _) = predictor.interval(x, grid, alpha)?;
            Ok(Observation {
                test_row: i,
                prediction: predictor.center(x)?,
                outcome: PiOutcome::new(interval, data.target(i)),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    method: &MethodSpec,
    learner: &dyn crate::learners::Learner,
    data: &Dataset,
    train: &Dataset,
    test_rows: &[usize],
    alpha: f64,
    grid: Option<GridSpec>,
    convention: PValueConvention,
    seed: u64,
) -> Result<Vec<Observation>, MethodError> {
    let grid = || grid.expect("conformal methods receive a grid");
    match method {
        MethodSpec::PivotBootstrap { resamples } => {
            let ens = bootstrap::train_ensemble(learner, train, *resamples, seed)?;
            test_rows
                .par_iter()
                .map(|&i| {
                    let (interval, c) = ens.pivot_pi(data.row(i), alpha)?;
                    Ok(Observation {
                        test_row: i,
                        prediction: c.bagged_prediction,
                        outcome: PiOutcome::new(interval, data.target(i)),
                    })
                })
                .collect()
        }
        MethodSpec::PercentileBootstrap { resamples } => {
            let ens = bootstrap::train_ensemble(learner, train, *resamples, rng::substream_seed(seed, 0))?;
            let draws = rng::substream_seed(seed, 1);
            test_rows
                .par_iter()
                .enumerate()
                .map(|(t, &i)| {
                    let x = data.row(i);
                    let (interval, _) = ens.percentile_pi(x, alpha, rng::substream_seed(draws, t as u64))?;
                    Ok(Observation {
                        test_row: i,
                        prediction: ens.bagged_prediction(x)?,
                        outcome: PiOutcome::new(interval, data.target(i)),
                    })
                })
                .collect()
        }
        MethodSpec::SplitConformal { conformity } => {
            let p = SplitConformal::calibrate(learner, train, conformity, seed)?.with_convention(convention);
            conformal_observations(&p, data, test_rows, &grid(), alpha)
        }
        MethodSpec::CrossConformal { folds, conformity } => {
            let p = AggregatedConformal::cross(learner, train, *folds, conformity, seed)?.with_convention(convention);
            conformal_observations(&p, data, test_rows, &grid(), alpha)
        }
        MethodSpec::BootstrapConformal { resamples, conformity } => {
            let p = AggregatedConformal::bootstrap(learner, train, *resamples, conformity, seed)?
                .with_convention(convention);
            conformal_observations(&p, data, test_rows, &grid(), alpha)
        }
        MethodSpec::FullConformal { conformity } => {
            let p = FullConformal::new(learner, train, conformity.clone(), seed)?.with_convention(convention);
            let grid = grid();
            // candidates are already refitted in parallel
            test_rows
                .iter()
                .map(|&i| {
                    let x = data.row(i);
                    let (interval, _) = p.interval(x, &grid, alpha)?;
                    Ok(Observation {
                        test_row: i,
                        prediction: p.center(x)?,
                        outcome: PiOutcome::new(interval, data.target(i)),
                    })
                })
                .collect()
        }
    }
}

/// Runs every method on every replicate and writes all outputs.
pub fn execute(p: &Prepared) -> Result<ExperimentReport, HarnessError> {
    let cfg = &p.config;
    let splits = replicate_splits(p)?;
    let ledger = BurdenLedger::new();
    let labels: Vec<String> = cfg.methods.iter().map(MethodSpec::label).collect();
    // observations[method][replicate]
    let mut observations: Vec<Vec<Option<Vec<Observation>>>> = vec![Vec::new(); cfg.methods.len()];
    let mut trainings: Vec<Vec<u64>> = vec![Vec::new(); cfg.methods.len()];
    let mut failures: Vec<Vec<Failure>> = vec![Vec::new(); cfg.methods.len()];

    for (r, split) in splits.iter().enumerate() {
        let replicate_seed = rng::substream_seed(cfg.seed, r as u64);
        let half_width = match cfg.grid.half_width {
            HalfWidth::Fixed(w) => Ok(w),
            HalfWidth::Auto(_) if cfg.methods.iter().any(MethodSpec::uses_grid) => {
                let counter = CountingLearner::new(&cfg.learner);
                let w = auto_half_width(&counter, &split.train, cfg.alpha, rng::substream_seed(replicate_seed, 1));
                ledger.charge(AUTO_GRID_LABEL, counter.fits());
                w.map_err(|e| e.to_string())
            }
            HalfWidth::Auto(_) => Err(String::new()),
        };
        for (m, method) in cfg.methods.iter().enumerate() {
            let seed = rng::substream_seed(replicate_seed, 2 + m as u64);
            let counter = CountingLearner::new(&cfg.learner);
            let result = if method.uses_grid() {
                match &half_width {
                    Ok(w) => {
                        let grid = GridSpec { half_width: *w, points: cfg.grid.points_for(method) };
                        run_method(method, &counter, &p.data, &split.train, &split.test_rows, cfg.alpha, Some(grid), cfg.p_value_convention, seed)
                    }
                    Err(e) => Err(MethodError::AutoGrid(e.clone())),
                }
            } else {
                run_method(method, &counter, &p.data, &split.train, &split.test_rows, cfg.alpha, None, cfg.p_value_convention, seed)
            };
            ledger.charge(&labels[m], counter.fits());
            trainings[m].push(counter.fits());
            match result {
                Ok(obs) => observations[m].push(Some(obs)),
                Err(e) => {
                    log::warn!("{} replicate {r}: {e}", labels[m]);
                    failures[m].push(Failure { replicate: r, error: e.to_string() });
                    observations[m].push(None);
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for (m, method) in cfg.methods.iter().enumerate() {
        let mut summaries: Vec<CoverageSummary> = Vec::new();
        for (r, obs) in observations[m].iter().enumerate() {
            let Some(obs) = obs else { continue };
            let outcomes: Vec<PiOutcome> = obs.iter().map(|o| o.outcome.clone()).collect();
            let Ok(s) = evaluation::coverage_and_width(&outcomes) else { continue };
            rows.push(ReportRow {
                method: labels[m].clone(),
                dataset: p.dataset_label.clone(),
                replicate: r,
                coverage: s.coverage,
                mean_width: s.mean_width,
                se_coverage: s.se_coverage,
                se_width: s.se_width,
                trainings: trainings[m][r],
                empty_count: s.empty_count,
            });
            summaries.push(s);
        }
        let summary = evaluation::aggregate_replicates(&summaries).ok();
        let pooled: Vec<&Observation> = observations[m].iter().flatten().flatten().collect();
        let rmse = (!pooled.is_empty()).then(|| {
            let sse: f64 = pooled.iter().map(|o| (o.outcome.true_target - o.prediction).powi(2)).sum();
            (sse / pooled.len() as f64).sqrt()
        });
        let validity = summary.and_then(|s| {
            evaluation::agresti_coull_valid(
                s.total_hits as u64,
                s.total_points as u64,
                1.0 - cfg.alpha,
                DEFAULT_ALPHA_TEST,
            )
            .ok()
        });
        let conditional = match &cfg.conditional {
            Some(c) if !pooled.is_empty() => Some(conditional_report(c, &p.data, &pooled)),
            _ => None,
        };
        methods.push(MethodAggregate {
            method: labels[m].clone(),
            spec: method.clone(),
            completed_replicates: summaries.len(),
            summary,
            rmse,
            validity,
            conditional,
            total_trainings: ledger.trainings(&labels[m]),
            trainings: std::mem::take(&mut trainings[m]),
            failures: std::mem::take(&mut failures[m]),
        });
    }
    let aggregate = AggregateReport {
        dataset: p.dataset_label.clone(),
        learner: cfg.learner.clone(),
        alpha: cfg.alpha,
        seed: cfg.seed,
        replicates: splits.len(),
        auto_grid_trainings: ledger.trainings(AUTO_GRID_LABEL),
        methods,
    };
    let report = ExperimentReport { rows, aggregate, observations };
    write_outputs(&cfg.output_dir, &labels, &report)?;
    Ok(report)
}

fn conditional_report(c: &ConditionalSpec, data: &Dataset, pooled: &[&Observation]) -> ConditionalBinReport {
    let outcomes: Vec<PiOutcome> = pooled.iter().map(|o| o.outcome.clone()).collect();
    let keys: Vec<f64> = pooled
        .iter()
        .map(|o| match c.key {
            ConditionalKey::Prediction => o.prediction,
            ConditionalKey::Feature(j) => data.row(o.test_row)[j],
        })
        .collect();
    let report = match (&c.edges, &c.categories) {
        (Some(edges), _) => evaluation::binned_coverage(&outcomes, &keys, edges),
        (None, Some(cats)) => {
            let labels: Vec<String> = cats.iter().map(|v| v.to_string()).collect();
            let keys: Vec<String> = keys.iter().map(|v| v.to_string()).collect();
            evaluation::categorical_coverage(&outcomes, &keys, &labels)
        }
        (None, None) => unreachable!("validated"),
    };
    report.expect("keys and edges validated")
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Write { path: path.into(), source })
}

fn bound(v: f64) -> String {
    if v.is_nan() { String::new() } else { v.to_string() }
}

fn write_outputs(dir: &Path, labels: &[String], report: &ExperimentReport) -> Result<(), HarnessError> {
    create_dir(dir)?;
    for (label, per_rep) in labels.iter().zip(&report.observations) {
        let method_dir = dir.join(label);
        create_dir(&method_dir)?;
        for (r, obs) in per_rep.iter().enumerate() {
            let Some(obs) = obs else { continue };
            let mut w = csv::Writer::from_path(method_dir.join(format!("{r}.csv")))?;
            w.write_record(["test_row", "target", "prediction", "lower", "upper", "width", "hit", "empty"])?;
            for o in obs {
                let iv: &PredictionInterval = &o.outcome.interval;
                w.write_record([
                    o.test_row.to_string(),
                    o.outcome.true_target.to_string(),
                    o.prediction.to_string(),
                    bound(iv.lower),
                    bound(iv.upper),
                    o.outcome.width.to_string(),
                    (o.outcome.hit as u8).to_string(),
                    (iv.empty as u8).to_string(),
                ])?;
            }
            w.flush().map_err(|source| HarnessError::Write { path: method_dir.clone(), source })?;
        }
    }
    let mut w = csv::Writer::from_path(dir.join(REPORT_FILE))?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| HarnessError::Write { path: dir.join(REPORT_FILE), source })?;
    let json = serde_json::to_string_pretty(&report.aggregate).expect("report serializes");
    let path = dir.join(AGGREGATE_FILE);
    fs::write(&path, json + "\n").map_err(|source| HarnessError::Write { path, source })
}

pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    execute(&prepare(config, Partition::Random)?)
}

/// Architecture grid for a sweep over MLP designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Base experiment; its learner must be an MLP and supplies the
    /// training settings shared by every design point.
    pub experiment: ExperimentConfig,
    pub activations: Vec<Activation>,
    pub layers: Vec<usize>,
    pub nodes: Vec<usize>,
    /// Replace random test draws with five-fold cross-validation.
    #[serde(default)]
    pub five_fold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub label: String,
    pub activation: Activation,
    pub layers: usize,
    pub nodes: usize,
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.into(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| HarnessError::Parse { what: path.display().to_string(), source })
    }

    pub fn design_points(&self) -> Vec<DesignPoint> {
        let mut out = Vec::new();
        for &activation in &self.activations {
            for &layers in &self.layers {
                for &nodes in &self.nodes {
                    let label = format!("{}-l{layers}-n{nodes}", activation.name());
                    out.push(DesignPoint { label, activation, layers, nodes });
                }
            }
        }
        out
    }

    fn experiment_for(&self, d: &DesignPoint) -> ExperimentConfig {
        let mut cfg = self.experiment.clone();
        if let Some(mlp) = cfg.learner.mlp.as_mut() {
            mlp.activation = d.activation;
            mlp.layers = d.layers;
            mlp.nodes_per_layer = d.nodes;
        }
        cfg.output_dir = self.experiment.output_dir.join(&d.label);
        cfg
    }
}

#[derive(Debug)]
pub struct SweepReport {
    pub designs: Vec<(DesignPoint, ExperimentReport)>,
}

/// One experiment per design point under `output_dir/<design>/`, plus a
/// `sweep.csv` summary. Every design point is validated before any runs.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport, HarnessError> {
    if config.experiment.learner.kind != LearnerKind::Mlp {
        return Err(invalid("sweep needs an mlp learner"));
    }
    let designs = config.design_points();
    if designs.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    let partition = if config.five_fold { Partition::KFold(5) } else { Partition::Random };
    let prepared = designs
        .iter()
        .map(|d| prepare(config.experiment_for(d), partition))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for (d, p) in designs.into_iter().zip(&prepared) {
        log::info!("design {}", d.label);
        out.push((d, execute(p)?));
    }
    let path = config.experiment.output_dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "design", "activation", "layers", "nodes", "method", "coverage", "mean_width", "se_coverage", "se_width",
        "rmse", "trainings",
    ])?;
    for (d, rep) in &out {
        for m in &rep.aggregate.methods {
            let s = m.summary.as_ref();
            let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                d.label.clone(),
                d.activation.name().to_string(),
                d.layers.to_string(),
                d.nodes.to_string(),
                m.method.clone(),
                num(s.map(|s| s.coverage)),
                num(s.map(|s| s.mean_width)),
                num(s.map(|s| s.se_coverage)),
                num(s.map(|s| s.se_width)),
                num(m.rmse),
                m.total_trainings.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|source| HarnessError::Write { path, source })?;
    Ok(SweepReport { designs: out })
}

/// Verdict of the coverage test for one method of a saved report.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub method: String,
    pub hits: usize,
    pub points: usize,
    pub test: Option<AgrestiCoull>,
}

pub fn validate_report(report: &AggregateReport, nominal: f64, alpha_test: f64) -> Result<Vec<Verdict>, HarnessError> {
    if !(nominal > 0.0 && nominal < 1.0) {
        return Err(invalid(format!("nominal must lie in (0, 1), got {nominal}")));
    }
    report
        .methods
        .iter()
        .map(|m| {
            let (hits, points) = m.summary.map(|s| (s.total_hits, s.total_points)).unwrap_or((0, 0));
            let test = if points == 0 {
                None
            } else {
                Some(
                    evaluation::agresti_coull_valid(hits as u64, points as u64, nominal, alpha_test)
                        .map_err(|e| invalid(e.to_string()))?,
                )
            };
            Ok(Verdict { method: m.method.clone(), hits, points, test })
        })
        .collect()
}
