//! Fold execution, the four-variant ablation grid and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{Dataset, Fold, FoldPlan};
use crate::error::{Error, Result};
use crate::losses::ErrorMeasure;
use crate::metrics::clustering_accuracy;
use crate::model::Model;
use crate::selfexpr::Regularizer;
use crate::train::{train_pipeline, Stage, TrainLog};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub measure: ErrorMeasure,
    pub regularizer: Regularizer,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant { measure: ErrorMeasure::Cim, regularizer: Regularizer::Bd },
        AblationVariant { measure: ErrorMeasure::Cim, regularizer: Regularizer::L2 },
        AblationVariant { measure: ErrorMeasure::Mse, regularizer: Regularizer::Bd },
        AblationVariant { measure: ErrorMeasure::Mse, regularizer: Regularizer::L2 },
    ];

    pub fn of(cfg: &ExperimentConfig) -> Self {
        AblationVariant {
            measure: cfg.objective.measure,
            regularizer: cfg.objective.regularizer,
        }
    }

    /// `cfg` with this variant's objective.
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        out.objective.measure = self.measure;
        out.objective.regularizer = self.regularizer;
        out
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}", self.measure, self.regularizer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

/// One row of `results.csv`. A failed fold has no accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub variant: String,
    pub fold: usize,
    pub split: Split,
    pub accuracy: Option<f64>,
    pub epochs_run: usize,
    pub wall_seconds: f64,
}

/// Outcome of one fold: the two records plus the trained model and log
/// when training succeeded.
pub struct FoldRun<T> {
    pub seen: ResultRecord,
    pub unseen: ResultRecord,
    pub model: Option<Model<T>>,
    pub log: TrainLog,
    pub error: Option<Error>,
}

/// Trains on the fold's training split, reports pseudo-label accuracy there
/// and head accuracy on the test split. Training errors become failed
/// records instead of aborting.
pub fn run_fold<T: Scalar>(
    dataset: &Dataset<T>,
    fold: &Fold,
    fold_id: usize,
    variant: AblationVariant,
    cfg: &ExperimentConfig,
) -> FoldRun<T> {
    let start = Instant::now();
    let cfg = variant.apply(cfg);
    let train = dataset.subset(&fold.train);
    let test = dataset.subset(&fold.test);
    let mut log = TrainLog::new();
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold_id as u64));
        let mut model = Model::new(&cfg.architecture, &train.samples.shape()[1..], train.k, &mut rng)?;
        let state = train_pipeline(&mut model, train.unlabeled(), &cfg, &mut log)?;
        let seen = clustering_accuracy(&state.labels, &train.labels, train.k)?;
        let unseen = if test.is_empty() {
            None
        } else {
            Some(clustering_accuracy(&model.predict_unseen(&test.samples)?, &test.labels, test.k)?)
        };
        Ok::<_, Error>((model, seen, unseen))
    })();
    let wall = if cfg.report.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
    let record = |split, accuracy| ResultRecord {
        dataset: cfg.name.clone(),
        variant: variant.to_string(),
        fold: fold_id,
        split,
        accuracy,
        epochs_run: log.epochs_run(Stage::Full),
        wall_seconds: wall,
    };
    match outcome {
        Ok((model, seen, unseen)) => FoldRun {
            seen: record(Split::Seen, Some(seen)),
            unseen: record(Split::Unseen, unseen),
            model: Some(model),
            log,
            error: None,
        },
        Err(e) => {
            log::warn!("{} {variant} fold {fold_id} failed: {e}", cfg.name);
            FoldRun {
                seen: record(Split::Seen, None),
                unseen: record(Split::Unseen, None),
                model: None,
                log,
                error: Some(e),
            }
        }
    }
}

/// Runs every variant on every fold with up to `workers` folds in flight.
/// Records come back sorted by variant order, fold and split, so the output
/// does not depend on scheduling.
pub fn run_grid<T: Scalar>(
    dataset: &Dataset<T>,
    plan: &FoldPlan,
    variants: &[AblationVariant],
    cfg: &ExperimentConfig,
    workers: usize,
) -> Vec<ResultRecord> {
    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..plan.folds.len()).map(move |f| (v, f)))
        .collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(v, f)) = jobs.get(i) else { break };
                let run = run_fold(dataset, &plan.folds[f], f, variants[v], cfg);
                results.lock().expect("no poisoned workers").push((i, run.seen, run.unseen));
            });
        }
    });
    let mut results = results.into_inner().expect("no poisoned workers");
    results.sort_by_key(|r| r.0);
    results.into_iter().flat_map(|(_, a, b)| [a, b]).collect()
}

pub fn write_results_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data { path: path.into(), message: e.to_string() })?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Data { path: path.into(), message: e.to_string() })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data { path: path.into(), message: e.to_string() })?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data { path: path.into(), message: e.to_string() }))
        .collect()
}

/// Sample mean and standard deviation with the `N - 1` denominator; the
/// deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn variant_rank(name: &str) -> usize {
    AblationVariant::ALL
        .iter()
        .position(|v| v.to_string() == name)
        .unwrap_or(AblationVariant::ALL.len())
}

/// Markdown summary: one table per dataset, one row per variant and split.
pub fn report_markdown(records: &[ResultRecord]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut out = String::from("# Results\n\n");
    out.push_str("Clustering accuracy per variant across folds. Std is the sample standard deviation (N-1 denominator). ");
    out.push_str("Seen is pseudo-label accuracy on the training split; unseen is classifier accuracy on held-out samples.\n");
    let mut single = false;
    for ds in datasets {
        let mut groups: BTreeMap<(usize, String, Split), Vec<&ResultRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.dataset == ds) {
            groups.entry((variant_rank(&r.variant), r.variant.clone(), r.split)).or_default().push(r);
        }
        let _ = write!(out, "\n## {ds}\n\n| Variant | Split | Folds | Mean | Std | Failed |\n|---|---|---:|---:|---:|---:|\n");
        for ((_, variant, split), rows) in groups {
            let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
            let failed = rows.len() - acc.len();
            let split = match split {
                Split::Seen => "seen",
                Split::Unseen => "unseen",
            };
            let (mean, std) = match acc.len() {
                0 => ("n/a".to_string(), "n/a".to_string()),
                n => {
                    let (m, s) = mean_std(&acc);
                    let mark = if n == 1 { "[^single]" } else { "" };
                    single |= n == 1;
                    (format!("{m:.4}"), format!("{s:.4}{mark}"))
                }
            };
            let _ = writeln!(out, "| {variant} | {split} | {} | {mean} | {std} | {failed} |", acc.len());
        }
    }
    if single {
        out.push_str("\n[^single]: Only one successful fold; standard deviation reported as 0.\n");
    }
    out
}

/// Writes `results.csv` and `report.md` into `dir`.
pub fn emit_report(records: &[ResultRecord], dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no result records to report"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_results_csv(records, &dir.join("results.csv"))?;
    let md = dir.join("report.md");
    std::fs::write(&md, report_markdown(records)).map_err(|e| Error::io(md, e))
}
