//! Fold-parallel LOSO on a rayon pool.

use psme_core::data::Dataset;
use psme_core::eval::{assemble_report, loso_folds, run_ablations_with, run_fold, AblationRow, EvalReport};
use psme_core::model::ModelConfig;
use rayon::prelude::*;

use crate::IoError;

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool, IoError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| psme_core::Error::Config(format!("thread pool: {}", e)).into())
}

/// Same result as `psme_core::eval::run_loso` for any `jobs`: folds are
/// independent and joined in fold order.
pub fn run_loso_parallel(dataset: &Dataset, config: &ModelConfig, jobs: usize) -> Result<EvalReport, IoError> {
    let folds = loso_folds(dataset)?;
    let results = pool(jobs)?.install(|| folds.par_iter().map(|f| run_fold(dataset, config, f)).collect::<Result<Vec<_>, _>>())?;
    Ok(assemble_report(dataset.num_classes, config, results)?)
}

pub fn run_ablations_parallel(dataset: &Dataset, base: &ModelConfig, jobs: usize) -> Result<Vec<AblationRow>, IoError> {
    let mut failure = None;
    let rows = run_ablations_with(base, |cfg| {
        run_loso_parallel(dataset, cfg, jobs).map_err(|e| match e {
            IoError::Core(c) => c,
            other => {
                let msg = other.to_string();
                failure = Some(other);
                psme_core::Error::Config(msg)
            }
        })
    });
    match (rows, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}
