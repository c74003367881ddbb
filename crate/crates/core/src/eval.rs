//! Leave-one-subject-out evaluation, pooled metrics and the ablation table.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Dataset, PreparedSample};
use crate::me::TemporalWeighting;
use crate::model::{predict, train, Arm, FusionMechanism, Model, ModelConfig, TrainState};
use crate::Error;

/// `m[i][j]` counts samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: alloc::vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self, Error> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Data("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, Error> {
        let mut cm = Self::new(classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), Error> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::Data(format!("class pair ({}, {}) outside {} classes", truth, pred, self.classes)));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.classes..(i + 1) * self.classes]
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), Error> {
        if other.classes != self.classes {
            return Err(Error::Data("cannot merge confusion matrices of different sizes".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub uf1: f64,
    pub uar: f64,
}

/// Accuracy, unweighted F1 and unweighted average recall. Classes whose
/// recall or F1 has a zero denominator contribute zero.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, Error> {
    let total = cm.total();
    if total == 0 || cm.classes == 0 {
        return Err(Error::Data("metrics of an empty confusion matrix".into()));
    }
    let c = cm.classes;
    let mut trace = 0;
    let (mut f1_sum, mut rec_sum) = (0.0, 0.0);
    for i in 0..c {
        let tp = cm.get(i, i);
        trace += tp;
        let row: u64 = cm.row(i).iter().sum();
        let col: u64 = (0..c).map(|r| cm.get(r, i)).sum();
        let recall = if row == 0 { 0.0 } else { tp as f64 / row as f64 };
        let precision = if col == 0 { 0.0 } else { tp as f64 / col as f64 };
        rec_sum += recall;
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(Metrics {
        acc: trace as f64 / total as f64,
        uf1: f1_sum / c as f64,
        uar: rec_sum / c as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_subject: String,
    pub train_subjects: Vec<String>,
    /// Indices into the dataset.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per subject, ordered by subject id.
pub fn loso_folds(dataset: &Dataset) -> Result<Vec<Fold>, Error> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least two subjects, found {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .iter()
        .map(|s| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| &dataset.samples[i].subject_id == s);
            Fold {
                test_subject: s.clone(),
                train_subjects: subjects.iter().filter(|o| *o != s).cloned().collect(),
                train,
                test,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub subject_id: String,
    pub truth: usize,
    pub pred: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub subject: String,
    pub predictions: Vec<SamplePrediction>,
    pub loss_log: Vec<f64>,
}

impl FoldResult {
    pub fn confusion(&self, classes: usize) -> Result<ConfusionMatrix, Error> {
        ConfusionMatrix::from_pairs(classes, self.predictions.iter().map(|p| (p.truth, p.pred)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldResult>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub config: ModelConfig,
    pub seed: u64,
}

impl EvalReport {
    pub fn predictions(&self) -> impl Iterator<Item = &SamplePrediction> {
        self.folds.iter().flat_map(|f| f.predictions.iter())
    }
}

/// Pools fold predictions (already in fold order) into one report.
pub fn assemble_report(classes: usize, config: &ModelConfig, folds: Vec<FoldResult>) -> Result<EvalReport, Error> {
    let mut confusion = ConfusionMatrix::new(classes);
    for f in &folds {
        confusion.merge(&f.confusion(classes)?)?;
    }
    let metrics = metrics(&confusion)?;
    Ok(EvalReport {
        folds,
        confusion,
        metrics,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Trains a fresh model on the fold's training subjects and predicts the
/// held-out one.
pub fn run_fold(dataset: &Dataset, config: &ModelConfig, fold: &Fold) -> Result<FoldResult, Error> {
    let annotate = |e: Error| Error::Fold {
        subject: fold.test_subject.clone(),
        source: alloc::boxed::Box::new(e),
    };
    let cfg = ModelConfig {
        num_classes: dataset.num_classes,
        ..config.clone()
    };
    let model = Model::new(cfg).map_err(annotate)?;
    let train_set: Vec<&PreparedSample> = fold.train.iter().map(|&i| &dataset.samples[i]).collect();
    let mut state = TrainState::new(&model).map_err(annotate)?;
    let loss_log = train(&model, &mut state, &train_set).map_err(annotate)?;
    let mut predictions = Vec::with_capacity(fold.test.len());
    for &i in &fold.test {
        let s = &dataset.samples[i];
        let p = predict(&model, &state.params, s).map_err(annotate)?;
        predictions.push(SamplePrediction {
            sample_id: s.sample_id.clone(),
            subject_id: s.subject_id.clone(),
            truth: s.label,
            pred: p.class,
            probs: p.probs,
        });
    }
    Ok(FoldResult {
        subject: fold.test_subject.clone(),
        predictions,
        loss_log,
    })
}

/// LOSO with a caller-supplied fold runner, used for parallel execution and
/// for test hooks.
pub fn run_loso_with<F>(dataset: &Dataset, config: &ModelConfig, mut run: F) -> Result<EvalReport, Error>
where
    F: FnMut(&Fold) -> Result<FoldResult, Error>,
{
    let folds = loso_folds(dataset)?;
    let results = folds.iter().map(&mut run).collect::<Result<Vec<_>, _>>()?;
    assemble_report(dataset.num_classes, config, results)
}

pub fn run_loso(dataset: &Dataset, config: &ModelConfig) -> Result<EvalReport, Error> {
    run_loso_with(dataset, config, |f| run_fold(dataset, config, f))
}

/// Label printed next to the published figures, which need the original
/// recordings.
pub const REFERENCE_NOTE: &str = "not reproducible without CAS(ME)^3";

/// Published colour+PS figures: accuracy, UF1, UAR.
pub const REFERENCE_COLOUR_PS: Metrics = Metrics {
    acc: 0.750,
    uf1: 0.642,
    uar: 0.578,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGroup {
    Modality,
    Weighting,
    Fusion,
}

impl AblationGroup {
    pub fn name(self) -> &'static str {
        match self {
            AblationGroup::Modality => "modality",
            AblationGroup::Weighting => "weighting",
            AblationGroup::Fusion => "fusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub group: AblationGroup,
    pub label: String,
    pub config: ModelConfig,
}

/// The eight rows: four modality arms, uniform vs Gaussian weighting on the
/// colour arm, and concatenation vs guided attention on the full arm. All
/// share `base.seed`.
pub fn ablation_specs(base: &ModelConfig) -> Vec<AblationSpec> {
    let with = |arm: Arm, weighting: TemporalWeighting, fusion: FusionMechanism| ModelConfig {
        arm,
        weighting,
        fusion,
        ..base.clone()
    };
    let mut out = Vec::with_capacity(8);
    for arm in Arm::ALL {
        out.push(AblationSpec {
            group: AblationGroup::Modality,
            label: arm.name().into(),
            config: with(arm, base.weighting, base.fusion),
        });
    }
    for w in [TemporalWeighting::Uniform, TemporalWeighting::Gaussian] {
        out.push(AblationSpec {
            group: AblationGroup::Weighting,
            label: format!("colour/{}", w.name()),
            config: with(Arm::Colour, w, base.fusion),
        });
    }
    for f in [FusionMechanism::Concat, FusionMechanism::Guided] {
        out.push(AblationSpec {
            group: AblationGroup::Fusion,
            label: format!("colour+depth+ps/{}", f.name()),
            config: with(Arm::ColourDepthPs, base.weighting, f),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub spec: AblationSpec,
    pub report: EvalReport,
}

/// Runs every ablation row, evaluating each distinct configuration once.
pub fn run_ablations_with<F>(base: &ModelConfig, mut run: F) -> Result<Vec<AblationRow>, Error>
where
    F: FnMut(&ModelConfig) -> Result<EvalReport, Error>,
{
    let specs = ablation_specs(base);
    let mut done: Vec<(ModelConfig, EvalReport)> = Vec::new();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let report = match done.iter().find(|(c, _)| *c == spec.config) {
            Some((_, r)) => r.clone(),
            None => {
                let r = run(&spec.config)?;
                done.push((spec.config.clone(), r.clone()));
                r
            }
        };
        rows.push(AblationRow { spec, report });
    }
    Ok(rows)
}

pub fn run_ablations(dataset: &Dataset, base: &ModelConfig) -> Result<Vec<AblationRow>, Error> {
    run_ablations_with(base, |cfg| run_loso(dataset, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameStack;
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn hand_cases() {
        let m = metrics(&ConfusionMatrix::from_rows(&[&[5, 0, 0], &[0, 2, 0], &[0, 0, 7]]).unwrap()).unwrap();
        assert_eq!((m.acc, m.uf1, m.uar), (1.0, 1.0, 1.0));
        let m = metrics(&ConfusionMatrix::from_rows(&[&[2, 1], &[1, 2]]).unwrap()).unwrap();
        assert!(close(m.acc, 0.6667) && close(m.uf1, 0.6667) && close(m.uar, 0.6667));
        let m = metrics(&ConfusionMatrix::from_rows(&[&[3, 0], &[3, 0]]).unwrap()).unwrap();
        assert!(close(m.acc, 0.5) && close(m.uf1, 0.3333) && close(m.uar, 0.5));
        assert!(metrics(&ConfusionMatrix::new(3)).is_err());
        // absent class contributes zero recall
        let m = metrics(&ConfusionMatrix::from_rows(&[&[2, 0], &[0, 0]]).unwrap()).unwrap();
        assert_eq!((m.acc, m.uar, m.uf1), (1.0, 0.5, 0.5));
    }

    #[test]
    fn metric_bounds_and_exact_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let pairs: Vec<(usize, usize)> = (0..rng.random_range(1..40)).map(|_| (rng.random_range(0..c), rng.random_range(0..c))).collect();
            let cm = ConfusionMatrix::from_pairs(c, pairs.iter().copied()).unwrap();
            let m = metrics(&cm).unwrap();
            for v in [m.acc, m.uf1, m.uar] {
                assert!((0.0..=1.0).contains(&v));
            }
            let trace: u64 = (0..c).map(|i| cm.get(i, i)).sum();
            assert_eq!(m.acc, trace as f64 / pairs.len() as f64);
        }
    }

    fn dataset(subjects: &[&str], per: usize) -> Dataset {
        let mut samples = Vec::new();
        for s in subjects {
            for i in 0..per {
                samples.push(PreparedSample {
                    sample_id: format!("{}_{}", s, i),
                    subject_id: (*s).into(),
                    label: i % 3,
                    frames: FrameStack::new(Tensor::zeros(&[1, 3, 2, 2]), Tensor::zeros(&[1, 1, 2, 2])).unwrap(),
                    ps: Tensor::zeros(&[3, 4]),
                });
            }
        }
        Dataset::new(samples, 3).unwrap()
    }

    #[test]
    fn folds_partition_subjects() {
        let ds = dataset(&["s2", "s1", "s3"], 4);
        let folds = loso_folds(&ds).unwrap();
        assert_eq!(folds.iter().map(|f| f.test_subject.as_str()).collect::<Vec<_>>(), vec!["s1", "s2", "s3"]);
        let mut seen = vec![0; ds.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
                assert_eq!(ds.samples[i].subject_id, f.test_subject);
            }
            for &i in &f.train {
                assert_ne!(ds.samples[i].subject_id, f.test_subject);
            }
            assert!(!f.train_subjects.contains(&f.test_subject));
            assert_eq!(f.train.len() + f.test.len(), ds.len());
        }
        assert!(seen.iter().all(|&n| n == 1));
        assert!(loso_folds(&dataset(&["only"], 3)).is_err());
    }

    #[test]
    fn oracle_runner_scores_perfectly_and_pools_folds() {
        let ds = dataset(&["a", "b", "c", "d"], 5);
        let cfg = ModelConfig::default();
        let oracle = |f: &Fold| {
            Ok(FoldResult {
                subject: f.test_subject.clone(),
                predictions: f
                    .test
                    .iter()
                    .map(|&i| {
                        let s = &ds.samples[i];
                        let mut probs = vec![0.0; 3];
                        probs[s.label] = 1.0;
                        SamplePrediction {
                            sample_id: s.sample_id.clone(),
                            subject_id: s.subject_id.clone(),
                            truth: s.label,
                            pred: s.label,
                            probs,
                        }
                    })
                    .collect(),
                loss_log: vec![],
            })
        };
        let r = run_loso_with(&ds, &cfg, oracle).unwrap();
        assert_eq!((r.metrics.acc, r.metrics.uf1, r.metrics.uar), (1.0, 1.0, 1.0));
        assert_eq!(r.folds.len(), 4);
        let mut sum = ConfusionMatrix::new(3);
        for f in &r.folds {
            sum.merge(&f.confusion(3).unwrap()).unwrap();
        }
        assert_eq!(sum, r.confusion);

        let failing = |f: &Fold| -> Result<FoldResult, Error> {
            Err(Error::Fold {
                subject: f.test_subject.clone(),
                source: alloc::boxed::Box::new(Error::Data("boom".into())),
            })
        };
        assert!(matches!(run_loso_with(&ds, &cfg, failing), Err(Error::Fold { .. })));
    }

    #[test]
    fn ablation_table_has_eight_rows_sharing_a_seed() {
        let base = ModelConfig {
            seed: 77,
            ..ModelConfig::default()
        };
        let specs = ablation_specs(&base);
        assert_eq!(specs.len(), 8);
        assert!(specs.iter().all(|s| s.config.seed == 77));
        let mut calls = 0;
        let ds = dataset(&["a", "b"], 3);
        let rows = run_ablations_with(&base, |cfg| {
            calls += 1;
            run_loso_with(&ds, cfg, |f| {
                Ok(FoldResult {
                    subject: f.test_subject.clone(),
                    predictions: f
                        .test
                        .iter()
                        .map(|&i| SamplePrediction {
                            sample_id: ds.samples[i].sample_id.clone(),
                            subject_id: f.test_subject.clone(),
                            truth: ds.samples[i].label,
                            pred: 0,
                            probs: vec![1.0, 0.0, 0.0],
                        })
                        .collect(),
                    loss_log: vec![],
                })
            })
        })
        .unwrap();
        assert_eq!(rows.len(), 8);
        // the Gaussian colour row and the guided full row repeat earlier arms
        assert_eq!(calls, 6);
        assert_eq!(rows[5].report, rows[0].report);
        assert_eq!(rows[7].report, rows[2].report);
    }
}
