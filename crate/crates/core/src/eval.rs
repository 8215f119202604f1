//! Leave-one-subject-out evaluation, accuracy and AUC, and category
//! correlation matrices at the voxel and feature level.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureLayout;
use crate::io;
use crate::model::{train_ensemble, EnsembleModel, SvmOptions};
use crate::pipeline::{process_subject, PipelineParams, SubjectData, SubjectFeatures};
use crate::volume::{Atlas, Volume3D};

/// Subjects, shared atlas and reference, and the processing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub subjects: Vec<SubjectData>,
    pub atlas: Atlas,
    pub reference: Volume3D,
    pub params: PipelineParams,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        if self.subjects.len() < 2 {
            return Err(Error::Argument(format!(
                "leave-one-out needs at least 2 subjects, got {}",
                self.subjects.len()
            )));
        }
        let names = self.subjects[0].schedule.names();
        for s in &self.subjects[1..] {
            if s.schedule.names() != names {
                return Err(Error::Argument(format!(
                    "subject {} has categories {:?}, expected {:?}",
                    s.bold.subject_id(),
                    s.schedule.names(),
                    names
                )));
            }
        }
        if self.reference.dims() != self.atlas.dims() {
            return Err(Error::Argument(format!(
                "reference {} does not match atlas {}",
                self.reference.dims(),
                self.atlas.dims()
            )));
        }
        Ok(())
    }

    /// Runs the per-subject chain for every subject, in parallel, returning
    /// results in subject order.
    pub fn extract_all(&self) -> Result<Vec<SubjectFeatures>> {
        self.validate()?;
        let layout = FeatureLayout::from_atlas(&self.atlas);
        self.subjects
            .par_iter()
            .map(|s| process_subject(s, &self.atlas, &self.reference, &layout, &self.params))
            .collect()
    }
}

pub fn accuracy(predictions: &[i8], labels: &[i8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from average ranks.
pub fn auc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == -1).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::Argument("labels must be ±1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean vector of each category, in category order.
fn category_means<'a>(
    rows: impl Iterator<Item = (usize, &'a [f64])>,
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut counts = vec![0usize; p];
    for (c, row) in rows {
        if c >= p {
            return Err(Error::Argument(format!("category index {c} out of range")));
        }
        if sums[c].is_empty() {
            sums[c] = vec![0.0; row.len()];
        }
        if sums[c].len() != row.len() {
            return Err(Error::Argument("rows differ in length".into()));
        }
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Argument(format!("category {c} has no snapshots")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

/// Correlation between every pair of category means. Entries are `None`
/// where a mean has zero variance.
pub fn correlation_matrix(means: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    let p = means.len();
    let mut out = vec![vec![None; p]; p];
    for a in 0..p {
        for b in a..p {
            let r = pearson(&means[a], &means[b]);
            let r = if a == b { r.map(|_| 1.0) } else { r };
            out[a][b] = r;
            out[b][a] = r;
        }
    }
    out
}

/// Mean absolute off-diagonal entry; `None` if any is undefined or `p < 2`.
pub fn mean_abs_off_diagonal(m: &[Vec<Option<f64>>]) -> Option<f64> {
    let p = m.len();
    if p < 2 {
        return None;
    }
    let mut total = 0.0;
    for (a, row) in m.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            if a != b {
                total += (*v)?.abs();
            }
        }
    }
    Some(total / (p * (p - 1)) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub categories: Vec<String>,
    pub voxel: Vec<Vec<Option<f64>>>,
    pub feature: Vec<Vec<Option<f64>>>,
    pub voxel_mean_abs_off_diagonal: Option<f64>,
    pub feature_mean_abs_off_diagonal: Option<f64>,
}

/// Category correlation matrices of the standard-space snapshot images
/// (foreground voxels) and of the feature rows, pooled over subjects.
pub fn correlation_matrices(subjects: &[SubjectFeatures]) -> Result<CorrelationReport> {
    let first = subjects
        .first()
        .ok_or_else(|| Error::Argument("no subjects".into()))?;
    let p = first.categories.len();
    if p < 2 {
        return Err(Error::Argument("correlation matrices need at least 2 categories".into()));
    }
    let voxel_rows = subjects
        .iter()
        .flat_map(|s| s.rows.iter().zip(&s.voxels).map(|(r, v)| (r.category, v.as_slice())));
    let feature_rows = subjects
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| (r.category, r.values.as_slice())));
    let voxel = correlation_matrix(&category_means(voxel_rows, p)?);
    let feature = correlation_matrix(&category_means(feature_rows, p)?);
    Ok(CorrelationReport {
        categories: first.categories.clone(),
        voxel_mean_abs_off_diagonal: mean_abs_off_diagonal(&voxel),
        feature_mean_abs_off_diagonal: mean_abs_off_diagonal(&feature),
        voxel,
        feature,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject_id: String,
    pub status: FoldStatus,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub classifiers: usize,
    pub message: Option<String>,
}

/// Decision score of one held-out snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub subject_id: String,
    pub snapshot_id: String,
    pub category: String,
    pub label: i8,
    pub score: f64,
    pub predicted: i8,
}

/// Settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub target: String,
    pub svm: SvmOptions,
    /// Seed of the within-subject label permutation, for the control run.
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: EvalSettings,
    pub folds: Vec<FoldResult>,
    pub completed_folds: usize,
    pub mean_accuracy: f64,
    pub mean_auc: f64,
    /// Population standard deviation over completed folds.
    pub std_accuracy: f64,
    pub std_auc: f64,
    pub warnings: Vec<String>,
    pub scores: Vec<ScoreRecord>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Pipeline(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))
    }

    /// Human-readable fold table.
    pub fn to_table(&self) -> String {
        let mut out = format!("target: {}\n", self.settings.target);
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>8} {:>8} {:>6} {:>4} {:>4} {:>4} {:>4}",
            "subject", "status", "acc", "auc", "n_test", "tp", "fp", "tn", "fn"
        );
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for f in &self.folds {
            let status = match f.status {
                FoldStatus::Completed => "ok",
                FoldStatus::Failed => "failed",
            };
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>8} {:>8} {:>6} {:>4} {:>4} {:>4} {:>4}",
                f.subject_id,
                status,
                fmt(f.accuracy),
                fmt(f.auc),
                f.n_test,
                f.true_positive,
                f.false_positive,
                f.true_negative,
                f.false_negative
            );
        }
        let _ = writeln!(
            out,
            "mean accuracy {:.4} ± {:.4}, mean AUC {:.4} ± {:.4} over {} folds",
            self.mean_accuracy, self.std_accuracy, self.mean_auc, self.std_auc, self.completed_folds
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn scores_csv(&self) -> String {
        let mut out = String::from("subject_id,snapshot_id,category,label,score,predicted\n");
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.subject_id,
                s.snapshot_id,
                s.category,
                s.label,
                io::fmt_f64(s.score),
                s.predicted
            );
        }
        out
    }
}

fn labels_for(s: &SubjectFeatures, target: usize) -> Vec<i8> {
    s.rows
        .iter()
        .map(|r| if r.category == target { 1 } else { -1 })
        .collect()
}

/// Row indices `(subject, row)` used for training and testing when
/// `held_out` is the test subject.
pub fn fold_rows(subjects: &[SubjectFeatures], held_out: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, s) in subjects.iter().enumerate() {
        for k in 0..s.rows.len() {
            if u == held_out {
                test.push((u, k));
            } else {
                train.push((u, k));
            }
        }
    }
    (train, test)
}

/// Trains on every subject, for the final model.
pub fn train_all(
    subjects: &[SubjectFeatures],
    layout: &FeatureLayout,
    target: &str,
    opts: &SvmOptions,
) -> Result<EnsembleModel> {
    let t = target_index(subjects, target)?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in subjects {
        rows.extend(s.rows.iter().map(|r| r.values.clone()));
        y.extend(labels_for(s, t));
    }
    train_ensemble(target, layout, &rows, &y, opts)
}

fn target_index(subjects: &[SubjectFeatures], target: &str) -> Result<usize> {
    let first = subjects
        .first()
        .ok_or_else(|| Error::Argument("no subjects".into()))?;
    for s in subjects {
        if s.categories != first.categories {
            return Err(Error::Argument(format!(
                "subject {} has categories {:?}, expected {:?}",
                s.subject_id, s.categories, first.categories
            )));
        }
    }
    first
        .categories
        .iter()
        .position(|c| c == target)
        .ok_or_else(|| Error::Lookup(format!("target category {target:?} not in {:?}", first.categories)))
}

fn run_fold(
    subjects: &[SubjectFeatures],
    held_out: usize,
    target: usize,
    layout: &FeatureLayout,
    opts: &SvmOptions,
) -> Result<(FoldResult, Vec<ScoreRecord>)> {
    let (train, test) = fold_rows(subjects, held_out);
    let test_subject = &subjects[held_out];
    let leaked: Vec<&str> = train
        .iter()
        .map(|&(u, k)| subjects[u].rows[k].snapshot_id.as_str())
        .filter(|id| test_subject.rows.iter().any(|r| r.snapshot_id == *id))
        .collect();
    if !leaked.is_empty() {
        return Err(Error::Pipeline(format!(
            "test snapshots {leaked:?} also appear in the training set"
        )));
    }
    let labels: Vec<Vec<i8>> = subjects.iter().map(|s| labels_for(s, target)).collect();
    let x: Vec<Vec<f64>> = train.iter().map(|&(u, k)| subjects[u].rows[k].values.clone()).collect();
    let y: Vec<i8> = train.iter().map(|&(u, k)| labels[u][k]).collect();
    let mut fold = FoldResult {
        subject_id: test_subject.subject_id.clone(),
        status: FoldStatus::Failed,
        accuracy: None,
        auc: None,
        n_train: train.len(),
        n_test: test.len(),
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
        classifiers: 0,
        message: None,
    };
    let target_name = &test_subject.categories[target];
    let model = match train_ensemble(target_name, layout, &x, &y, opts) {
        Ok(m) => m,
        Err(e @ Error::Training(_)) => {
            fold.message = Some(e.to_string());
            return Ok((fold, Vec::new()));
        }
        Err(e) => return Err(e),
    };
    fold.classifiers = model.classifiers.len();
    let mut scores = Vec::with_capacity(test.len());
    let mut preds = Vec::with_capacity(test.len());
    let test_labels = &labels[held_out];
    for (k, r) in test_subject.rows.iter().enumerate() {
        let (score, pred) = model.predict(layout, &r.values)?;
        let label = test_labels[k];
        match (label, pred) {
            (1, 1) => fold.true_positive += 1,
            (-1, 1) => fold.false_positive += 1,
            (-1, _) => fold.true_negative += 1,
            _ => fold.false_negative += 1,
        }
        preds.push(pred);
        scores.push(ScoreRecord {
            subject_id: test_subject.subject_id.clone(),
            snapshot_id: r.snapshot_id.clone(),
            category: test_subject.categories[r.category].clone(),
            label,
            score,
            predicted: pred,
        });
    }
    let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
    if test.is_empty() {
        fold.message = Some("held-out subject has no snapshots".into());
        return Ok((fold, scores));
    }
    fold.accuracy = Some(accuracy(&preds, test_labels)?);
    match auc(&raw, test_labels) {
        Ok(a) => {
            fold.auc = Some(a);
            fold.status = FoldStatus::Completed;
        }
        Err(e @ Error::UndefinedMetric(_)) => fold.message = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok((fold, scores))
}

/// Leave-one-subject-out evaluation on already extracted subjects. Folds run
/// in parallel and are reported in subject order.
pub fn loo_on_features(
    subjects: &[SubjectFeatures],
    layout: &FeatureLayout,
    target: &str,
    opts: &SvmOptions,
) -> Result<EvalReport> {
    if subjects.len() < 2 {
        return Err(Error::Argument(format!(
            "leave-one-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let t = target_index(subjects, target)?;
    let results = (0..subjects.len())
        .into_par_iter()
        .map(|u| run_fold(subjects, u, t, layout, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut folds = Vec::with_capacity(results.len());
    let mut scores = Vec::new();
    let mut warnings = Vec::new();
    for (f, s) in results {
        if f.status == FoldStatus::Failed {
            warnings.push(format!(
                "fold {} excluded: {}",
                f.subject_id,
                f.message.as_deref().unwrap_or("failed")
            ));
        }
        folds.push(f);
        scores.extend(s);
    }
    let accs: Vec<f64> = folds.iter().filter_map(|f| f.accuracy.filter(|_| f.status == FoldStatus::Completed)).collect();
    let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
    if accs.is_empty() {
        return Err(Error::Pipeline("every leave-one-out fold failed".into()));
    }
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_auc, std_auc) = mean_std(&aucs);
    Ok(EvalReport {
        settings: EvalSettings {
            target: target.to_string(),
            svm: *opts,
            shuffle_seed: None,
        },
        completed_folds: accs.len(),
        folds,
        mean_accuracy,
        mean_auc,
        std_accuracy,
        std_auc,
        warnings,
        scores,
    })
}

/// Permutes category assignments among each subject's snapshots. Subject
/// `u` uses stream `u` of the seeded generator.
pub fn shuffle_labels(subjects: &[SubjectFeatures], seed: u64) -> Vec<SubjectFeatures> {
    subjects
        .iter()
        .enumerate()
        .map(|(u, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u as u64);
            let mut cats: Vec<usize> = s.rows.iter().map(|r| r.category).collect();
            cats.shuffle(&mut rng);
            let mut out = s.clone();
            for (r, c) in out.rows.iter_mut().zip(cats) {
                r.category = c;
            }
            out
        })
        .collect()
}

/// Label-permutation control: the same evaluation with shuffled labels.
pub fn loo_shuffled(
    subjects: &[SubjectFeatures],
    layout: &FeatureLayout,
    target: &str,
    opts: &SvmOptions,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = loo_on_features(&shuffle_labels(subjects, seed), layout, target, opts)?;
    report.settings.shuffle_seed = Some(seed);
    Ok(report)
}

/// Full evaluation: per-subject extraction from each subject's own data,
/// then leave-one-subject-out training and testing.
///
/// Extraction of a subject uses nothing from other subjects, so it is done
/// once and reused by every fold.
pub fn loo_evaluate(exp: &Experiment, target: &str) -> Result<EvalReport> {
    let subjects = exp.extract_all()?;
    let layout = FeatureLayout::from_atlas(&exp.atlas);
    loo_on_features(&subjects, &layout, target, &exp.params.svm)
}
