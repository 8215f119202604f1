//! Per-region L1-regularized linear SVMs and their averaged ensemble.
//!
//! Each region classifier minimizes
//! `C Σ_j max(0, 1 - y_j x_j·w) + ‖w‖₁` over a single weight vector shared
//! by all training rows, with no intercept unless one is requested as an
//! appended constant feature. The ensemble score of a snapshot is the mean
//! of the region decision values; its label is the sign, with zero mapped to
//! the negative class.

mod simplex;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureLayout;
use crate::io;

pub const DEFAULT_C: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    /// Append a constant-1 feature so the last weight acts as a bias.
    pub bias: bool,
    pub max_pivots: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: DEFAULT_C,
            bias: false,
            max_pivots: 200_000,
        }
    }
}

impl SvmOptions {
    pub fn with_c(c: f64) -> Self {
        SvmOptions { c, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionClassifier {
    pub region_id: usize,
    /// One weight per region feature, plus a trailing bias weight when
    /// trained with `bias`.
    pub weights: Vec<f64>,
    pub c: f64,
    pub bias: bool,
}

impl RegionClassifier {
    /// Number of region features the classifier reads.
    pub fn n_features(&self) -> usize {
        self.weights.len() - usize::from(self.bias)
    }
}

/// Training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Objective of the solver iterate after each pivot.
    pub objective: Vec<f64>,
    pub pivots: usize,
}

pub fn svm_objective(x: &[Vec<f64>], y: &[i8], w: &[f64], c: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yj)| {
            let m: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
            (1.0 - f64::from(yj) * m).max(0.0)
        })
        .sum();
    c * hinge + w.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_labels(y: &[i8]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::Argument(format!("labels must be ±1, found {v}")));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    Ok(())
}

pub fn train_region_svm_traced(
    region_id: usize,
    x: &[Vec<f64>],
    y: &[i8],
    opts: &SvmOptions,
) -> Result<(RegionClassifier, TrainTrace)> {
    if !(opts.c.is_finite() && opts.c > 0.0) {
        return Err(Error::Argument(format!("C must be positive, got {}", opts.c)));
    }
    if x.len() != y.len() {
        return Err(Error::Argument(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Training("need at least two training rows".into()));
    }
    check_labels(y)?;
    let n = x[0].len();
    if x.iter().any(|r| r.len() != n) {
        return Err(Error::Argument("training rows differ in length".into()));
    }
    let width = n + usize::from(opts.bias);
    let mut a = Vec::with_capacity(x.len() * width);
    for (row, &yj) in x.iter().zip(y) {
        let s = f64::from(yj);
        a.extend(row.iter().map(|v| s * v));
        if opts.bias {
            a.push(s);
        }
    }
    let sol = simplex::solve(&a, x.len(), width, opts.c, opts.max_pivots)?;
    Ok((
        RegionClassifier {
            region_id,
            weights: sol.weights,
            c: opts.c,
            bias: opts.bias,
        },
        TrainTrace {
            objective: sol.trace,
            pivots: sol.pivots,
        },
    ))
}

pub fn train_region_svm(region_id: usize, x: &[Vec<f64>], y: &[i8], opts: &SvmOptions) -> Result<RegionClassifier> {
    train_region_svm_traced(region_id, x, y, opts).map(|(c, _)| c)
}

/// Signed decision value `x·w` (plus bias when present).
pub fn region_decision(clf: &RegionClassifier, x: &[f64]) -> Result<f64> {
    let n = clf.n_features();
    if x.len() != n {
        return Err(Error::Argument(format!(
            "region {} expects {n} features, got {}",
            clf.region_id,
            x.len()
        )));
    }
    let mut d: f64 = x.iter().zip(&clf.weights).map(|(a, b)| a * b).sum();
    if clf.bias {
        d += clf.weights[n];
    }
    Ok(d)
}

/// Mean of the decision values and its sign; a zero score is negative.
pub fn combine(decisions: &[f64]) -> Result<(f64, i8)> {
    if decisions.is_empty() {
        return Err(Error::Argument("no classifiers to combine".into()));
    }
    let score = decisions.iter().sum::<f64>() / decisions.len() as f64;
    Ok((score, if score > 0.0 { 1 } else { -1 }))
}

/// Averages the region classifiers' decisions on one dense feature row.
pub fn bag(classifiers: &[RegionClassifier], layout: &FeatureLayout, row: &[f64]) -> Result<(f64, i8)> {
    if classifiers.is_empty() {
        return Err(Error::Argument("empty classifier list".into()));
    }
    if row.len() != layout.width() {
        return Err(Error::Argument(format!(
            "feature row has {} values, layout has {}",
            row.len(),
            layout.width()
        )));
    }
    let decisions = classifiers
        .iter()
        .map(|clf| {
            let r = layout.range(clf.region_id).ok_or_else(|| {
                Error::Lookup(format!("region {} missing from feature layout", clf.region_id))
            })?;
            region_decision(clf, &row[r])
        })
        .collect::<Result<Vec<_>>>()?;
    combine(&decisions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub positive_label: String,
    pub c: f64,
    pub bias: bool,
    pub classifiers: Vec<RegionClassifier>,
}

impl EnsembleModel {
    pub fn predict(&self, layout: &FeatureLayout, row: &[f64]) -> Result<(f64, i8)> {
        bag(&self.classifiers, layout, row)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("positive_label,c,region_count,bias\n");
        let _ = writeln!(
            out,
            "{},{},{},{}",
            self.positive_label,
            io::fmt_f64(self.c),
            self.classifiers.len(),
            self.bias
        );
        out.push_str("region_id,n,weights\n");
        for clf in &self.classifiers {
            let _ = write!(out, "{},{}", clf.region_id, clf.weights.len());
            for w in &clf.weights {
                out.push(',');
                out.push_str(&io::fmt_f64(*w));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format("model", format!("missing {what}")))
        };
        if next("header")? != "positive_label,c,region_count,bias" {
            return Err(Error::format("model", "bad header row"));
        }
        let head: Vec<String> = next("header values")?.split(',').map(str::to_string).collect();
        if head.len() != 4 {
            return Err(Error::format("model", "header needs 4 fields"));
        }
        let c = io::parse_f64("c", &head[1])?;
        let count = io::parse_usize("region_count", &head[2])?;
        let bias = match head[3].as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::format("bias", format!("expected true/false, found {other:?}"))),
        };
        if next("region header")? != "region_id,n,weights" {
            return Err(Error::format("model", "bad region header row"));
        }
        let mut classifiers = Vec::with_capacity(count);
        for k in 0..count {
            let line = next(&format!("region line {}", k + 1))?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 2 {
                return Err(Error::format("model", format!("region line {} too short", k + 1)));
            }
            let region_id = io::parse_usize("region_id", f[0])?;
            let n = io::parse_usize("n", f[1])?;
            if f.len() != n + 2 {
                return Err(Error::format(
                    "model",
                    format!("region {region_id}: n = {n} but {} weights", f.len() - 2),
                ));
            }
            let weights = f[2..]
                .iter()
                .map(|s| io::parse_f64("weight", s))
                .collect::<Result<Vec<_>>>()?;
            classifiers.push(RegionClassifier { region_id, weights, c, bias });
        }
        if classifiers.is_empty() {
            return Err(Error::format("model", "model has no classifiers"));
        }
        Ok(EnsembleModel {
            positive_label: head[0].clone(),
            c,
            bias,
            classifiers,
        })
    }
}

/// Trains one classifier per layout region that carries any non-zero
/// training value. Regions are trained in parallel and collected in layout
/// order.
pub fn train_ensemble(
    positive_label: &str,
    layout: &FeatureLayout,
    rows: &[Vec<f64>],
    y: &[i8],
    opts: &SvmOptions,
) -> Result<EnsembleModel> {
    if rows.len() != y.len() {
        return Err(Error::Argument(format!("{} rows but {} labels", rows.len(), y.len())));
    }
    check_labels(y)?;
    if let Some(r) = rows.iter().find(|r| r.len() != layout.width()) {
        return Err(Error::Argument(format!(
            "feature row has {} values, layout has {}",
            r.len(),
            layout.width()
        )));
    }
    let used: Vec<(usize, std::ops::Range<usize>)> = layout
        .regions
        .iter()
        .map(|&(id, s, l)| (id, s..s + l))
        .filter(|(_, r)| rows.iter().any(|row| row[r.clone()].iter().any(|v| *v != 0.0)))
        .collect();
    if used.is_empty() {
        return Err(Error::Training("no region carries any non-zero feature".into()));
    }
    let classifiers = used
        .par_iter()
        .map(|(id, r)| {
            let x: Vec<Vec<f64>> = rows.iter().map(|row| row[r.clone()].to_vec()).collect();
            train_region_svm(*id, &x, y, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        positive_label: positive_label.to_string(),
        c: opts.c,
        bias: opts.bias,
        classifiers,
    })
}
