//! Per-subject processing chain: design matrix, regressor estimation,
//! snapshot selection, registration to the reference space, weighting and
//! region feature extraction.
//!
//! Every stage takes only the subject's own data plus the shared atlas and
//! reference, so the output for a subject never depends on other subjects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::feature::{extract_features, weight_snapshot, FeatureLayout, WeightedSnapshot};
use crate::glm::{build_design, canonical_hrf, estimate_regressors, CorrelationMap, DesignMatrix, NoiseModel};
use crate::model::SvmOptions;
use crate::register::{
    apply_transform, category_transforms, select_transform, standardize_betas, AffineTransform,
    RegistrationConfig,
};
use crate::snapshot::{extract_snapshots, gaussian_kernel, smooth_design, SnapshotSet, DEFAULT_SIGMA_G};
use crate::volume::{Atlas, BoldSeries, OnsetSchedule, Volume3D};

pub const DEFAULT_HRF_LENGTH_SECONDS: f64 = 32.0;

/// Tunable parameters of the whole chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub sigma_g: f64,
    pub hrf_length_seconds: f64,
    pub noise: NoiseModel,
    pub registration: RegistrationConfig,
    pub svm: SvmOptions,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            sigma_g: DEFAULT_SIGMA_G,
            hrf_length_seconds: DEFAULT_HRF_LENGTH_SECONDS,
            noise: NoiseModel::default(),
            registration: RegistrationConfig::default(),
            svm: SvmOptions::default(),
        }
    }
}

/// One subject's recording and stimulus schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub bold: BoldSeries,
    pub schedule: OnsetSchedule,
}

/// Feature row of one snapshot in the global layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub snapshot_id: String,
    pub category: usize,
    pub time_index: usize,
    pub values: Vec<f64>,
}

/// Everything the evaluation needs from one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub categories: Vec<String>,
    pub rows: Vec<FeatureRow>,
    /// Standard-space snapshot images restricted to atlas foreground voxels
    /// (ascending linear index), parallel to `rows`.
    pub voxels: Vec<Vec<f64>>,
}

pub fn design_for(subject: &SubjectData, params: &PipelineParams) -> Result<DesignMatrix> {
    let hrf = canonical_hrf(subject.bold.tr_seconds(), params.hrf_length_seconds)?;
    build_design(&subject.schedule, &hrf, subject.bold.t())
}

pub fn regressors_for(subject: &SubjectData, design: &DesignMatrix, params: &PipelineParams) -> Result<CorrelationMap> {
    estimate_regressors(&subject.bold, design, params.noise)
}

pub fn snapshots_for(subject: &SubjectData, design: &DesignMatrix, params: &PipelineParams) -> Result<SnapshotSet> {
    let g = gaussian_kernel(params.sigma_g)?;
    let sm = smooth_design(design, &g);
    extract_snapshots(&subject.bold, &sm, &subject.schedule)
}

pub fn transforms_for(betas: &CorrelationMap, reference: &Volume3D, params: &PipelineParams) -> Result<Vec<AffineTransform>> {
    category_transforms(betas, reference, &params.registration)
}

/// Atlas foreground values of a standard-space image.
pub fn foreground(image: &[f64], atlas: &Atlas) -> Result<Vec<f64>> {
    let labels = atlas.labels().data();
    if image.len() != labels.len() {
        return Err(Error::Argument(format!(
            "image has {} voxels, atlas has {}",
            image.len(),
            labels.len()
        )));
    }
    Ok(image
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 0.0)
        .map(|(&v, _)| v)
        .collect())
}

/// Standard-space snapshot images of a subject.
pub fn standardize_snapshots(snaps: &SnapshotSet, transforms: &[AffineTransform]) -> Result<Vec<Vec<f64>>> {
    snaps
        .snapshots
        .iter()
        .map(|s| {
            let t = transforms.get(s.category).ok_or_else(|| {
                Error::Lookup(format!("no transform for category index {}", s.category))
            })?;
            apply_transform(&s.image, t)
        })
        .collect()
}

/// Weights, segments and smooths every snapshot of a subject.
pub fn features_for(
    snaps: &SnapshotSet,
    betas: &CorrelationMap,
    transforms: &[AffineTransform],
    atlas: &Atlas,
    layout: &FeatureLayout,
) -> Result<SubjectFeatures> {
    let standard = standardize_betas(betas, transforms)?;
    if standard.dims != atlas.dims() {
        return Err(Error::Argument(format!(
            "standard space {} does not match atlas {}",
            standard.dims,
            atlas.dims()
        )));
    }
    let images = standardize_snapshots(snaps, transforms)?;
    let mut rows = Vec::with_capacity(snaps.q());
    let mut voxels = Vec::with_capacity(snaps.q());
    for (k, (s, psi)) in snaps.snapshots.iter().zip(images).enumerate() {
        let (_, beta_star) = select_transform(s, transforms, &standard)?;
        let w = WeightedSnapshot {
            snapshot_id: snaps.snapshot_id(k),
            category: s.category,
            theta: weight_snapshot(&psi, beta_star)?,
        };
        let fv = extract_features(&w, atlas)?;
        rows.push(FeatureRow {
            snapshot_id: w.snapshot_id,
            category: s.category,
            time_index: s.time_index,
            values: layout.dense(&fv)?,
        });
        voxels.push(foreground(&psi, atlas)?);
    }
    Ok(SubjectFeatures {
        subject_id: snaps.subject_id.clone(),
        categories: snaps.categories.clone(),
        rows,
        voxels,
    })
}

/// Runs the full chain for one subject.
pub fn process_subject(
    subject: &SubjectData,
    atlas: &Atlas,
    reference: &Volume3D,
    layout: &FeatureLayout,
    params: &PipelineParams,
) -> Result<SubjectFeatures> {
    let design = design_for(subject, params)?;
    let betas = regressors_for(subject, &design, params)?;
    let snaps = snapshots_for(subject, &design, params)?;
    let transforms = transforms_for(&betas, reference, params)?;
    features_for(&snaps, &betas, &transforms, atlas, layout)
}

/// One row of the on-disk feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrixRow {
    pub snapshot_id: String,
    pub subject_id: String,
    pub category: String,
    pub values: Vec<f64>,
}

/// `snapshot_id,subject_id,category,v0,…` with one row per snapshot, in
/// subject then snapshot order.
pub fn feature_matrix_to_text(subjects: &[SubjectFeatures], width: usize) -> String {
    let mut out = String::from("snapshot_id,subject_id,category");
    for k in 0..width {
        out.push_str(&format!(",v{k}"));
    }
    out.push('\n');
    for s in subjects {
        for r in &s.rows {
            out.push_str(&format!("{},{},{}", r.snapshot_id, s.subject_id, s.categories[r.category]));
            for v in &r.values {
                out.push(',');
                out.push_str(&io::fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_feature_matrix(text: &str, width: usize) -> Result<Vec<FeatureMatrixRow>> {
    let (header, rows) = io::parse_records(text, "feature matrix")?;
    io::expect_header(&header, &["snapshot_id", "subject_id", "category"], "feature matrix")?;
    if header.len() != width + 3 {
        return Err(Error::format(
            "feature matrix",
            format!("header has {} value columns, layout has {width}", header.len() - 3),
        ));
    }
    rows.iter()
        .enumerate()
        .map(|(r, rec)| {
            if rec.len() != width + 3 {
                return Err(Error::format(
                    format!("feature matrix row {}", r + 1),
                    format!("expected {} fields, found {}", width + 3, rec.len()),
                ));
            }
            Ok(FeatureMatrixRow {
                snapshot_id: rec[0].to_string(),
                subject_id: rec[1].to_string(),
                category: rec[2].to_string(),
                values: rec
                    .iter()
                    .skip(3)
                    .map(|v| io::parse_f64("feature value", v))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}
