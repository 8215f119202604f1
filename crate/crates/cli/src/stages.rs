//! The pipeline stages. Each stage reads the files written by earlier
//! stages, writes its own outputs and a manifest, and touches nothing else.
//!
//! Data directory:
//! `experiment.json`, `atlas.mrnr`, `reference.mrnr`,
//! `<subject>/events.csv`, `<subject>/bold/<sample>.mrnr`,
//! `truth/truth.json`, `truth/beta-<category>.mrnr`.
//!
//! Output directory:
//! `design/<subject>/{design.csv,beta-<category>.mrnr,transforms.csv}`,
//! `snapshots/<subject>/{manifest.csv,<snapshot_id>.mrnr}`,
//! `features/{features.csv,offsets.csv,correlation.json}`,
//! `model/model.txt`, `report/{report.json,report.txt,scores.csv,control.json}`,
//! `manifests/<stage>.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mrnr::eval::{correlation_matrices, loo_on_features, loo_shuffled, train_all};
use mrnr::glm::{CorrelationMap, DesignMatrix, Space};
use mrnr::pipeline::{
    design_for, feature_matrix_to_text, features_for, parse_feature_matrix, regressors_for,
    snapshots_for, transforms_for, FeatureRow, SubjectData,
};
use mrnr::register::{parse_transforms, transforms_to_text};
use mrnr::snapshot::{manifest_to_text, parse_manifest, Snapshot};
use mrnr::volume::atlas_from_labels;
use mrnr::{
    generate, Atlas, BoldSeries, Dims, Error, FeatureLayout, OnsetSchedule, PipelineParams, Result,
    SnapshotSet, SubjectFeatures, Volume3D,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::manifest::Recorder;

/// Contents of `experiment.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMeta {
    pub subjects: Vec<String>,
    pub categories: Vec<String>,
    pub tr_seconds: f64,
    pub t: usize,
}

pub const STAGES: [&str; 6] = ["simulate", "design", "snapshot", "extract", "train", "evaluate"];

/// A resolved configuration plus the derived processing parameters.
pub struct Context {
    pub cfg: PipelineConfig,
    pub params: PipelineParams,
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_string_pretty(value)
        .map(|s| (s + "\n").into_bytes())
        .map_err(|e| Error::Pipeline(format!("cannot serialize: {e}")))
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format {
        field: what.to_string(),
        message: e.to_string(),
    })
}

fn frame_name(j: usize) -> String {
    format!("{j:04}.mrnr")
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let cfg = cfg.resolve()?;
        let params = cfg.params()?;
        Ok(Context { cfg, params })
    }

    fn data(&self) -> &Path {
        self.cfg.data_dir()
    }

    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn recorder(&self, stage: &'static str) -> Recorder {
        Recorder::new(
            stage,
            vec![
                ("data".into(), self.data().to_path_buf()),
                ("out".into(), self.out().to_path_buf()),
            ],
        )
    }

    fn finish(&self, rec: Recorder) -> Result<()> {
        rec.finish(&self.cfg, &self.out().join("manifests"))
    }

    pub fn run(&self, stage: &str) -> Result<()> {
        match stage {
            "simulate" => self.simulate(),
            "design" => self.design(),
            "snapshot" => self.snapshot(),
            "extract" => self.extract(),
            "train" => self.train(),
            "evaluate" => self.evaluate(),
            other => Err(Error::Argument(format!("unknown stage {other:?}"))),
        }
    }

    /// Runs every stage in order through the files on disk; the simulation
    /// stage only when the configuration asks for it.
    pub fn pipeline(&self) -> Result<()> {
        for stage in STAGES {
            if stage == "simulate" && self.cfg.simulate != Some(true) {
                continue;
            }
            self.run(stage)?;
        }
        Ok(())
    }

    // ----- readers shared by several stages -----

    fn meta(&self, rec: &mut Recorder) -> Result<ExperimentMeta> {
        let path = self.data().join("experiment.json");
        let meta: ExperimentMeta = from_json(&rec.read_string(&path)?, "experiment.json")?;
        if meta.subjects.is_empty() || meta.categories.is_empty() {
            return Err(Error::Format {
                field: "experiment.json".into(),
                message: "subjects and categories must be non-empty".into(),
            });
        }
        Ok(meta)
    }

    fn volume(&self, rec: &mut Recorder, path: &Path) -> Result<Volume3D> {
        Volume3D::from_bytes(&rec.read(path)?)
    }

    fn atlas(&self, rec: &mut Recorder) -> Result<Atlas> {
        atlas_from_labels(self.volume(rec, self.cfg.atlas_path())?)
    }

    fn target(&self, meta: &ExperimentMeta) -> Result<String> {
        let target = self.cfg.target.clone().unwrap_or_else(|| meta.categories[0].clone());
        if !meta.categories.contains(&target) {
            return Err(Error::Lookup(format!(
                "target category {target:?} is not one of {:?}",
                meta.categories
            )));
        }
        Ok(target)
    }

    fn subject(&self, rec: &mut Recorder, meta: &ExperimentMeta, id: &str) -> Result<SubjectData> {
        let dir = self.data().join(id);
        let schedule = OnsetSchedule::parse(&rec.read_string(&dir.join("events.csv"))?)?;
        let names: Vec<&str> = meta.categories.iter().map(String::as_str).collect();
        if schedule.names() != names {
            return Err(Error::Format {
                field: format!("{id}/events.csv"),
                message: format!("categories {:?} differ from {:?}", schedule.names(), names),
            });
        }
        let mut dims: Option<Dims> = None;
        let mut samples = Vec::new();
        for j in 0..meta.t {
            let v = self.volume(rec, &dir.join("bold").join(frame_name(j)))?;
            match dims {
                None => dims = Some(v.dims()),
                Some(d) if d != v.dims() => {
                    return Err(Error::Format {
                        field: format!("{id}/bold/{}", frame_name(j)),
                        message: format!("dims {} differ from {d}", v.dims()),
                    })
                }
                Some(_) => {}
            }
            samples.extend_from_slice(v.data());
        }
        let dims = dims.ok_or_else(|| Error::Format {
            field: "experiment.json".into(),
            message: "t must be positive".into(),
        })?;
        let bold = BoldSeries::from_flat(id, dims, meta.tr_seconds, meta.t, samples)?;
        schedule.validate(bold.t())?;
        Ok(SubjectData { bold, schedule })
    }

    fn design_dir(&self, id: &str) -> PathBuf {
        self.out().join("design").join(id)
    }

    fn snapshot_dir(&self, id: &str) -> PathBuf {
        self.out().join("snapshots").join(id)
    }

    fn betas(&self, rec: &mut Recorder, meta: &ExperimentMeta, id: &str) -> Result<CorrelationMap> {
        let dir = self.design_dir(id);
        let mut maps = Vec::new();
        let mut dims = None;
        for c in &meta.categories {
            let v = self.volume(rec, &dir.join(format!("beta-{c}.mrnr")))?;
            dims = Some(v.dims());
            maps.push(v.into_data());
        }
        Ok(CorrelationMap {
            names: meta.categories.clone(),
            maps,
            dims: dims.expect("non-empty categories"),
            space: Space::Native,
            noise: self.params.noise,
        })
    }

    fn snapshots(&self, rec: &mut Recorder, meta: &ExperimentMeta, id: &str) -> Result<SnapshotSet> {
        let dir = self.snapshot_dir(id);
        let records = parse_manifest(&rec.read_string(&dir.join("manifest.csv"))?)?;
        let mut set = SnapshotSet {
            subject_id: id.to_string(),
            dims: Dims::new(0, 0, 0),
            categories: meta.categories.clone(),
            snapshots: Vec::with_capacity(records.len()),
        };
        for (k, r) in records.iter().enumerate() {
            if r.subject_id != id || r.snapshot_id != set.snapshot_id(k) {
                return Err(Error::Format {
                    field: format!("snapshots/{id}/manifest.csv"),
                    message: format!("unexpected row {k}: {} of {}", r.snapshot_id, r.subject_id),
                });
            }
            let category = meta
                .categories
                .iter()
                .position(|c| *c == r.category)
                .ok_or_else(|| Error::Lookup(format!("unknown category {:?}", r.category)))?;
            let v = self.volume(rec, &dir.join(format!("{}.mrnr", r.snapshot_id)))?;
            set.dims = v.dims();
            set.snapshots.push(Snapshot {
                category,
                time_index: r.time_index,
                image: v.into_data(),
            });
        }
        Ok(set)
    }

    fn features(&self, rec: &mut Recorder, meta: &ExperimentMeta) -> Result<(FeatureLayout, Vec<SubjectFeatures>)> {
        let dir = self.out().join("features");
        let layout = FeatureLayout::parse(&rec.read_string(&dir.join("offsets.csv"))?)?;
        let rows = parse_feature_matrix(&rec.read_string(&dir.join("features.csv"))?, layout.width())?;
        let mut time_index = HashMap::new();
        for id in &meta.subjects {
            let path = self.snapshot_dir(id).join("manifest.csv");
            for r in parse_manifest(&rec.read_string(&path)?)? {
                time_index.insert(r.snapshot_id, r.time_index);
            }
        }
        let mut subjects: Vec<SubjectFeatures> = meta
            .subjects
            .iter()
            .map(|id| SubjectFeatures {
                subject_id: id.clone(),
                categories: meta.categories.clone(),
                rows: Vec::new(),
                voxels: Vec::new(),
            })
            .collect();
        for r in rows {
            let u = meta
                .subjects
                .iter()
                .position(|s| *s == r.subject_id)
                .ok_or_else(|| Error::Lookup(format!("unknown subject {:?}", r.subject_id)))?;
            let category = meta
                .categories
                .iter()
                .position(|c| *c == r.category)
                .ok_or_else(|| Error::Lookup(format!("unknown category {:?}", r.category)))?;
            let t = *time_index
                .get(&r.snapshot_id)
                .ok_or_else(|| Error::Lookup(format!("snapshot {} is in no manifest", r.snapshot_id)))?;
            subjects[u].rows.push(FeatureRow {
                snapshot_id: r.snapshot_id,
                category,
                time_index: t,
                values: r.values,
            });
        }
        Ok((layout, subjects))
    }

    // ----- stages -----

    /// Writes a synthetic experiment and its ground truth to the data
    /// directory.
    pub fn simulate(&self) -> Result<()> {
        let mut rec = self.recorder("simulate");
        let synth = self.cfg.synth();
        let (exp, truth) = generate(&synth)?;
        let data = self.data();
        let meta = ExperimentMeta {
            subjects: exp.subjects.iter().map(|s| s.bold.subject_id().to_string()).collect(),
            categories: truth.categories.clone(),
            tr_seconds: synth.tr_seconds,
            t: synth.t,
        };
        rec.write(&data.join("experiment.json"), &json(&meta)?)?;
        rec.write(&data.join("atlas.mrnr"), &exp.atlas.labels().to_bytes()?)?;
        rec.write(&data.join("reference.mrnr"), &exp.reference.to_bytes()?)?;
        for s in &exp.subjects {
            let dir = data.join(s.bold.subject_id());
            rec.write(&dir.join("events.csv"), s.schedule.to_text().as_bytes())?;
            for j in 0..s.bold.t() {
                rec.write(&dir.join("bold").join(frame_name(j)), &s.bold.frame(j).to_bytes()?)?;
            }
        }
        let dims = exp.atlas.dims();
        rec.write(&data.join("truth").join("truth.json"), &json(&truth)?)?;
        for (c, beta) in truth.categories.iter().zip(&truth.betas) {
            let v = Volume3D::from_data(dims, beta.clone())?;
            rec.write(&data.join("truth").join(format!("beta-{c}.mrnr")), &v.to_bytes()?)?;
        }
        self.finish(rec)
    }

    /// Design matrix, regressor maps and registration transforms per subject.
    pub fn design(&self) -> Result<()> {
        let mut rec = self.recorder("design");
        let meta = self.meta(&mut rec)?;
        let reference = self.volume(&mut rec, self.cfg.reference_path())?;
        for id in &meta.subjects {
            let subject = self.subject(&mut rec, &meta, id)?;
            let design = design_for(&subject, &self.params)?;
            let betas = regressors_for(&subject, &design, &self.params)?;
            let transforms = transforms_for(&betas, &reference, &self.params)?;
            let dir = self.design_dir(id);
            rec.write(&dir.join("design.csv"), design.to_text().as_bytes())?;
            for (c, m) in betas.names.iter().zip(&betas.maps) {
                let v = Volume3D::from_data(betas.dims, m.clone())?;
                rec.write(&dir.join(format!("beta-{c}.mrnr")), &v.to_bytes()?)?;
            }
            rec.write(&dir.join("transforms.csv"), transforms_to_text(&betas.names, &transforms).as_bytes())?;
        }
        self.finish(rec)
    }

    /// Stimulus snapshots per subject.
    pub fn snapshot(&self) -> Result<()> {
        let mut rec = self.recorder("snapshot");
        let meta = self.meta(&mut rec)?;
        for id in &meta.subjects {
            let subject = self.subject(&mut rec, &meta, id)?;
            let design = DesignMatrix::parse(&rec.read_string(&self.design_dir(id).join("design.csv"))?)?;
            let snaps = snapshots_for(&subject, &design, &self.params)?;
            let dir = self.snapshot_dir(id);
            rec.write(&dir.join("manifest.csv"), manifest_to_text(&snaps.records()).as_bytes())?;
            for (k, s) in snaps.snapshots.iter().enumerate() {
                let v = Volume3D::from_data(snaps.dims, s.image.clone())?;
                rec.write(&dir.join(format!("{}.mrnr", snaps.snapshot_id(k))), &v.to_bytes()?)?;
            }
        }
        self.finish(rec)
    }

    /// Weighted region features of every snapshot, plus category
    /// correlation matrices at voxel and feature level.
    pub fn extract(&self) -> Result<()> {
        let mut rec = self.recorder("extract");
        let meta = self.meta(&mut rec)?;
        let atlas = self.atlas(&mut rec)?;
        let layout = FeatureLayout::from_atlas(&atlas);
        let mut inputs = Vec::with_capacity(meta.subjects.len());
        for id in &meta.subjects {
            let snaps = self.snapshots(&mut rec, &meta, id)?;
            let betas = self.betas(&mut rec, &meta, id)?;
            let (names, transforms) =
                parse_transforms(&rec.read_string(&self.design_dir(id).join("transforms.csv"))?)?;
            if names != meta.categories {
                return Err(Error::Format {
                    field: format!("design/{id}/transforms.csv"),
                    message: format!("categories {names:?} differ from {:?}", meta.categories),
                });
            }
            inputs.push((snaps, betas, transforms));
        }
        let subjects = inputs
            .par_iter()
            .map(|(snaps, betas, transforms)| features_for(snaps, betas, transforms, &atlas, &layout))
            .collect::<Result<Vec<_>>>()?;
        let dir = self.out().join("features");
        rec.write(&dir.join("offsets.csv"), layout.to_text().as_bytes())?;
        rec.write(&dir.join("features.csv"), feature_matrix_to_text(&subjects, layout.width()).as_bytes())?;
        if meta.categories.len() >= 2 {
            rec.write(&dir.join("correlation.json"), &json(&correlation_matrices(&subjects)?)?)?;
        }
        self.finish(rec)
    }

    /// Final ensemble trained on every subject.
    pub fn train(&self) -> Result<()> {
        let mut rec = self.recorder("train");
        let meta = self.meta(&mut rec)?;
        let target = self.target(&meta)?;
        let (layout, subjects) = self.features(&mut rec, &meta)?;
        let model = train_all(&subjects, &layout, &target, &self.params.svm)?;
        rec.write(&self.out().join("model").join("model.txt"), model.to_text().as_bytes())?;
        self.finish(rec)
    }

    /// Leave-one-subject-out evaluation, and optionally the label-shuffled
    /// control.
    pub fn evaluate(&self) -> Result<()> {
        let mut rec = self.recorder("evaluate");
        let meta = self.meta(&mut rec)?;
        let target = self.target(&meta)?;
        let (layout, subjects) = self.features(&mut rec, &meta)?;
        let report = loo_on_features(&subjects, &layout, &target, &self.params.svm)?;
        let dir = self.out().join("report");
        rec.write(&dir.join("report.json"), report.to_json()?.as_bytes())?;
        rec.write(&dir.join("report.txt"), report.to_table().as_bytes())?;
        rec.write(&dir.join("scores.csv"), report.scores_csv().as_bytes())?;
        if self.cfg.shuffle_control {
            let control = loo_shuffled(&subjects, &layout, &target, &self.params.svm, self.cfg.seed)?;
            rec.write(&dir.join("control.json"), control.to_json()?.as_bytes())?;
        }
        self.finish(rec)
    }
}
