//! Snapshot selection: smooth each design column with a normalized Gaussian
//! kernel and keep one brain image per local maximum of the smoothed column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::DesignMatrix;
use crate::io;
use crate::volume::{BoldSeries, Dims, OnsetSchedule};

/// Default design smoothing width, in samples.
pub const DEFAULT_SIGMA_G: f64 = 1.0;

/// Normalized, symmetric kernel over integer offsets `-r..=r`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel1D {
    /// Builds `w[g] ∝ exp(-g² / denom)` on `g ∈ [-2⌈σ⌉, 2⌈σ⌉]`, normalized
    /// to sum to 1.
    pub(crate) fn with_denominator(sigma: f64, denom: f64) -> Self {
        let r = 2 * sigma.ceil() as i64;
        let raw: Vec<f64> = (-r..=r).map(|g| (-((g * g) as f64) / denom).exp()).collect();
        let total: f64 = raw.iter().sum();
        GaussianKernel1D {
            sigma,
            weights: raw.into_iter().map(|w| w / total).collect(),
        }
    }

    /// Single unit weight; convolution with it is the identity.
    pub fn identity() -> Self {
        GaussianKernel1D {
            sigma: 0.0,
            weights: vec![1.0],
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Half-width `r`; the support is `-r..=r`.
    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// Weight at integer offset `g`, zero outside the support.
    pub fn weight(&self, g: i64) -> f64 {
        let r = self.radius() as i64;
        if g.abs() > r {
            0.0
        } else {
            self.weights[(g + r) as usize]
        }
    }

    /// Zero-padded convolution returning a vector the length of `signal`.
    pub fn convolve_same(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len() as i64;
        let r = self.radius() as i64;
        let mut out = vec![0.0; signal.len()];
        for (j, o) in out.iter_mut().enumerate() {
            let j = j as i64;
            let mut acc = 0.0;
            for g in -r..=r {
                let src = j - g;
                if src >= 0 && src < n {
                    acc += self.weights[(g + r) as usize] * signal[src as usize];
                }
            }
            *o = acc;
        }
        out
    }
}

pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel1D> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(GaussianKernel1D::with_denominator(sigma, 2.0 * sigma * sigma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedDesign {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl SmoothedDesign {
    pub fn p(&self) -> usize {
        self.columns.len()
    }
}

pub fn smooth_design(d: &DesignMatrix, g: &GaussianKernel1D) -> SmoothedDesign {
    SmoothedDesign {
        names: d.names().to_vec(),
        columns: d.columns().iter().map(|c| g.convolve_same(c)).collect(),
    }
}

/// Interior local maxima of `phi`, ascending.
///
/// Index `j` is reported when `phi[j-1] < phi[j]` and the first value after
/// the run of samples equal to `phi[j]` is strictly smaller. A plateau is
/// therefore reported once, at its first index. Runs that end in a rise
/// (steps) or reach the last sample are not maxima, and neither endpoint is
/// ever reported.
pub fn find_peaks(phi: &[f64]) -> Vec<usize> {
    let t = phi.len();
    let mut peaks = Vec::new();
    let mut j = 1;
    while j + 1 < t {
        if phi[j - 1] < phi[j] {
            let mut k = j + 1;
            while k < t && phi[k] == phi[j] {
                k += 1;
            }
            if k < t && phi[k] < phi[j] {
                peaks.push(j);
            }
            j = k;
        } else {
            j += 1;
        }
    }
    peaks
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Category index into the schedule.
    pub category: usize,
    pub time_index: usize,
    pub image: Vec<f64>,
}

/// All snapshots of one subject, ordered by category then time.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub subject_id: String,
    pub dims: Dims,
    pub categories: Vec<String>,
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSet {
    /// Total snapshot count, `q`.
    pub fn q(&self) -> usize {
        self.snapshots.len()
    }

    pub fn count_for(&self, category: usize) -> usize {
        self.snapshots.iter().filter(|s| s.category == category).count()
    }

    /// Identifier used in manifests and feature files.
    pub fn snapshot_id(&self, k: usize) -> String {
        format!("{}-{:04}", self.subject_id, k)
    }
}

pub fn extract_snapshots(
    f: &BoldSeries,
    sm: &SmoothedDesign,
    schedule: &OnsetSchedule,
) -> Result<SnapshotSet> {
    if sm.p() != schedule.p() {
        return Err(Error::Argument(format!(
            "smoothed design has {} columns but the schedule has {} categories",
            sm.p(),
            schedule.p()
        )));
    }
    let mut snapshots = Vec::new();
    for (i, phi) in sm.columns.iter().enumerate() {
        if phi.len() != f.t() {
            return Err(Error::Argument(format!(
                "design column {i} has {} samples, series has {}",
                phi.len(),
                f.t()
            )));
        }
        for j in find_peaks(phi) {
            snapshots.push(Snapshot {
                category: i,
                time_index: j,
                image: f.row(j).to_vec(),
            });
        }
    }
    if snapshots.is_empty() {
        return Err(Error::Pipeline(format!(
            "no stimuli detected for subject {}",
            f.subject_id()
        )));
    }
    Ok(SnapshotSet {
        subject_id: f.subject_id().to_string(),
        dims: f.dims(),
        categories: schedule.names().into_iter().map(str::to_string).collect(),
        snapshots,
    })
}

/// Row of the snapshot manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub snapshot_id: String,
    pub subject_id: String,
    pub category: String,
    pub time_index: usize,
}

pub const MANIFEST_HEADER: &str = "snapshot_id,subject_id,category,time_index";

pub fn manifest_to_text(records: &[SnapshotRecord]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.snapshot_id, r.subject_id, r.category, r.time_index));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<SnapshotRecord>> {
    let (header, rows) = io::parse_records(text, "snapshot manifest")?;
    let expected: Vec<&str> = MANIFEST_HEADER.split(',').collect();
    io::expect_header(&header, &expected, "snapshot manifest")?;
    rows.iter()
        .map(|rec| {
            if rec.len() != 4 {
                return Err(Error::format(
                    "snapshot manifest",
                    format!("expected 4 fields, found {}", rec.len()),
                ));
            }
            Ok(SnapshotRecord {
                snapshot_id: rec[0].to_string(),
                subject_id: rec[1].to_string(),
                category: rec[2].to_string(),
                time_index: io::parse_usize("time_index", &rec[3])?,
            })
        })
        .collect()
}

impl SnapshotSet {
    /// Manifest rows in snapshot order.
    pub fn records(&self) -> Vec<SnapshotRecord> {
        self.snapshots
            .iter()
            .enumerate()
            .map(|(k, s)| SnapshotRecord {
                snapshot_id: self.snapshot_id(k),
                subject_id: self.subject_id.clone(),
                category: self.categories[s.category].clone(),
                time_index: s.time_index,
            })
            .collect()
    }
}
