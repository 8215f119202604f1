//! Region features: weight each standard-space snapshot by its category's
//! regressor map, cut it into atlas regions, keep the regions with any
//! non-zero voxel, and denoise every kept region with a 1D Gaussian whose
//! width depends on the region size.
//!
//! Voxels of a region are visited in ascending linear index order; the 1D
//! convolution runs over that order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::GaussianKernel1D;
use crate::volume::Atlas;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSnapshot {
    pub snapshot_id: String,
    pub category: usize,
    pub theta: Vec<f64>,
}

/// Hadamard product `ψ ∘ β*`. A zero weight always yields an exact zero.
pub fn weight_snapshot(psi: &[f64], beta_star: &[f64]) -> Result<Vec<f64>> {
    if psi.len() != beta_star.len() {
        return Err(Error::Argument(format!(
            "snapshot has {} voxels, regressor map has {}",
            psi.len(),
            beta_star.len()
        )));
    }
    Ok(psi
        .iter()
        .zip(beta_star)
        .map(|(&p, &b)| if b == 0.0 { 0.0 } else { p * b })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSlice {
    pub region_id: usize,
    pub values: Vec<f64>,
}

impl RegionSlice {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// One slice per atlas region `1..=L`, empty regions included. Background
/// voxels are dropped.
pub fn segment(theta: &[f64], atlas: &Atlas) -> Result<Vec<RegionSlice>> {
    if theta.len() != atlas.dims().len() {
        return Err(Error::Argument(format!(
            "snapshot has {} voxels, atlas has {}",
            theta.len(),
            atlas.dims().len()
        )));
    }
    Ok(atlas
        .regions()
        .map(|(id, voxels)| RegionSlice {
            region_id: id,
            values: voxels.iter().map(|&k| theta[k]).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveRegionSet {
    pub regions: Vec<usize>,
}

impl ActiveRegionSet {
    /// First active region.
    pub fn l1(&self) -> Option<usize> {
        self.regions.first().copied()
    }

    /// Last active region.
    pub fn l2(&self) -> Option<usize> {
        self.regions.last().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.regions.binary_search(&id).is_ok()
    }
}

/// Regions whose absolute values sum to something non-zero. No tolerance:
/// inactive voxels are exact zeros.
pub fn detect_active(slices: &[RegionSlice]) -> ActiveRegionSet {
    let mut regions: Vec<usize> = slices
        .iter()
        .filter(|s| s.abs_sum() != 0.0)
        .map(|s| s.region_id)
        .collect();
    regions.sort_unstable();
    regions.dedup();
    ActiveRegionSet { regions }
}

/// Width of the smoothing kernel for a region of `n` voxels: `1 / (5 ln n)`.
pub fn region_sigma(n_voxels: usize) -> Result<f64> {
    if n_voxels <= 1 {
        return Err(Error::Argument(format!(
            "region of {n_voxels} voxel(s) has no defined kernel width"
        )));
    }
    let n = n_voxels as f64;
    Ok(n * n / (5.0 * n * n * n.ln()))
}

/// Normalized kernel `exp(-v² / (2σ))` on `v ∈ [-2⌈σ⌉, 2⌈σ⌉]`. Note the
/// exponent divides by `2σ`, not `2σ²`.
pub fn region_kernel(n_voxels: usize) -> Result<GaussianKernel1D> {
    let sigma = region_sigma(n_voxels)?;
    Ok(GaussianKernel1D::with_denominator(sigma, 2.0 * sigma))
}

/// Region kernel, or the identity for single-voxel regions.
pub fn region_kernel_or_identity(n_voxels: usize) -> GaussianKernel1D {
    region_kernel(n_voxels).unwrap_or_else(|_| GaussianKernel1D::identity())
}

/// Smoothed active regions of one snapshot, concatenated in ascending
/// region order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub snapshot_id: String,
    pub category: usize,
    pub values: Vec<f64>,
    /// `(region_id, start, len)` for each included region.
    pub offsets: Vec<(usize, usize, usize)>,
}

impl FeatureVector {
    pub fn region(&self, id: usize) -> Option<&[f64]> {
        self.offsets
            .iter()
            .find(|o| o.0 == id)
            .map(|&(_, s, l)| &self.values[s..s + l])
    }
}

/// Convolves every non-zero slice with its region kernel. Zero slices are
/// left out of the output.
pub fn smooth_regions(slices: &[RegionSlice]) -> (Vec<f64>, Vec<(usize, usize, usize)>) {
    let mut ordered: Vec<&RegionSlice> = slices.iter().filter(|s| s.abs_sum() != 0.0).collect();
    ordered.sort_by_key(|s| s.region_id);
    let mut values = Vec::new();
    let mut offsets = Vec::with_capacity(ordered.len());
    for s in ordered {
        let smoothed = region_kernel_or_identity(s.len()).convolve_same(&s.values);
        offsets.push((s.region_id, values.len(), smoothed.len()));
        values.extend(smoothed);
    }
    (values, offsets)
}

/// Segment, detect and smooth a weighted snapshot.
pub fn extract_features(w: &WeightedSnapshot, atlas: &Atlas) -> Result<FeatureVector> {
    let slices = segment(&w.theta, atlas)?;
    let active = detect_active(&slices);
    let active_slices: Vec<RegionSlice> = slices
        .into_iter()
        .filter(|s| active.contains(s.region_id))
        .collect();
    let (values, offsets) = smooth_regions(&active_slices);
    Ok(FeatureVector {
        snapshot_id: w.snapshot_id.clone(),
        category: w.category,
        values,
        offsets,
    })
}

/// Fixed coordinate system shared by all snapshots: every non-empty atlas
/// region in ascending order. Regions inactive in a snapshot are zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// `(region_id, start, len)`.
    pub regions: Vec<(usize, usize, usize)>,
}

impl FeatureLayout {
    pub fn from_atlas(atlas: &Atlas) -> Self {
        let mut start = 0;
        let mut regions = Vec::new();
        for (id, voxels) in atlas.regions() {
            if voxels.is_empty() {
                continue;
            }
            regions.push((id, start, voxels.len()));
            start += voxels.len();
        }
        FeatureLayout { regions }
    }

    pub fn width(&self) -> usize {
        self.regions.last().map(|&(_, s, l)| s + l).unwrap_or(0)
    }

    pub fn range(&self, region_id: usize) -> Option<std::ops::Range<usize>> {
        self.regions
            .iter()
            .find(|r| r.0 == region_id)
            .map(|&(_, s, l)| s..s + l)
    }

    /// Scatters a feature vector into the global layout.
    pub fn dense(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.width()];
        for &(id, start, len) in &fv.offsets {
            let r = self.range(id).ok_or_else(|| {
                Error::Lookup(format!("region {id} is not part of the feature layout"))
            })?;
            if r.len() != len {
                return Err(Error::Argument(format!(
                    "region {id} has {len} features, layout expects {}",
                    r.len()
                )));
            }
            row[r].copy_from_slice(&fv.values[start..start + len]);
        }
        Ok(row)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("region_id,start,length\n");
        for &(id, s, l) in &self.regions {
            out.push_str(&format!("{id},{s},{l}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, rows) = crate::io::parse_records(text, "offsets")?;
        crate::io::expect_header(&header, &["region_id", "start", "length"], "offsets")?;
        let mut regions = Vec::with_capacity(rows.len());
        let mut expect_start = 0;
        for rec in &rows {
            if rec.len() != 3 {
                return Err(Error::format("offsets", "expected 3 fields per row"));
            }
            let id = crate::io::parse_usize("region_id", &rec[0])?;
            let s = crate::io::parse_usize("start", &rec[1])?;
            let l = crate::io::parse_usize("length", &rec[2])?;
            if s != expect_start {
                return Err(Error::format("offsets", format!("region {id} starts at {s}, expected {expect_start}")));
            }
            expect_start = s + l;
            regions.push((id, s, l));
        }
        Ok(FeatureLayout { regions })
    }
}
