//! Mapping native-space images into the standard (atlas) space.
//!
//! One affine transform is estimated per category, from that category's
//! regressor map, by maximizing normalized mutual information against the
//! reference image over a fixed search grid (translations and isotropic
//! scales about the volume center). Every snapshot of the category is then
//! resampled with that transform.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{CorrelationMap, Space};
use crate::io;
use crate::snapshot::Snapshot;
use crate::volume::{Dims, Volume3D};

/// Maps source voxel coordinates `x` to target coordinates `M x + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub source_dims: Dims,
    pub target_dims: Dims,
}

impl AffineTransform {
    pub fn identity(source_dims: Dims, target_dims: Dims) -> Self {
        AffineTransform {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            source_dims,
            target_dims,
        }
    }

    pub fn translation(source_dims: Dims, target_dims: Dims, t: [f64; 3]) -> Self {
        AffineTransform {
            translation: t,
            ..Self::identity(source_dims, target_dims)
        }
    }

    /// Isotropic scale `s` about the source center followed by translation `t`.
    pub fn scaled(source_dims: Dims, target_dims: Dims, s: f64, t: [f64; 3]) -> Self {
        let c = center(source_dims);
        let mut tr = [0.0; 3];
        for k in 0..3 {
            tr[k] = c[k] * (1.0 - s) + t[k];
        }
        AffineTransform {
            matrix: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]],
            translation: tr,
            source_dims,
            target_dims,
        }
    }

    fn linear(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.matrix[r][c])
    }

    pub fn determinant(&self) -> f64 {
        self.linear().determinant()
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.determinant();
        if !(det.is_finite() && det.abs() > 1e-9) {
            return Err(Error::Argument(format!("affine linear part is singular (det {det})")));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("affine translation is not finite".into()));
        }
        Ok(())
    }

    pub const TEXT_HEADER: &'static str =
        "m00,m01,m02,m10,m11,m12,m20,m21,m22,tx,ty,tz,src_nx,src_ny,src_nz,dst_nx,dst_ny,dst_nz";

    pub fn to_fields(&self) -> Vec<String> {
        let mut f: Vec<String> = self
            .matrix
            .iter()
            .flatten()
            .chain(self.translation.iter())
            .map(|v| io::fmt_f64(*v))
            .collect();
        for d in [self.source_dims, self.target_dims] {
            f.extend([d.nx, d.ny, d.nz].iter().map(|n| n.to_string()));
        }
        f
    }

    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let fields: Vec<&str> = fields.into_iter().collect();
        if fields.len() != 18 {
            return Err(Error::format(
                "transform",
                format!("expected 18 fields, found {}", fields.len()),
            ));
        }
        let mut reals = [0.0; 12];
        for (k, r) in reals.iter_mut().enumerate() {
            *r = io::parse_f64("transform", fields[k])?;
        }
        let mut n = [0usize; 6];
        for (k, v) in n.iter_mut().enumerate() {
            *v = io::parse_usize("transform dims", fields[12 + k])?;
        }
        let t = AffineTransform {
            matrix: [
                [reals[0], reals[1], reals[2]],
                [reals[3], reals[4], reals[5]],
                [reals[6], reals[7], reals[8]],
            ],
            translation: [reals[9], reals[10], reals[11]],
            source_dims: Dims::new(n[0], n[1], n[2]),
            target_dims: Dims::new(n[3], n[4], n[5]),
        };
        t.validate().map_err(|e| Error::format("transform", e.to_string()))?;
        Ok(t)
    }
}

/// One `category,<transform fields>` row per category.
pub fn transforms_to_text(categories: &[String], transforms: &[AffineTransform]) -> String {
    let mut out = format!("category,{}\n", AffineTransform::TEXT_HEADER);
    for (name, t) in categories.iter().zip(transforms) {
        out.push_str(name);
        for f in t.to_fields() {
            out.push(',');
            out.push_str(&f);
        }
        out.push('\n');
    }
    out
}

pub fn parse_transforms(text: &str) -> Result<(Vec<String>, Vec<AffineTransform>)> {
    let (header, rows) = io::parse_records(text, "transforms")?;
    let expected: Vec<&str> = std::iter::once("category")
        .chain(AffineTransform::TEXT_HEADER.split(','))
        .collect();
    io::expect_header(&header, &expected, "transforms")?;
    let mut names = Vec::with_capacity(rows.len());
    let mut transforms = Vec::with_capacity(rows.len());
    for rec in &rows {
        if rec.len() != 19 {
            return Err(Error::format("transforms", format!("expected 19 fields, found {}", rec.len())));
        }
        names.push(rec[0].to_string());
        transforms.push(AffineTransform::from_fields(rec.iter().skip(1))?);
    }
    Ok((names, transforms))
}

fn center(d: Dims) -> [f64; 3] {
    [
        (d.nx as f64 - 1.0) / 2.0,
        (d.ny as f64 - 1.0) / 2.0,
        (d.nz as f64 - 1.0) / 2.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    #[default]
    Identity,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub histogram_bins: usize,
    pub mode: RegistrationMode,
    /// Translations span `-range..=range` voxels on each axis.
    pub translation_range: f64,
    pub translation_step: f64,
    pub scales: Vec<f64>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            histogram_bins: 32,
            mode: RegistrationMode::Identity,
            translation_range: 4.0,
            translation_step: 1.0,
            scales: vec![1.0],
        }
    }
}

impl RegistrationConfig {
    pub fn search() -> Self {
        RegistrationConfig {
            mode: RegistrationMode::Search,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.histogram_bins < 2 {
            return Err(Error::Argument(format!(
                "histogram_bins must be at least 2, got {}",
                self.histogram_bins
            )));
        }
        if !(self.translation_range.is_finite() && self.translation_range >= 0.0) {
            return Err(Error::Argument("translation range must be non-negative".into()));
        }
        if !(self.translation_step.is_finite() && self.translation_step > 0.0) {
            return Err(Error::Argument("translation step must be positive".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Argument("scales must be positive".into()));
        }
        Ok(())
    }

    /// Translation offsets along one axis, ascending.
    fn offsets(&self) -> Vec<f64> {
        let n = (self.translation_range / self.translation_step + 1e-9).floor() as i64;
        (-n..=n).map(|k| k as f64 * self.translation_step).collect()
    }

    /// Every candidate transform, in lexicographic `(scale, tx, ty, tz)` order.
    pub fn grid(&self, source: Dims, target: Dims) -> Result<Vec<AffineTransform>> {
        self.validate()?;
        let mut scales = self.scales.clone();
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        let offs = self.offsets();
        let mut out = Vec::with_capacity(scales.len() * offs.len().pow(3));
        for &s in &scales {
            for &tx in &offs {
                for &ty in &offs {
                    for &tz in &offs {
                        out.push(AffineTransform::scaled(source, target, s, [tx, ty, tz]));
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Argument("registration search grid is empty".into()));
        }
        Ok(out)
    }
}

fn bin_indices(v: &[f64], bins: usize) -> Vec<usize> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let width = hi - lo;
    if !(width > 0.0) {
        return vec![0; v.len()];
    }
    v.iter()
        .map(|&x| (((x - lo) / width * bins as f64) as usize).min(bins - 1))
        .collect()
}

fn entropy(counts: &[u64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// `(H(a) + H(b)) / H(a, b)` from an equal-width joint histogram over each
/// image's own `[min, max]`. When the joint entropy is zero (both images
/// constant) the value is 1, the no-information minimum.
pub fn nmi_values(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "images differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if bins < 2 {
        return Err(Error::Argument(format!("need at least 2 bins, got {bins}")));
    }
    if a.is_empty() {
        return Err(Error::Argument("images are empty".into()));
    }
    let ia = bin_indices(a, bins);
    let ib = bin_indices(b, bins);
    let mut joint = vec![0u64; bins * bins];
    let mut ha = vec![0u64; bins];
    let mut hb = vec![0u64; bins];
    for (&x, &y) in ia.iter().zip(&ib) {
        joint[x * bins + y] += 1;
        ha[x] += 1;
        hb[y] += 1;
    }
    let n = a.len() as f64;
    let hab = entropy(&joint, n);
    if hab == 0.0 {
        return Ok(1.0);
    }
    Ok((entropy(&ha, n) + entropy(&hb, n)) / hab)
}

pub fn nmi(a: &Volume3D, b: &Volume3D, bins: usize) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            a.dims(),
            b.dims()
        )));
    }
    nmi_values(a.data(), b.data(), bins)
}

/// Resamples a source-space image onto the target grid by trilinear
/// interpolation. Samples outside the source grid read as 0.
pub fn apply_transform(image: &[f64], t: &AffineTransform) -> Result<Vec<f64>> {
    let src = t.source_dims;
    if image.len() != src.len() {
        return Err(Error::Argument(format!(
            "image has {} voxels, transform expects {} ({src})",
            image.len(),
            src.len()
        )));
    }
    t.validate()?;
    let inv = t
        .linear()
        .try_inverse()
        .ok_or_else(|| Error::Argument("affine linear part is not invertible".into()))?;
    let b = Vector3::from(t.translation);
    let dst = t.target_dims;
    let sample = |x: i64, y: i64, z: i64| -> f64 {
        if src.contains(x, y, z) {
            image[src.index(x as usize, y as usize, z as usize)]
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; dst.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let (x, y, z) = dst.coords(i);
        let p = inv * (Vector3::new(x as f64, y as f64, z as f64) - b);
        let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
        let (dx, dy, dz) = (p.x - fx, p.y - fy, p.z - fz);
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        if x0 < -1 || y0 < -1 || z0 < -1 {
            continue;
        }
        let mut acc = 0.0;
        for (cz, wz) in [(0, 1.0 - dz), (1, dz)] {
            if wz == 0.0 {
                continue;
            }
            for (cy, wy) in [(0, 1.0 - dy), (1, dy)] {
                if wy == 0.0 {
                    continue;
                }
                for (cx, wx) in [(0, 1.0 - dx), (1, dx)] {
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wx * wy * wz * sample(x0 + cx, y0 + cy, z0 + cz);
                }
            }
        }
        *o = acc;
    }
    Ok(out)
}

/// NMI of `moving` resampled by `t` against `reference`.
pub fn transform_score(moving: &Volume3D, reference: &Volume3D, t: &AffineTransform, bins: usize) -> Result<f64> {
    let warped = apply_transform(moving.data(), t)?;
    nmi_values(&warped, reference.data(), bins)
}

/// Best transform and its NMI. Grid candidates are scored in parallel and
/// reduced in grid order, so the first maximum wins ties.
pub fn find_transform_scored(
    moving: &Volume3D,
    reference: &Volume3D,
    cfg: &RegistrationConfig,
) -> Result<(AffineTransform, f64)> {
    cfg.validate()?;
    match cfg.mode {
        RegistrationMode::Identity => {
            let t = AffineTransform::identity(moving.dims(), reference.dims());
            let score = transform_score(moving, reference, &t, cfg.histogram_bins)?;
            Ok((t, score))
        }
        RegistrationMode::Search => {
            let grid = cfg.grid(moving.dims(), reference.dims())?;
            let scores: Vec<f64> = grid
                .par_iter()
                .map(|t| transform_score(moving, reference, t, cfg.histogram_bins))
                .collect::<Result<_>>()?;
            let mut best = 0;
            for (k, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = k;
                }
            }
            Ok((grid[best].clone(), scores[best]))
        }
    }
}

pub fn find_transform(moving: &Volume3D, reference: &Volume3D, cfg: &RegistrationConfig) -> Result<AffineTransform> {
    find_transform_scored(moving, reference, cfg).map(|(t, _)| t)
}

/// One transform per category, estimated from that category's regressor map.
pub fn category_transforms(
    betas: &CorrelationMap,
    reference: &Volume3D,
    cfg: &RegistrationConfig,
) -> Result<Vec<AffineTransform>> {
    betas
        .maps
        .iter()
        .map(|m| {
            let moving = Volume3D::from_data(betas.dims, m.clone())?;
            find_transform(&moving, reference, cfg)
        })
        .collect()
}

/// Maps every category's regressor map into standard space.
pub fn standardize_betas(betas: &CorrelationMap, transforms: &[AffineTransform]) -> Result<CorrelationMap> {
    if transforms.len() != betas.p() {
        return Err(Error::Argument(format!(
            "{} transforms for {} categories",
            transforms.len(),
            betas.p()
        )));
    }
    let maps = betas
        .maps
        .iter()
        .zip(transforms)
        .map(|(m, t)| apply_transform(m, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationMap {
        names: betas.names.clone(),
        maps,
        dims: transforms.first().map(|t| t.target_dims).unwrap_or(betas.dims),
        space: Space::Standard,
        noise: betas.noise,
    })
}

/// The transform and standard-space regressor map of a snapshot's category.
pub fn select_transform<'a>(
    snapshot: &Snapshot,
    transforms: &'a [AffineTransform],
    betas: &'a CorrelationMap,
) -> Result<(&'a AffineTransform, &'a [f64])> {
    let i = snapshot.category;
    match (transforms.get(i), betas.maps.get(i)) {
        (Some(t), Some(b)) => Ok((t, b.as_slice())),
        _ => Err(Error::Lookup(format!(
            "no transform or regressor map for category index {i} ({} transforms, {} maps)",
            transforms.len(),
            betas.p()
        ))),
    }
}
