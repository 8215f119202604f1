//! Spatial data model: 3D volumes, BOLD series, atlases and onset schedules,
//! plus the binary volume format and the onset text format.
//!
//! Voxel `(x, y, z)` of a volume with dims `(nx, ny, nz)` lives at linear
//! index `x + nx * (y + ny * z)`. Every module uses this one convention.
//!
//! Volume file layout (little-endian):
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `MRNR`                       |
//! | 4      | 2    | format version, u16 = 1            |
//! | 6      | 1    | dtype code, 1 = f64, 2 = i32       |
//! | 7      | 1    | reserved, 0                        |
//! | 8      | 12   | nx, ny, nz as u32                  |
//! | 20     | 24   | sx, sy, sz voxel size (mm) as f64  |
//! | 44     | ...  | nx·ny·nz values, linear order      |

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, parse_usize};

pub const MAGIC: &[u8; 4] = b"MRNR";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    /// Voxel count, or `None` on overflow.
    pub fn checked_len(&self) -> Option<usize> {
        self.nx.checked_mul(self.ny)?.checked_mul(self.nz)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let r = i / self.nx;
        (x, r % self.ny, r / self.ny)
    }

    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.nx
            && (y as usize) < self.ny
            && (z as usize) < self.nz
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// On-disk element type of a volume file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DType {
    #[default]
    Float64,
    Int32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float64 => 1,
            DType::Int32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::Float64),
            2 => Some(DType::Int32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::Float64 => 8,
            DType::Int32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    voxel_size_mm: [f64; 3],
    data: Vec<f64>,
    dtype: DType,
}

impl Volume3D {
    pub fn new(dims: Dims, voxel_size_mm: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let n = dims
            .checked_len()
            .ok_or_else(|| Error::Argument(format!("dims {dims} overflow")))?;
        if data.len() != n {
            return Err(Error::Argument(format!(
                "data length {} does not match dims {dims} ({n} voxels)",
                data.len()
            )));
        }
        if voxel_size_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Argument(format!(
                "voxel size must be positive, got {voxel_size_mm:?}"
            )));
        }
        Ok(Volume3D {
            dims,
            voxel_size_mm,
            data,
            dtype: DType::Float64,
        })
    }

    /// 1 mm isotropic volume.
    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, [1.0; 3], data)
    }

    pub fn zeros(dims: Dims) -> Self {
        Volume3D {
            dims,
            voxel_size_mm: [1.0; 3],
            data: vec![0.0; dims.len()],
            dtype: DType::Float64,
        }
    }

    /// Marks the volume for integer storage. Fails unless every value is an
    /// integer representable as `i32`.
    pub fn into_int32(mut self) -> Result<Self> {
        if let Some((i, v)) = self
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !is_i32_value(**v))
        {
            return Err(Error::Argument(format!(
                "voxel {i} value {v} is not representable as int32"
            )));
        }
        self.dtype = DType::Int32;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Serializes to the volume file format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "voxel {i} is not finite ({})",
                self.data[i]
            )));
        }
        let mut out = vec![0u8; HEADER_LEN + self.len() * self.dtype.width()];
        out[0..4].copy_from_slice(MAGIC);
        LittleEndian::write_u16(&mut out[4..6], FORMAT_VERSION);
        out[6] = self.dtype.code();
        out[7] = 0;
        for (k, n) in [self.dims.nx, self.dims.ny, self.dims.nz].into_iter().enumerate() {
            let n = u32::try_from(n)
                .map_err(|_| Error::Argument(format!("dimension {n} exceeds u32")))?;
            LittleEndian::write_u32(&mut out[8 + 4 * k..12 + 4 * k], n);
        }
        for (k, s) in self.voxel_size_mm.iter().enumerate() {
            LittleEndian::write_f64(&mut out[20 + 8 * k..28 + 8 * k], *s);
        }
        let payload = &mut out[HEADER_LEN..];
        match self.dtype {
            DType::Float64 => LittleEndian::write_f64_into(&self.data, payload),
            DType::Int32 => {
                for (chunk, v) in payload.chunks_exact_mut(4).zip(&self.data) {
                    if !is_i32_value(*v) {
                        return Err(Error::Argument(format!("{v} is not an int32 value")));
                    }
                    LittleEndian::write_i32(chunk, *v as i32);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                "header",
                format!("{} bytes, need {HEADER_LEN}", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format("magic", format!("found {:?}", &bytes[0..4])));
        }
        let version = LittleEndian::read_u16(&bytes[4..6]);
        if version != FORMAT_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(bytes[6])
            .ok_or_else(|| Error::format("dtype", format!("unknown code {}", bytes[6])))?;
        if bytes[7] != 0 {
            return Err(Error::format("reserved", format!("expected 0, found {}", bytes[7])));
        }
        let mut dim = [0usize; 3];
        for (k, name) in ["nx", "ny", "nz"].iter().enumerate() {
            let n = LittleEndian::read_u32(&bytes[8 + 4 * k..12 + 4 * k]) as usize;
            if n == 0 {
                return Err(Error::format(*name, "dimension must be positive"));
            }
            dim[k] = n;
        }
        let dims = Dims::new(dim[0], dim[1], dim[2]);
        let mut voxel_size_mm = [0.0; 3];
        for (k, name) in ["sx", "sy", "sz"].iter().enumerate() {
            let s = LittleEndian::read_f64(&bytes[20 + 8 * k..28 + 8 * k]);
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::format(*name, format!("voxel size {s} must be positive")));
            }
            voxel_size_mm[k] = s;
        }
        let n = dims
            .checked_len()
            .and_then(|n| n.checked_mul(dtype.width()).map(|b| (n, b)));
        let (n, payload_len) =
            n.ok_or_else(|| Error::format("dims", format!("{dims} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::format(
                "data",
                format!(
                    "truncated: {} bytes for {n} values, need {payload_len}",
                    payload.len()
                ),
            ));
        }
        if payload.len() > payload_len {
            return Err(Error::format(
                "data",
                format!("{} trailing bytes", payload.len() - payload_len),
            ));
        }
        let mut data = vec![0.0; n];
        match dtype {
            DType::Float64 => LittleEndian::read_f64_into(payload, &mut data),
            DType::Int32 => {
                for (v, chunk) in data.iter_mut().zip(payload.chunks_exact(4)) {
                    *v = LittleEndian::read_i32(chunk) as f64;
                }
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format("data", format!("voxel {i} is not finite")));
        }
        Ok(Volume3D {
            dims,
            voxel_size_mm,
            data,
            dtype,
        })
    }
}

fn is_i32_value(v: f64) -> bool {
    v.is_finite() && v.fract() == 0.0 && v >= i32::MIN as f64 && v <= i32::MAX as f64
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let bytes = io::read_bytes(path)?;
    Volume3D::from_bytes(&bytes).map_err(|e| match e {
        Error::Format { field, message } => Error::Format {
            field,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    })
}

pub fn write_volume(v: &Volume3D, path: &Path) -> Result<()> {
    let bytes = v.to_bytes()?;
    io::write_atomic(path, &bytes)
}

/// One subject's time-by-voxel signal. Row `j` is the brain image at
/// sample `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldSeries {
    subject_id: String,
    dims: Dims,
    tr_seconds: f64,
    t: usize,
    samples: Vec<f64>,
}

impl BoldSeries {
    pub fn new(
        subject_id: impl Into<String>,
        dims: Dims,
        tr_seconds: f64,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = dims.len();
        let t = rows.len();
        let mut samples = Vec::with_capacity(t * m);
        for (j, r) in rows.into_iter().enumerate() {
            if r.len() != m {
                return Err(Error::Argument(format!(
                    "row {j} has {} voxels, expected {m}",
                    r.len()
                )));
            }
            samples.extend(r);
        }
        Self::from_flat(subject_id, dims, tr_seconds, t, samples)
    }

    /// `samples` is row-major `t × m`.
    pub fn from_flat(
        subject_id: impl Into<String>,
        dims: Dims,
        tr_seconds: f64,
        t: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(Error::Argument(format!("tr must be positive, got {tr_seconds}")));
        }
        if samples.len() != t * dims.len() {
            return Err(Error::Argument(format!(
                "{} samples do not form {t} rows of {} voxels",
                samples.len(),
                dims.len()
            )));
        }
        Ok(BoldSeries {
            subject_id: subject_id.into(),
            dims,
            tr_seconds,
            t,
            samples,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    /// Number of time samples.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of voxels.
    pub fn m(&self) -> usize {
        self.dims.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let m = self.m();
        &self.samples[j * m..(j + 1) * m]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn frame(&self, j: usize) -> Volume3D {
        Volume3D::from_data(self.dims, self.row(j).to_vec()).expect("row matches dims")
    }
}

/// Integer label volume with the voxel list of every region. Label 0 is
/// background and never a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    labels: Volume3D,
    regions: Vec<Vec<usize>>,
}

impl Atlas {
    pub fn labels(&self) -> &Volume3D {
        &self.labels
    }

    pub fn dims(&self) -> Dims {
        self.labels.dims()
    }

    /// Highest label, `L`.
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    /// Sorted voxel indices of region `id` (1-based). Empty for unknown ids.
    pub fn region(&self, id: usize) -> &[usize] {
        if id == 0 || id > self.regions.len() {
            return &[];
        }
        &self.regions[id - 1]
    }

    /// `(id, voxels)` for every region, including empty ones.
    pub fn regions(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.regions
            .iter()
            .enumerate()
            .map(|(k, r)| (k + 1, r.as_slice()))
    }

    pub fn foreground_len(&self) -> usize {
        self.regions.iter().map(Vec::len).sum()
    }
}

pub fn atlas_from_labels(labels: Volume3D) -> Result<Atlas> {
    let mut max_label = 0usize;
    for (i, &v) in labels.data().iter().enumerate() {
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= i32::MAX as f64) {
            return Err(Error::format(
                "labels",
                format!("voxel {i} has non-integer or negative label {v}"),
            ));
        }
        max_label = max_label.max(v as usize);
    }
    let mut regions = vec![Vec::new(); max_label];
    for (i, &v) in labels.data().iter().enumerate() {
        let l = v as usize;
        if l > 0 {
            regions[l - 1].push(i);
        }
    }
    let labels = labels.into_int32()?;
    Ok(Atlas { labels, regions })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub onsets: Vec<usize>,
    pub durations: Vec<usize>,
}

/// Event onsets (in samples) and durations for every category. Category
/// order is the column order of the design matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnsetSchedule {
    categories: Vec<Category>,
}

impl OnsetSchedule {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::Argument("schedule needs at least one category".into()));
        }
        for (k, c) in categories.iter().enumerate() {
            if categories[..k].iter().any(|o| o.name == c.name) {
                return Err(Error::Argument(format!("duplicate category {:?}", c.name)));
            }
            if c.onsets.len() != c.durations.len() {
                return Err(Error::Argument(format!(
                    "category {:?}: {} onsets but {} durations",
                    c.name,
                    c.onsets.len(),
                    c.durations.len()
                )));
            }
            if c.onsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Argument(format!(
                    "category {:?}: onsets must be strictly increasing",
                    c.name
                )));
            }
            if c.durations.iter().any(|&d| d == 0) {
                return Err(Error::Argument(format!(
                    "category {:?}: durations must be at least one sample",
                    c.name
                )));
            }
        }
        Ok(OnsetSchedule { categories })
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Number of categories, `p`.
    pub fn p(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    /// Checks that every event lies inside `[0, t)`.
    pub fn validate(&self, t: usize) -> Result<()> {
        for c in &self.categories {
            for (&on, &dur) in c.onsets.iter().zip(&c.durations) {
                if on + dur > t {
                    return Err(Error::Argument(format!(
                        "event {:?} at sample {on} (duration {dur}) exceeds series length {t}",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, rows) = io::parse_records(text, "onsets")?;
        io::expect_header(
            &header,
            &["category_name", "onset_sample", "duration_samples"],
            "onsets",
        )?;
        let mut cats: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
        for (r, rec) in rows.iter().enumerate() {
            if rec.len() != 3 {
                return Err(Error::format(
                    format!("onsets row {}", r + 1),
                    format!("expected 3 fields, found {}", rec.len()),
                ));
            }
            let name = rec[0].to_string();
            let on = parse_usize("onset_sample", &rec[1])?;
            let dur = parse_usize("duration_samples", &rec[2])?;
            match cats.iter_mut().find(|(n, _)| *n == name) {
                Some((_, ev)) => ev.push((on, dur)),
                None => cats.push((name, vec![(on, dur)])),
            }
        }
        let categories = cats
            .into_iter()
            .map(|(name, mut ev)| {
                ev.sort_unstable();
                Category {
                    name,
                    onsets: ev.iter().map(|e| e.0).collect(),
                    durations: ev.iter().map(|e| e.1).collect(),
                }
            })
            .collect();
        OnsetSchedule::new(categories).map_err(|e| match e {
            Error::Argument(m) => Error::format("onsets", m),
            other => other,
        })
    }

    /// Rows grouped by category in schedule order, each category's events
    /// ascending, so that parsing the text restores the same category order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("category_name,onset_sample,duration_samples\n");
        for c in &self.categories {
            for (&on, &dur) in c.onsets.iter().zip(&c.durations) {
                out.push_str(&format!("{},{on},{dur}\n", c.name));
            }
        }
        out
    }
}

pub fn read_onsets(path: &Path) -> Result<OnsetSchedule> {
    OnsetSchedule::parse(&io::read_string(path)?)
}

pub fn write_onsets(schedule: &OnsetSchedule, path: &Path) -> Result<()> {
    io::write_atomic(path, schedule.to_text().as_bytes())
}
