//! Seeded synthetic experiments with known ground truth.
//!
//! A Voronoi atlas is grown inside an ellipsoidal brain mask. Every category
//! gets its own set of informative regions, and an optional shared region
//! responds to all categories at a lower amplitude. The BOLD signal of each
//! subject is the design matrix times the true regressor maps plus Gaussian
//! noise, optionally AR(1) in time. The structure (atlas, true maps) comes
//! from stream 0 of the seeded generator; subject `u` draws from stream
//! `u + 1`, so subjects can be generated independently and in parallel.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Experiment;
use crate::glm::{build_design, canonical_hrf, convolve_causal, boxcar};
use crate::pipeline::{PipelineParams, SubjectData, DEFAULT_HRF_LENGTH_SECONDS};
use crate::volume::{atlas_from_labels, Atlas, BoldSeries, Category, Dims, OnsetSchedule, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Single-sample events.
    #[default]
    Event,
    /// Events lasting `block_length` samples.
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: usize,
    pub categories: usize,
    pub events_per_category: usize,
    /// Samples per subject.
    pub t: usize,
    pub tr_seconds: f64,
    pub dims: [usize; 3],
    pub regions: usize,
    pub informative_regions: usize,
    pub amplitude: f64,
    pub noise_std: f64,
    /// AR(1) coefficient of the temporal noise; 0 gives white noise.
    pub noise_rho: f64,
    /// Amplitude of the region shared by all categories, relative to
    /// `amplitude`; 0 disables it.
    pub shared_amplitude: f64,
    pub design: DesignKind,
    pub block_length: usize,
    /// Minimum distance between consecutive onsets, in samples.
    pub spacing: usize,
    /// First onset.
    pub lead_in: usize,
    pub hrf_length_seconds: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            subjects: 8,
            categories: 2,
            events_per_category: 6,
            t: 270,
            tr_seconds: 1.0,
            dims: [12, 12, 12],
            regions: 20,
            informative_regions: 3,
            amplitude: 1.0,
            noise_std: 0.5,
            noise_rho: 0.0,
            shared_amplitude: 0.0,
            design: DesignKind::Event,
            block_length: 4,
            spacing: 20,
            lead_in: 5,
            hrf_length_seconds: DEFAULT_HRF_LENGTH_SECONDS,
        }
    }
}

impl SynthConfig {
    pub fn category_names(&self) -> Vec<String> {
        (1..=self.categories).map(|i| format!("category{i}")).collect()
    }

    fn duration(&self) -> usize {
        match self.design {
            DesignKind::Event => 1,
            DesignKind::Block => self.block_length,
        }
    }

    fn events(&self) -> usize {
        self.categories * self.events_per_category
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.subjects == 0 || self.categories == 0 || self.events_per_category == 0 {
            return fail("subjects, categories and events_per_category must be positive".into());
        }
        if self.dims.contains(&0) {
            return fail(format!("dims must be positive, got {:?}", self.dims));
        }
        if !(self.tr_seconds.is_finite() && self.tr_seconds > 0.0) {
            return fail(format!("tr_seconds must be positive, got {}", self.tr_seconds));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return fail(format!("amplitude must be non-negative, got {}", self.amplitude));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if !(self.noise_rho.is_finite() && self.noise_rho.abs() < 1.0) {
            return fail(format!("noise_rho must lie in (-1, 1), got {}", self.noise_rho));
        }
        if !(self.shared_amplitude.is_finite() && self.shared_amplitude >= 0.0) {
            return fail(format!("shared_amplitude must be non-negative, got {}", self.shared_amplitude));
        }
        if self.design == DesignKind::Block && self.block_length == 0 {
            return fail("block_length must be positive".into());
        }
        if self.spacing < self.duration() || self.spacing == 0 {
            return fail(format!(
                "spacing {} is shorter than the event duration {}",
                self.spacing,
                self.duration()
            ));
        }
        let used = self.informative_regions * self.categories + usize::from(self.shared_amplitude > 0.0);
        if self.regions == 0 || used > self.regions {
            return fail(format!(
                "{used} informative regions requested but the atlas has {}",
                self.regions
            ));
        }
        let dims = Dims::new(self.dims[0], self.dims[1], self.dims[2]);
        let mask = brain_mask(dims).iter().filter(|&&b| b).count();
        if mask < self.regions {
            return fail(format!("brain mask has {mask} voxels, fewer than {} regions", self.regions));
        }
        // every event needs a full spacing window before the series ends
        let needed = self.lead_in + self.events() * self.spacing;
        if needed > self.t {
            return fail(format!(
                "{} events with spacing {} after lead-in {} need t >= {needed}, got {}",
                self.events(),
                self.spacing,
                self.lead_in,
                self.t
            ));
        }
        Ok(())
    }
}

/// Hidden quantities of a generated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub categories: Vec<String>,
    /// Informative region ids per category.
    pub informative: Vec<Vec<usize>>,
    pub shared_region: Option<usize>,
    /// `[subject][category][event]` sample index of the maximum of that
    /// event's own response.
    pub peak_times: Vec<Vec<Vec<usize>>>,
    /// True regressor map per category; stored as volumes, not in JSON.
    #[serde(skip)]
    pub betas: Vec<Vec<f64>>,
}

fn brain_mask(dims: Dims) -> Vec<bool> {
    let c = [
        (dims.nx as f64 - 1.0) / 2.0,
        (dims.ny as f64 - 1.0) / 2.0,
        (dims.nz as f64 - 1.0) / 2.0,
    ];
    let r = [dims.nx as f64 / 2.0, dims.ny as f64 / 2.0, dims.nz as f64 / 2.0];
    (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let p = [x as f64, y as f64, z as f64];
            (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum::<f64>() <= 1.0
        })
        .collect()
}

/// Voronoi parcellation of the mask around `regions` distinct seed voxels;
/// ties go to the lower region id.
fn voronoi_atlas(dims: Dims, regions: usize, rng: &mut ChaCha8Rng) -> Result<Atlas> {
    let mask = brain_mask(dims);
    let inside: Vec<usize> = (0..dims.len()).filter(|&i| mask[i]).collect();
    let seeds: Vec<(f64, f64, f64)> = rand::seq::index::sample(rng, inside.len(), regions)
        .into_iter()
        .map(|k| {
            let (x, y, z) = dims.coords(inside[k]);
            (x as f64, y as f64, z as f64)
        })
        .collect();
    let mut labels = vec![0.0; dims.len()];
    for &i in &inside {
        let (x, y, z) = dims.coords(i);
        let (x, y, z) = (x as f64, y as f64, z as f64);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, s) in seeds.iter().enumerate() {
            let d = (x - s.0).powi(2) + (y - s.1).powi(2) + (z - s.2).powi(2);
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        labels[i] = (best + 1) as f64;
    }
    atlas_from_labels(Volume3D::from_data(dims, labels)?)
}

fn schedule_for(cfg: &SynthConfig, names: &[String], rng: &mut ChaCha8Rng) -> Result<OnsetSchedule> {
    let mut order: Vec<usize> = (0..cfg.events()).map(|k| k % cfg.categories).collect();
    order.shuffle(rng);
    let mut cats: Vec<Category> = names
        .iter()
        .map(|n| Category {
            name: n.clone(),
            onsets: Vec::new(),
            durations: Vec::new(),
        })
        .collect();
    for (k, &c) in order.iter().enumerate() {
        cats[c].onsets.push(cfg.lead_in + k * cfg.spacing);
        cats[c].durations.push(cfg.duration());
    }
    OnsetSchedule::new(cats)
}

fn subject(
    cfg: &SynthConfig,
    u: usize,
    dims: Dims,
    names: &[String],
    betas: &[Vec<f64>],
) -> Result<(SubjectData, Vec<Vec<usize>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u as u64 + 1);
    let schedule = schedule_for(cfg, names, &mut rng)?;
    let hrf = canonical_hrf(cfg.tr_seconds, cfg.hrf_length_seconds)?;
    let design = build_design(&schedule, &hrf, cfg.t)?;

    let peaks = schedule
        .categories()
        .iter()
        .map(|c| {
            c.onsets
                .iter()
                .zip(&c.durations)
                .map(|(&on, &dur)| {
                    let r = convolve_causal(&boxcar(&[on], &[dur], cfg.t), hrf.samples());
                    let mut best = on;
                    for j in on..cfg.t {
                        if r[j] > r[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect();

    let m = dims.len();
    let scale = (1.0 - cfg.noise_rho * cfg.noise_rho).sqrt();
    let mut state = vec![0.0f64; m];
    let mut samples = Vec::with_capacity(cfg.t * m);
    for j in 0..cfg.t {
        for v in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            state[v] = if j == 0 { z } else { cfg.noise_rho * state[v] + scale * z };
            let signal: f64 = (0..cfg.categories).map(|i| design.column(i)[j] * betas[i][v]).sum();
            samples.push(signal + cfg.noise_std * state[v]);
        }
    }
    let bold = BoldSeries::from_flat(format!("sub-{:02}", u + 1), dims, cfg.tr_seconds, cfg.t, samples)?;
    Ok((SubjectData { bold, schedule }, peaks))
}

/// Builds the experiment and its ground truth. Identical configurations give
/// bit-identical output.
pub fn generate(cfg: &SynthConfig) -> Result<(Experiment, GroundTruth)> {
    cfg.validate()?;
    let dims = Dims::new(cfg.dims[0], cfg.dims[1], cfg.dims[2]);
    let names = cfg.category_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let atlas = voronoi_atlas(dims, cfg.regions, &mut rng)?;

    let mut ids: Vec<usize> = (1..=cfg.regions).collect();
    ids.shuffle(&mut rng);
    let informative: Vec<Vec<usize>> = (0..cfg.categories)
        .map(|i| {
            let mut r = ids[i * cfg.informative_regions..(i + 1) * cfg.informative_regions].to_vec();
            r.sort_unstable();
            r
        })
        .collect();
    let shared_region = (cfg.shared_amplitude > 0.0).then(|| ids[cfg.categories * cfg.informative_regions]);

    let mut betas = vec![vec![0.0; dims.len()]; cfg.categories];
    for (i, regions) in informative.iter().enumerate() {
        for &l in regions {
            for &k in atlas.region(l) {
                betas[i][k] = cfg.amplitude * rng.random_range(0.5..1.5);
            }
        }
    }
    if let Some(l) = shared_region {
        for &k in atlas.region(l) {
            let b = cfg.shared_amplitude * cfg.amplitude * rng.random_range(0.5..1.5);
            for map in &mut betas {
                map[k] = b;
            }
        }
    }
    let reference_data: Vec<f64> = (0..dims.len())
        .map(|k| betas.iter().map(|b| b[k]).sum::<f64>() / cfg.categories as f64)
        .collect();
    let reference = Volume3D::from_data(dims, reference_data)?;

    let generated = (0..cfg.subjects)
        .into_par_iter()
        .map(|u| subject(cfg, u, dims, &names, &betas))
        .collect::<Result<Vec<_>>>()?;
    let (subjects, peak_times): (Vec<_>, Vec<_>) = generated.into_iter().unzip();

    let experiment = Experiment {
        subjects,
        atlas,
        reference,
        params: PipelineParams {
            hrf_length_seconds: cfg.hrf_length_seconds,
            ..PipelineParams::default()
        },
    };
    let truth = GroundTruth {
        config: cfg.clone(),
        categories: names,
        informative,
        shared_region,
        peak_times,
        betas,
    };
    Ok((experiment, truth))
}
