//! Run configuration: a flat TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use mrnr::glm::NoiseModel;
use mrnr::model::SvmOptions;
use mrnr::register::{RegistrationConfig, RegistrationMode};
use mrnr::synth::{DesignKind, SynthConfig};
use mrnr::{Error, PipelineParams, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Identity,
    Ar1,
    Ar1Estimated,
}

/// Every key the config file accepts, with its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Experiment directory; `<out_dir>/data` when unset.
    pub data_dir: Option<PathBuf>,
    /// Atlas label volume; `<data_dir>/atlas.mrnr` when unset.
    pub atlas: Option<PathBuf>,
    /// Reference volume; `<data_dir>/reference.mrnr` when unset.
    pub reference: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Whether `pipeline` starts by simulating; defaults to true exactly
    /// when no `data_dir` is given.
    pub simulate: Option<bool>,

    pub sigma_g: f64,
    pub svm_c: f64,
    pub svm_bias: bool,
    pub noise_model: NoiseKind,
    /// AR(1) coefficient used when `noise_model = "ar1"`.
    pub noise_rho: f64,
    pub hrf_length_seconds: f64,
    pub registration: RegistrationMode,
    pub histogram_bins: usize,
    pub translation_range: f64,
    pub translation_step: f64,
    pub scales: Vec<f64>,

    /// Positive category; the first category when unset.
    pub target: Option<String>,
    pub seed: u64,
    /// Also evaluate with labels permuted within each subject.
    pub shuffle_control: bool,

    pub synth_subjects: usize,
    pub synth_categories: usize,
    pub synth_events_per_category: usize,
    pub synth_samples: usize,
    pub synth_tr_seconds: f64,
    pub synth_dims: [usize; 3],
    pub synth_regions: usize,
    pub synth_informative_regions: usize,
    pub synth_amplitude: f64,
    pub synth_noise_std: f64,
    pub synth_noise_rho: f64,
    pub synth_shared_amplitude: f64,
    pub synth_design: DesignKind,
    pub synth_block_length: usize,
    pub synth_spacing: usize,
    pub synth_lead_in: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        let s = SynthConfig::default();
        PipelineConfig {
            data_dir: None,
            atlas: None,
            reference: None,
            out_dir: PathBuf::from("mrnr-out"),
            simulate: None,
            sigma_g: p.sigma_g,
            svm_c: p.svm.c,
            svm_bias: p.svm.bias,
            noise_model: NoiseKind::Identity,
            noise_rho: 0.0,
            hrf_length_seconds: p.hrf_length_seconds,
            registration: p.registration.mode,
            histogram_bins: p.registration.histogram_bins,
            translation_range: p.registration.translation_range,
            translation_step: p.registration.translation_step,
            scales: p.registration.scales.clone(),
            target: None,
            seed: s.seed,
            shuffle_control: true,
            synth_subjects: s.subjects,
            synth_categories: s.categories,
            synth_events_per_category: s.events_per_category,
            synth_samples: s.t,
            synth_tr_seconds: s.tr_seconds,
            synth_dims: s.dims,
            synth_regions: s.regions,
            synth_informative_regions: s.informative_regions,
            synth_amplitude: s.amplitude,
            synth_noise_std: s.noise_std,
            synth_noise_rho: s.noise_rho,
            synth_shared_amplitude: s.shared_amplitude,
            synth_design: s.design,
            synth_block_length: s.block_length,
            synth_spacing: s.spacing,
            synth_lead_in: s.lead_in,
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sigma_g: Option<f64>,
    pub svm_c: Option<f64>,
    pub target: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&mrnr::io::read_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.sigma_g {
            self.sigma_g = v;
        }
        if let Some(v) = o.svm_c {
            self.svm_c = v;
        }
        if let Some(v) = &o.target {
            self.target = Some(v.clone());
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = &o.data_dir {
            self.data_dir = Some(v.clone());
        }
    }

    /// Fills in every derived default so the echoed config is complete.
    pub fn resolve(mut self) -> Result<Self> {
        if self.simulate.is_none() {
            self.simulate = Some(self.data_dir.is_none());
        }
        let data = self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"));
        self.atlas.get_or_insert_with(|| data.join("atlas.mrnr"));
        self.reference.get_or_insert_with(|| data.join("reference.mrnr"));
        self.data_dir = Some(data);
        self.params()?;
        self.synth().validate()?;
        Ok(self)
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().expect("resolved config")
    }

    pub fn atlas_path(&self) -> &Path {
        self.atlas.as_deref().expect("resolved config")
    }

    pub fn reference_path(&self) -> &Path {
        self.reference.as_deref().expect("resolved config")
    }

    pub fn params(&self) -> Result<PipelineParams> {
        if !(self.sigma_g.is_finite() && self.sigma_g > 0.0) {
            return Err(Error::Config(format!("sigma_g must be positive, got {}", self.sigma_g)));
        }
        if !(self.svm_c.is_finite() && self.svm_c > 0.0) {
            return Err(Error::Config(format!("svm_c must be positive, got {}", self.svm_c)));
        }
        let noise = match self.noise_model {
            NoiseKind::Identity => NoiseModel::Identity,
            NoiseKind::Ar1 => {
                if !(self.noise_rho.is_finite() && self.noise_rho.abs() < 1.0) {
                    return Err(Error::Config(format!("noise_rho must lie in (-1, 1), got {}", self.noise_rho)));
                }
                NoiseModel::Ar1 { rho: self.noise_rho }
            }
            NoiseKind::Ar1Estimated => NoiseModel::Ar1Estimated,
        };
        let registration = RegistrationConfig {
            histogram_bins: self.histogram_bins,
            mode: self.registration,
            translation_range: self.translation_range,
            translation_step: self.translation_step,
            scales: self.scales.clone(),
        };
        registration
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(PipelineParams {
            sigma_g: self.sigma_g,
            hrf_length_seconds: self.hrf_length_seconds,
            noise,
            registration,
            svm: SvmOptions {
                c: self.svm_c,
                bias: self.svm_bias,
                ..SvmOptions::default()
            },
        })
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            subjects: self.synth_subjects,
            categories: self.synth_categories,
            events_per_category: self.synth_events_per_category,
            t: self.synth_samples,
            tr_seconds: self.synth_tr_seconds,
            dims: self.synth_dims,
            regions: self.synth_regions,
            informative_regions: self.synth_informative_regions,
            amplitude: self.synth_amplitude,
            noise_std: self.synth_noise_std,
            noise_rho: self.synth_noise_rho,
            shared_amplitude: self.synth_shared_amplitude,
            design: self.synth_design,
            block_length: self.synth_block_length,
            spacing: self.synth_spacing,
            lead_in: self.synth_lead_in,
            hrf_length_seconds: self.hrf_length_seconds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::parse("sigma_g = 1.0\nsigma_q = 2.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("sigma_q"), "{err}");
    }

    #[test]
    fn flags_override_file() {
        let mut c = PipelineConfig::parse("sigma_g = 2.0\nsvm_c = 0.5\n").unwrap();
        c.apply(&Overrides {
            sigma_g: Some(3.0),
            ..Overrides::default()
        });
        assert_eq!(c.sigma_g, 3.0);
        assert_eq!(c.svm_c, 0.5);
    }

    #[test]
    fn resolve_fills_paths() {
        let c = PipelineConfig::parse("out_dir = \"o\"").unwrap().resolve().unwrap();
        assert_eq!(c.simulate, Some(true));
        assert_eq!(c.data_dir(), Path::new("o/data"));
        assert_eq!(c.atlas_path(), Path::new("o/data/atlas.mrnr"));
        let c = PipelineConfig::parse("data_dir = \"d\"").unwrap().resolve().unwrap();
        assert_eq!(c.simulate, Some(false));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["sigma_g = 0.0", "svm_c = -1.0", "histogram_bins = 1", "noise_model = \"ar1\"\nnoise_rho = 1.5"] {
            let r = PipelineConfig::parse(text).unwrap().resolve();
            assert!(matches!(r, Err(Error::Config(_))), "{text}");
        }
    }
}
