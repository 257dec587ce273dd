//! Experiment configuration: one TOML file, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use chda_core::channel::ChannelPrior;
use chda_core::esmda::EsmdaConfig;
use chda_core::flow::SimConfig;
use chda_core::localization::LocalizationMethod;
use chda_core::GridSpec;
use chda_scorediff::{Guidance, NetworkSpec, SamplerConfig, TrainConfig, VESchedule};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub channel: ChannelPrior,
    pub sim: SimConfig,
    /// Its `localization` field is ignored; methods come from `experiment`.
    pub esmda: EsmdaConfig,
    pub experiment: SweepConfig,
    pub diffusion: DiffusionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridSpec::default(),
            channel: ChannelPrior::default(),
            sim: SimConfig::default(),
            esmda: EsmdaConfig {
                n_super: 5000,
                ..EsmdaConfig::default()
            },
            experiment: SweepConfig::default(),
            diffusion: DiffusionConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuperSampler {
    /// Fresh draws from the channel prior.
    Geostat,
    /// Draws from the trained score model in `diffusion.weights`.
    Diffusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ensemble_sizes: Vec<usize>,
    pub methods: Vec<LocalizationMethod>,
    /// Relative observation error of the synthetic truth.
    pub noise_fraction: f64,
    pub super_sampler: SuperSampler,
    /// Write posterior ensembles and taper stacks for every cell.
    pub save_ensembles: bool,
    /// Ensemble size whose data match is plotted.
    pub data_match_ne: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ensemble_sizes: vec![50, 100, 200, 500, 1000],
            methods: LocalizationMethod::ALL.to_vec(),
            noise_fraction: 0.01,
            super_sampler: SuperSampler::Geostat,
            save_ensembles: true,
            data_match_ne: Some(500),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Trained weights, read by `sample` and by the diffusion super-sampler.
    pub weights: Option<PathBuf>,
    /// Training ensemble file; when absent `train-score` draws `n_train` fields.
    pub dataset: Option<PathBuf>,
    pub n_train: usize,
    pub network: NetworkSpec,
    pub schedule: VESchedule,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Clipping range of generated log10-permeability.
    pub bounds: [f64; 2],
    pub posterior: PosteriorConfig,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            weights: None,
            dataset: None,
            n_train: 3242,
            network: NetworkSpec::default(),
            schedule: VESchedule::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            bounds: [1.0, 4.0],
            posterior: PosteriorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PosteriorConfig {
    /// Lattice spacing of hard data in cells; 0 means no observations.
    pub spacing: usize,
    pub sigma_obs: f64,
    pub gamma: f64,
    pub steps: usize,
    /// Langevin corrector strength; 0 runs the bare guided reverse SDE.
    pub snr: f64,
    pub guidance: Guidance,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            spacing: 8,
            sigma_obs: 0.01,
            gamma: 0.1,
            steps: 2000,
            snr: 0.16,
            guidance: Guidance::Plain,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: chda_core::Error| Error::Config(e.to_string());
        self.grid.validate().map_err(bad)?;
        self.sim.validate().map_err(bad)?;
        self.esmda.validate().map_err(bad)?;
        self.diffusion
            .schedule
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.diffusion
            .train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let x = &self.experiment;
        if x.ensemble_sizes.is_empty() || x.ensemble_sizes.iter().any(|&n| n < 10) {
            return Err(Error::Config(
                "ensemble_sizes must be non-empty and each >= 10".into(),
            ));
        }
        if x.methods.is_empty() {
            return Err(Error::Config("methods must be non-empty".into()));
        }
        if !(x.noise_fraction > 0.0) {
            return Err(Error::Config("noise_fraction must be positive".into()));
        }
        let [lo, hi] = self.diffusion.bounds;
        if !(lo < hi) {
            return Err(Error::Config("diffusion.bounds must be increasing".into()));
        }
        let p = &self.diffusion.posterior;
        if !(p.sigma_obs > 0.0 && p.gamma >= 0.0 && p.steps >= 2 && p.snr >= 0.0) {
            return Err(Error::Config(
                "posterior needs sigma_obs > 0, gamma >= 0, snr >= 0 and steps >= 2".into(),
            ));
        }
        if x.super_sampler == SuperSampler::Diffusion && self.diffusion.weights.is_none() {
            return Err(Error::Config(
                "super_sampler = \"diffusion\" needs diffusion.weights".into(),
            ));
        }
        Ok(())
    }

    /// Referenced input files must exist.
    pub fn check_inputs(&self) -> Result<()> {
        for p in [&self.diffusion.weights, &self.diffusion.dataset]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    /// Canonical serialization; comments, key order and formatting drop out.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
