//! Run configuration: one JSON document describing a reproducible run.

use std::path::{Path, PathBuf};

use cwtnet_core::data::{PyramidStyle, SynthSpec};
use cwtnet_core::{AdamConfig, Error, LossKind, NetworkConfig, Objective, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Triples generated in memory; the 5:1 split's train part is used.
    Synthetic(SynthSpec),
    /// A dataset written by `cwtnet synth` or laid out the same way.
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub objective: Objective,
    pub optimizer: AdamConfig,
    pub data: DataSource,
    pub steps: u64,
    pub batch_size: usize,
    /// Steps between training-set PSNR/SSIM evaluations; 0 disables them.
    pub eval_every: u64,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Seed of batch sampling and augmentation.
    pub seed: u64,
}

impl RunConfig {
    /// Named preset: `desk` or `paper`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Self::desk(),
            "paper" => Self::paper(),
            _ => Err(Error::usage(format!("unknown preset {name}; expected desk or paper"))),
        }
    }

    /// Two blocks of 16 channels on 32-pixel patches, 300 steps at scale 2.
    pub fn desk() -> Result<Self> {
        let network = NetworkConfig::new(2, 2, 16)?;
        Ok(RunConfig {
            network,
            objective: Objective::default(),
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            data: DataSource::Synthetic(SynthSpec {
                seed: 7,
                count: 4,
                scale: 2,
                p: 32,
                style: PyramidStyle::AreaAverage,
            }),
            steps: 300,
            batch_size: 4,
            eval_every: 50,
            checkpoint_every: 100,
            seed: 1,
        })
    }

    /// Twelve blocks of 64 channels on 64-pixel patches.
    pub fn paper() -> Result<Self> {
        let network = NetworkConfig::new(2, 12, 64)?;
        Ok(RunConfig {
            network,
            objective: Objective::default(),
            optimizer: AdamConfig::default(),
            data: DataSource::Synthetic(SynthSpec {
                seed: 7,
                count: 120,
                scale: 2,
                p: 64,
                style: PyramidStyle::AreaAverage,
            }),
            steps: 1000,
            batch_size: 16,
            eval_every: 100,
            checkpoint_every: 100,
            seed: 1,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::usage(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Consistency checks that must hold before step 0.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.objective.weights.validate()?;
        self.optimizer.validate()?;
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            if s.scale != self.network.scale {
                return Err(Error::config(format!(
                    "data scale {} differs from network scale {}",
                    s.scale, self.network.scale
                )));
            }
            if s.count == 0 {
                return Err(Error::config("synthetic count must be at least 1"));
            }
            self.check_patch(s.p)?;
        }
        Ok(())
    }

    /// SSIM terms need at least an 11-pixel window on the WT output.
    pub fn check_patch(&self, p: usize) -> Result<()> {
        if p == 0 || !p.is_multiple_of(2) {
            return Err(Error::config(format!("patch size {p} must be positive and even")));
        }
        if self.objective.loss == LossKind::Ours && p < cwtnet_core::metrics::SSIM_WINDOW {
            return Err(Error::config(format!(
                "patch size {p} is smaller than the SSIM window {}",
                cwtnet_core::metrics::SSIM_WINDOW
            )));
        }
        Ok(())
    }
}
