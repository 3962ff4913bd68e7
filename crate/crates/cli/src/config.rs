//! Run configuration: presets, JSON config files, and flag overrides.
//! Precedence is preset (or config file) < individual CLI flags; every
//! report echoes the resolved configuration verbatim.

use std::path::PathBuf;

use clap::ValueEnum;
use idattn::encoder::{EncoderConfig, Variant};
use idattn::net::AdamParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl OptimConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Dataset manifest path; absent for random-init analysis runs.
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// d_e = 128, ffn 512, 5 epochs: finishes in minutes on a laptop CPU.
    Desk,
    /// d_e = 512, ffn 2048, 20 epochs: the reference dimensions.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Con,
    Add,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Con => Variant::Con,
            VariantArg::Add => Variant::Add,
        }
    }
}

pub fn preset_config(preset: Preset) -> RunConfig {
    match preset {
        Preset::Desk => RunConfig {
            encoder: EncoderConfig {
                d_e: 128,
                d_k: 16,
                d_v: 16,
                h: 8,
                d_s_max: 128,
                variant: Variant::Con,
                ffn_hidden: 512,
                n_classes: 2,
                vocab_size: 1000,
            },
            optim: OptimConfig {
                lr: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                epochs: 5,
                batch_size: 256,
            },
            seed: 1,
            dataset: None,
            out_dir: PathBuf::from("runs/desk"),
        },
        Preset::Paper => RunConfig {
            encoder: EncoderConfig {
                d_e: 512,
                d_k: 64,
                d_v: 64,
                h: 8,
                d_s_max: 512,
                variant: Variant::Con,
                ffn_hidden: 2048,
                n_classes: 2,
                vocab_size: 1000,
            },
            optim: OptimConfig {
                lr: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                epochs: 20,
                batch_size: 256,
            },
            seed: 1,
            dataset: None,
            out_dir: PathBuf::from("runs/paper"),
        },
    }
}

/// Flags shared by every experiment subcommand. Long-form only.
#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Baseline configuration (ignored when --config is given).
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON file with a full or partial RunConfig; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Head combination variant; re-derives d_v unless --d-v is given.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub d_v: Option<usize>,
    /// Number of attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_s_max: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset manifest JSON (see README for the schema).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl CommonArgs {
    /// Preset/config-file base, then field-wise flag overrides, then the
    /// variant's d_v tie unless d_v was pinned explicitly.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => preset_config(self.preset.unwrap_or(Preset::Desk)),
        };

        if let Some(v) = self.d_e {
            cfg.encoder.d_e = v;
        }
        if let Some(v) = self.d_k {
            cfg.encoder.d_k = v;
        }
        if let Some(v) = self.heads {
            cfg.encoder.h = v;
        }
        if let Some(v) = self.d_s_max {
            cfg.encoder.d_s_max = v;
        }
        if let Some(v) = self.ffn_hidden {
            cfg.encoder.ffn_hidden = v;
        }
        if let Some(v) = self.n_classes {
            cfg.encoder.n_classes = v;
        }
        if let Some(v) = self.vocab_size {
            cfg.encoder.vocab_size = v;
        }
        if let Some(v) = self.variant {
            cfg.encoder.variant = v.into();
        }

        // d_v follows the variant tie whenever geometry changed and no
        // explicit d_v was requested.
        match self.d_v {
            Some(v) => cfg.encoder.d_v = v,
            None => {
                let retie = self.variant.is_some() || self.d_e.is_some() || self.heads.is_some();
                if retie {
                    cfg.encoder.d_v = match cfg.encoder.variant {
                        Variant::Con => cfg.encoder.d_e / cfg.encoder.h.max(1),
                        Variant::Add => cfg.encoder.d_e,
                    };
                }
            }
        }

        if let Some(v) = self.epochs {
            cfg.optim.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.optim.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(p) = &self.manifest {
            cfg.dataset = Some(p.clone());
        }
        if let Some(p) = &self.out_dir {
            cfg.out_dir = p.clone();
        }

        Ok(cfg)
    }
}
