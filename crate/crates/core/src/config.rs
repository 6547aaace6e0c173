//! Flat run configuration: UTF-8 "key = value" lines, unknown keys
//! rejected, every value echoed into the checkpoint.

use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::objectives::LossWeights;
use crate::rng::fnv1a64;
use crate::spectra::GammaConfig;

/// Distribution family of the synthetic point-spectra field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectraModel {
    Gamma,
    Gaussian,
}

impl SpectraModel {
    pub fn tag(self) -> &'static str {
        match self {
            SpectraModel::Gamma => "gamma",
            SpectraModel::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<SpectraModel> {
        match s {
            "gamma" => Ok(SpectraModel::Gamma),
            "gaussian" => Ok(SpectraModel::Gaussian),
            other => Err(Error::Config(format!("unknown spectra model `{other}`"))),
        }
    }
}

/// Everything a run needs, in one flat struct.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // model structure
    pub bands: usize,
    pub b_feat: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub n_state: usize,
    pub frft_order: f64,
    pub backbone: String,
    // spectra synthesis
    pub gamma_alpha: f64,
    pub gamma_beta: f64,
    pub clip_max: f64,
    pub spectra_model: SpectraModel,
    pub resample_per_step: bool,
    // loss weights
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    // training protocol
    pub steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub omega: f64,
    pub lr0: f64,
    pub decay_power: f64,
    pub eval_interval: u64,
    // data and outputs
    pub out_dir: String,
    pub data_dir: String,
    pub n_train: usize,
    pub n_val: usize,
    pub cube_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            bands: 8,
            b_feat: 8,
            n_blocks: 3,
            n_heads: 1,
            n_state: 8,
            frft_order: 0.5,
            backbone: "dypro".into(),
            gamma_alpha: 2.0,
            gamma_beta: 0.25,
            clip_max: 1.0,
            spectra_model: SpectraModel::Gamma,
            resample_per_step: true,
            beta1: 1.0,
            beta2: 0.3,
            beta3: 0.3,
            steps: 200,
            batch_size: 1,
            patch_size: 16,
            omega: 0.01,
            lr0: 2e-4,
            decay_power: 1.5,
            eval_interval: 50,
            out_dir: "out".into(),
            data_dir: "data".into(),
            n_train: 8,
            n_val: 2,
            cube_size: 16,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:tt),+ $(,)?) => {
        impl RunConfig {
            /// Parse "key = value" text over the defaults.
            pub fn parse(text: &str) -> Result<RunConfig> {
                let mut cfg = RunConfig::default();
                for (ln, raw) in text.lines().enumerate() {
                    let line = raw.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (k, v) = line.split_once('=').ok_or_else(|| {
                        Error::Config(format!("line {} is not `key = value`: {raw}", ln + 1))
                    })?;
                    let (k, v) = (k.trim(), v.trim());
                    match k {
                        $(stringify!($key) => {
                            cfg.$key = parse_value!($kind, k, v)?;
                        })+
                        other => {
                            return Err(Error::Config(format!("unknown key `{other}`")));
                        }
                    }
                }
                cfg.validate()?;
                Ok(cfg)
            }

            /// Canonical serialization: every key, fixed order.
            pub fn to_canonical_text(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str(stringify!($key));
                    out.push_str(" = ");
                    out.push_str(&display_value!($kind, &self.$key));
                    out.push('\n');
                )+
                out
            }
        }
    };
}

macro_rules! parse_value {
    (u64, $k:expr, $v:expr) => {
        $v.parse::<u64>()
            .map_err(|e| Error::Config(format!("key `{}`: {e}", $k)))
    };
    (usize, $k:expr, $v:expr) => {
        $v.parse::<usize>()
            .map_err(|e| Error::Config(format!("key `{}`: {e}", $k)))
    };
    (f64, $k:expr, $v:expr) => {
        $v.parse::<f64>()
            .map_err(|e| Error::Config(format!("key `{}`: {e}", $k)))
    };
    (bool, $k:expr, $v:expr) => {
        match $v {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Config(format!(
                "key `{}`: expected true/false, got `{other}`",
                $k
            ))),
        }
    };
    (string, $k:expr, $v:expr) => {
        Ok::<String, Error>($v.to_string())
    };
    (spectra, $k:expr, $v:expr) => {
        SpectraModel::parse($v)
    };
}

macro_rules! display_value {
    (spectra, $v:expr) => {
        $v.tag().to_string()
    };
    ($kind:tt, $v:expr) => {
        format!("{}", $v)
    };
}

config_keys! {
    seed: u64,
    bands: usize,
    b_feat: usize,
    n_blocks: usize,
    n_heads: usize,
    n_state: usize,
    frft_order: f64,
    backbone: string,
    gamma_alpha: f64,
    gamma_beta: f64,
    clip_max: f64,
    spectra_model: spectra,
    resample_per_step: bool,
    beta1: f64,
    beta2: f64,
    beta3: f64,
    steps: u64,
    batch_size: usize,
    patch_size: usize,
    omega: f64,
    lr0: f64,
    decay_power: f64,
    eval_interval: u64,
    out_dir: string,
    data_dir: string,
    n_train: usize,
    n_val: usize,
    cube_size: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.gamma_config().validate()?;
        self.loss_weights().validate()?;
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega {} outside [0,1]", self.omega)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if self.patch_size % 4 != 0 || self.patch_size == 0 {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of 4",
                self.patch_size
            )));
        }
        if self.cube_size < self.patch_size {
            return Err(Error::Config(format!(
                "cube_size {} smaller than patch_size {}",
                self.cube_size, self.patch_size
            )));
        }
        if self.lr0 <= 0.0 || self.decay_power < 0.0 {
            return Err(Error::Config("lr0 must be positive, decay_power nonnegative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            bands: self.bands,
            b_feat: self.b_feat,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            n_state: self.n_state,
            frft_order: self.frft_order,
            seed: self.seed,
            backbone: self.backbone.clone(),
        }
    }

    pub fn gamma_config(&self) -> GammaConfig {
        GammaConfig {
            alpha: self.gamma_alpha,
            beta: self.gamma_beta,
            clip_max: self.clip_max,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
        }
    }

    /// Hash over the keys that fix the network structure; checkpoints must
    /// agree on it before evaluation.
    pub fn model_hash(&self) -> u64 {
        let text = format!(
            "bands={} b_feat={} n_blocks={} n_heads={} n_state={} frft_order={} backbone={}",
            self.bands,
            self.b_feat,
            self.n_blocks,
            self.n_heads,
            self.n_state,
            self.frft_order,
            self.backbone
        );
        fnv1a64(text.as_bytes())
    }

    /// Environment override: PIXSSR_SEED, when set, replaces the config seed.
    pub fn apply_seed_override(&mut self, env_value: Option<&str>) -> Result<()> {
        if let Some(v) = env_value {
            self.seed = v
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("PIXSSR_SEED: {e}")))?;
        }
        Ok(())
    }
}
