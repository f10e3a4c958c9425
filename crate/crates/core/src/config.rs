//! Flat `key=value` configuration.
//!
//! One setting per line, dotted section prefixes (`sampler.pool_size=128`),
//! `#` starts a comment. Unknown keys and unparsable values are errors.
//! Overrides given as `key=value` strings are applied after the file.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::datasets::SynthConfig;
use crate::error::{Error, Result};
use crate::geo::GeoConfig;
use crate::losses::Direction;
use crate::sampler::{SamplerConfig, Strategy};
use crate::trainer::{Objective, TrainConfig};

/// Everything a run needs. The sampler, loss, and geo settings live inside
/// [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(usize, u64, f64, bool, Strategy);

impl ConfigValue for Objective {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        self.name().to_owned()
    }
}

impl ConfigValue for Direction {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "query_to_ref" => Ok(Direction::QueryToRef),
            "ref_to_query" => Ok(Direction::RefToQuery),
            "symmetric" => Ok(Direction::Symmetric),
            _ => Err(format!("unknown direction `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            Direction::QueryToRef => "query_to_ref",
            Direction::RefToQuery => "ref_to_query",
            Direction::Symmetric => "symmetric",
        }
        .to_owned()
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in serialisation order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl Config {
            fn set_field(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $($key => self.$($field).+ = ConfigValue::parse_value(value)?,)*
                    _ => return Err("unknown key".into()),
                }
                Ok(())
            }

            fn field_lines(&self) -> Vec<String> {
                vec![$(format!("{}={}", $key, self.$($field).+.render())),*]
            }
        }
    };
}

config_keys! {
    "synth.n_pairs" => synth.n_pairs;
    "synth.latent_dim" => synth.latent_dim;
    "synth.view_dim" => synth.view_dim;
    "synth.noise_sigma" => synth.noise_sigma;
    "synth.map_extent_m" => synth.map_extent_m;
    "synth.n_semi_positives" => synth.n_semi_positives;
    "synth.spatial_weight" => synth.spatial_weight;
    "synth.spatial_scale_m" => synth.spatial_scale_m;
    "synth.spatial_dims" => synth.spatial_dims;
    "synth.seed" => synth.seed;
    "sampler.batch_size" => train.sampler.batch_size;
    "sampler.pool_size" => train.sampler.pool_size;
    "sampler.picks_per_anchor" => train.sampler.picks_per_anchor;
    "sampler.refresh_every" => train.sampler.refresh_every;
    "sampler.gps_epochs" => train.sampler.gps_epochs;
    "sampler.strategy" => train.sampler.strategy;
    "sampler.seed" => train.sampler.seed;
    "loss.label_smoothing" => train.loss.label_smoothing;
    "loss.logit_scale" => train.loss.logit_scale;
    "loss.logit_scale_max" => train.loss.logit_scale_max;
    "loss.direction" => train.loss.direction;
    "train.epochs" => train.epochs;
    "train.lr_max" => train.lr_max;
    "train.warmup_epochs" => train.warmup_epochs;
    "train.weight_decay" => train.adam.weight_decay;
    "train.beta1" => train.adam.beta1;
    "train.beta2" => train.adam.beta2;
    "train.adam_eps" => train.adam.eps;
    "train.objective" => train.objective;
    "train.triplet_margin" => train.triplet_margin;
    "train.hidden_dim" => train.hidden_dim;
    "train.embed_dim" => train.embed_dim;
    "train.shared_weights" => train.shared_weights;
    "train.seed" => train.seed;
    "geo.earth_radius_m" => train.geo.earth_radius_m;
}

impl Config {
    pub fn sampler(&self) -> &SamplerConfig {
        &self.train.sampler
    }

    pub fn geo(&self) -> &GeoConfig {
        &self.train.geo
    }

    /// Applies one `key=value` assignment; `line` is used in errors.
    pub fn apply(&mut self, assignment: &str, line: usize) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            key: assignment.trim().to_owned(),
            line,
            message: "expected key=value".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        self.set_field(key, value).map_err(|message| Error::Config {
            key: key.to_owned(),
            line,
            message,
        })
    }

    pub fn parse_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                cfg.apply(line, i + 1)?;
            }
        }
        for (i, o) in overrides.iter().enumerate() {
            // overrides are numbered after the file's last line
            cfg.apply(o, text.lines().count() + i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        self.field_lines().into_iter().map(|l| l + "\n").collect()
    }

    /// SHA-256 of [`Config::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Reads `path` (absent path = defaults only) and applies `overrides`.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    Config::parse_str(&text, overrides)
}
