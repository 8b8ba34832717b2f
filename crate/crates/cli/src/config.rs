//! Run configuration. A TOML file is overridden by command-line flags, which
//! are overridden by `SCENECAUSE_*` environment variables.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "SCENECAUSE_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub encoding: Option<String>,
    pub lexicon: Option<PathBuf>,
    pub humans: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub distractors: Option<PathBuf>,
    pub personas: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub plan: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
    pub max_tokens: Option<u32>,
}

macro_rules! overlay {
    ($self:ident, $other:ident, $($field:ident),*) => {
        $( if $other.$field.is_some() { $self.$field = $other.$field.clone(); } )*
    };
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| crate::Validation(format!("config {}: {e}", path.display())).into())
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(mut self, other: &Config) -> Self {
        overlay!(
            self, other, seed, encoding, lexicon, humans, templates, distractors, personas, parallelism, plan,
            endpoint, model, timeout_secs, retries, max_tokens
        );
        self
    }

    /// Reads every field from `SCENECAUSE_<FIELD>` through `lookup`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |field: &str| lookup(&format!("{ENV_PREFIX}{}", field.to_uppercase()));
        fn parse<T: FromStr>(field: &str, value: Option<String>) -> Result<Option<T>>
        where
            T::Err: std::fmt::Display,
        {
            value
                .map(|v| {
                    v.parse::<T>()
                        .map_err(|e| crate::Validation(format!("{ENV_PREFIX}{}={v:?}: {e}", field.to_uppercase())).into())
                })
                .transpose()
        }
        Ok(Config {
            seed: parse("seed", get("seed"))?,
            encoding: get("encoding"),
            lexicon: get("lexicon").map(PathBuf::from),
            humans: get("humans").map(PathBuf::from),
            templates: get("templates").map(PathBuf::from),
            distractors: get("distractors").map(PathBuf::from),
            personas: get("personas").map(PathBuf::from),
            parallelism: parse("parallelism", get("parallelism"))?,
            plan: get("plan"),
            endpoint: get("endpoint"),
            model: get("model"),
            timeout_secs: parse("timeout_secs", get("timeout_secs"))?,
            retries: parse("retries", get("retries"))?,
            max_tokens: parse("max_tokens", get("max_tokens"))?,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(4).max(1)
    }
}
