//! Flat `key = value` training configuration. Flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sparselex::{BackoffKind, TrainConfig, UNLIMITED};

use crate::UsageError;

/// How the lexicon is initialized before training.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Uniform,
    File(PathBuf),
}

impl InitSpec {
    pub fn parse(s: &str) -> Self {
        if s == "uniform" {
            Self::Uniform
        } else {
            Self::File(PathBuf::from(s))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub init: InitSpec,
    /// Write a lexicon checkpoint every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), init: InitSpec::Uniform, checkpoint_every: None }
    }
}

/// Beam sizes accept `inf` for no limit.
pub fn parse_beam(s: &str) -> Result<usize> {
    match s {
        "inf" | "unlimited" => Ok(UNLIMITED),
        _ => s.parse().with_context(|| format!("bad beam size {s:?}")),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let parsed: Result<()> = (|| {
            match key {
                "iterations" => t.iterations = value.parse()?,
                "tau" => t.tau = value.parse()?,
                "lambda" => t.lambda = value.parse()?,
                "backoff" => t.backoff = value.parse::<BackoffKind>()?,
                "histogram_beam" => t.beams.histogram = parse_beam(value)?,
                "lex_beam" => t.beams.lex = parse_beam(value)?,
                "lm_beam" => t.beams.lm = parse_beam(value)?,
                "convergence_rel_tol" => {
                    t.convergence_rel_tol = if value == "none" { None } else { Some(value.parse()?) }
                }
                "workers" => t.workers = value.parse()?,
                "init" => self.init = InitSpec::parse(value),
                "checkpoint_every" => {
                    self.checkpoint_every = match value.parse::<usize>()? {
                        0 => None,
                        k => Some(k),
                    }
                }
                _ => bail!("unknown setting"),
            }
            Ok(())
        })();
        parsed.map_err(|e| UsageError(format!("config {key} = {value:?}: {e}")).into())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("config line {}: expected key = value", i + 1)).into());
            };
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }
}
