//! Plain-text `section.key=value` configuration.
//!
//! Every section has a fixed key set; unknown keys are rejected so typos
//! never silently fall back to defaults. `#` starts a comment line.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SrnError};
use crate::evaluation::EvalConfig;
use crate::model::ModelConfig;
use crate::supervision::LossConfig;
use crate::synth::DataConfig;
use crate::trainer::TrainConfig;

/// Parses an enum-like or numeric config value with a uniform error.
pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SrnError::Config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(SrnError::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

pub(crate) fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// A config section that can be set key by key and listed back out.
pub trait Section {
    const NAME: &'static str;
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn pairs(&self) -> Vec<(&'static str, String)>;
}

pub(crate) fn unknown_key(section: &str, key: &str) -> SrnError {
    SrnError::Config(format!("unknown key {section}.{key}"))
}

/// Splits `"a.b=c"` into `("a", "b", "c")`.
pub fn split_line(line: &str) -> Result<(&str, &str, &str)> {
    let (lhs, value) = line
        .split_once('=')
        .ok_or_else(|| SrnError::Config(format!("expected key=value, got {line:?}")))?;
    let (section, key) = lhs
        .trim()
        .split_once('.')
        .ok_or_else(|| SrnError::Config(format!("key {lhs:?} needs a section prefix")))?;
    Ok((section, key, value.trim()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (section, key, value) = split_line(line)?;
            cfg.set(section, key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            ModelConfig::NAME => self.model.set(key, value),
            LossConfig::NAME => self.loss.set(key, value),
            TrainConfig::NAME => self.train.set(key, value),
            EvalConfig::NAME => self.eval.set(key, value),
            DataConfig::NAME => self.data.set(key, value),
            _ => Err(SrnError::Config(format!("unknown section {section:?}"))),
        }
    }

    /// Applies a `section.key` / value override, e.g. from a command-line flag.
    pub fn set_dotted(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) = dotted
            .split_once('.')
            .ok_or_else(|| SrnError::Config(format!("key {dotted:?} needs a section prefix")))?;
        self.set(section, key, value)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        fn emit<S: Section>(out: &mut String, s: &S) {
            for (k, v) in s.pairs() {
                out.push_str(&format!("{}.{}={}\n", S::NAME, k, v));
            }
        }
        emit(&mut out, &self.model);
        emit(&mut out, &self.loss);
        emit(&mut out, &self.train);
        emit(&mut out, &self.eval);
        emit(&mut out, &self.data);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RuOrder;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg =
            RunConfig::parse("# header\nmodel.ru_order=NoRU_Baseline\n\ntrain.lr = 0.5\n").unwrap();
        assert_eq!(cfg.model.ru_order, RuOrder::NoRuBaseline);
        assert_eq!(cfg.train.lr, 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("model.colour=red").is_err());
        assert!(RunConfig::parse("render.x=1").is_err());
        assert!(RunConfig::parse("lr=1").is_err());
        assert!(RunConfig::parse("train.lr").is_err());
    }
}
