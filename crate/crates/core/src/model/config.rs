use std::fmt;
use std::str::FromStr;

use crate::config::{join, parse_bool, parse_list, parse_value, unknown_key, Section};
use crate::error::{Result, SrnError};

/// How residual units are stacked over the side-outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuOrder {
    /// The deepest side-output is the basic output; RUs refine towards the shallowest.
    DeepToShallow,
    /// The shallowest (upsampled) side-output is the basic output; RUs refine towards the deepest.
    ShallowToDeep,
    /// No RUs: every side-output is supervised on its own (HED-style reference).
    NoRuBaseline,
}

impl fmt::Display for RuOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuOrder::DeepToShallow => "DeepToShallow",
            RuOrder::ShallowToDeep => "ShallowToDeep",
            RuOrder::NoRuBaseline => "NoRU_Baseline",
        })
    }
}

impl FromStr for RuOrder {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DeepToShallow" => Ok(RuOrder::DeepToShallow),
            "ShallowToDeep" => Ok(RuOrder::ShallowToDeep),
            "NoRU_Baseline" => Ok(RuOrder::NoRuBaseline),
            _ => Err(SrnError::Config(format!("unknown ru_order {s:?}"))),
        }
    }
}

/// Weight initialization of the backbone 3x3 convolutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Normal with a fixed standard deviation.
    Normal(f64),
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::Normal(std) => write!(f, "normal:{std}"),
            InitScheme::He => f.write_str("he"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "he" {
            return Ok(InitScheme::He);
        }
        if let Some(std) = s.strip_prefix("normal:") {
            let std: f64 = parse_value("model.init", std)?;
            if std > 0.0 && std.is_finite() {
                return Ok(InitScheme::Normal(std));
            }
        }
        Err(SrnError::Config(format!("unknown init scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub convs: usize,
    pub channels: usize,
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.convs, self.channels)
    }
}

impl FromStr for StageSpec {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SrnError::Config(format!("stage must look like CONVSxCHANNELS, got {s:?}"));
        let (a, b) = s.trim().split_once('x').ok_or_else(bad)?;
        Ok(StageSpec {
            convs: a.parse().map_err(|_| bad())?,
            channels: b.parse().map_err(|_| bad())?,
        })
    }
}

/// Architecture of the backbone and of the residual stacking.
///
/// Stage indices are 1-based. Stage `s` runs at stride `2^(s-1)` relative to
/// the input: every stage but the last is followed by a 2x2 max-pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stages: Vec<StageSpec>,
    pub use_conv1: bool,
    pub ru_order: RuOrder,
    pub side_output_stages: Vec<usize>,
    pub input_channels: usize,
    pub init: InitScheme,
    /// Learn the Gaussian upsampling kernels instead of keeping them fixed.
    pub train_deconv: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: vec![
                StageSpec {
                    convs: 2,
                    channels: 8,
                },
                StageSpec {
                    convs: 2,
                    channels: 16,
                },
                StageSpec {
                    convs: 2,
                    channels: 32,
                },
            ],
            use_conv1: true,
            ru_order: RuOrder::DeepToShallow,
            side_output_stages: vec![1, 2, 3],
            input_channels: 1,
            init: InitScheme::Normal(0.01),
            train_deconv: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(SrnError::Config("model needs at least one stage".into()));
        }
        if self.stages.iter().any(|s| s.convs == 0 || s.channels == 0) {
            return Err(SrnError::Config(
                "every stage needs >= 1 conv and >= 1 channel".into(),
            ));
        }
        if self.input_channels == 0 {
            return Err(SrnError::Config("input_channels must be positive".into()));
        }
        if self.side_output_stages.is_empty() {
            return Err(SrnError::Config(
                "side_output_stages must not be empty".into(),
            ));
        }
        if self.side_output_stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SrnError::Config(
                "side_output_stages must be strictly increasing".into(),
            ));
        }
        let n = self.stages.len();
        if let Some(&bad) = self.side_output_stages.iter().find(|&&s| s == 0 || s > n) {
            return Err(SrnError::Config(format!(
                "side-output stage {bad} outside 1..={n}"
            )));
        }
        let m = self.active_side_stages().len();
        if m == 0 {
            return Err(SrnError::Config(
                "no side-outputs left once conv1 is excluded".into(),
            ));
        }
        if m < 2 && self.ru_order != RuOrder::NoRuBaseline {
            return Err(SrnError::Config(format!(
                "{} needs at least 2 side-outputs, have {m}",
                self.ru_order
            )));
        }
        let factor = self.total_stride() / self.stage_stride(self.active_side_stages()[0]);
        if self.total_stride() > 16 || factor > 16 {
            return Err(SrnError::Config(
                "at most 5 stages are supported (upsampling <= x16)".into(),
            ));
        }
        Ok(())
    }

    /// Side-output stages actually used: stage 1 is dropped when `use_conv1` is off.
    pub fn active_side_stages(&self) -> Vec<usize> {
        self.side_output_stages
            .iter()
            .copied()
            .filter(|&s| self.use_conv1 || s != 1)
            .collect()
    }

    pub fn stage_stride(&self, stage: usize) -> usize {
        1 << (stage - 1)
    }

    /// Input dims must be a multiple of this.
    pub fn total_stride(&self) -> usize {
        self.stage_stride(self.stages.len())
    }

    pub fn num_supervised(&self) -> usize {
        self.active_side_stages().len()
    }
}

impl Section for ModelConfig {
    const NAME: &'static str = "model";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("model.{key}");
        match key {
            "stages" => self.stages = parse_list(&full, value)?,
            "use_conv1" => self.use_conv1 = parse_bool(&full, value)?,
            "ru_order" => self.ru_order = value.trim().parse()?,
            "side_output_stages" => self.side_output_stages = parse_list(&full, value)?,
            "input_channels" => self.input_channels = parse_value(&full, value)?,
            "init" => self.init = value.trim().parse()?,
            "train_deconv" => self.train_deconv = parse_bool(&full, value)?,
            _ => return Err(unknown_key(Self::NAME, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("stages", join(&self.stages)),
            ("use_conv1", self.use_conv1.to_string()),
            ("ru_order", self.ru_order.to_string()),
            ("side_output_stages", join(&self.side_output_stages)),
            ("input_channels", self.input_channels.to_string()),
            ("init", self.init.to_string()),
            ("train_deconv", self.train_deconv.to_string()),
        ]
    }
}
