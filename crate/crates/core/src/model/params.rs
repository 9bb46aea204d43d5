use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{InitScheme, ModelConfig, RuOrder};
use crate::error::{Result, SrnError};
use crate::tensor::kernels::gaussian_kernel;
use crate::tensor::{read_dump, read_dump_file, write_dump, write_dump_file, Tensor};

pub fn conv_weight(stage: usize, conv: usize) -> String {
    format!("stage{stage}.conv{conv}.w")
}

pub fn conv_bias(stage: usize, conv: usize) -> String {
    format!("stage{stage}.conv{conv}.b")
}

pub fn side_weight(stage: usize) -> String {
    format!("side{stage}.w")
}

pub fn side_bias(stage: usize) -> String {
    format!("side{stage}.b")
}

/// Upsampler taking side-output `stage` to input resolution.
pub fn side_up(stage: usize) -> String {
    format!("side{stage}.up")
}

pub fn ru_concat(stage: usize) -> String {
    format!("ru{stage}.w_c")
}

pub fn ru_deep_gate(stage: usize) -> String {
    format!("ru{stage}.w_r")
}

pub fn ru_shallow_gate(stage: usize) -> String {
    format!("ru{stage}.w_s")
}

/// Upsampler inside a deep-to-shallow RU (deeper r to this stage's resolution).
pub fn ru_up(stage: usize) -> String {
    format!("ru{stage}.up")
}

/// Upsampler taking a deep-to-shallow RU output to input resolution.
pub fn ru_out_up(stage: usize) -> String {
    format!("ru{stage}.out_up")
}

/// Named learnable and frozen tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) {
        let name = name.into();
        if frozen {
            self.frozen.insert(name.clone());
        } else {
            self.frozen.remove(&name);
        }
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| SrnError::Config(format!("parameter {name:?} not found")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| SrnError::Config(format!("parameter {name:?} not found")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Iterates in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn learnable_names(&self) -> impl Iterator<Item = &str> {
        self.names().filter(|n| !self.frozen.contains(*n))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of scalar values in learnable tensors.
    pub fn learnable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| !self.frozen.contains(*k))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn to_dump(&self) -> Vec<u8> {
        write_dump(self.iter())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_dump_file(path, self.iter())
    }

    /// Loads a dump and checks it against the layout `config` would build.
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        Self::from_entries(read_dump_file(path)?, config)
    }

    pub fn from_dump(bytes: &[u8], config: &ModelConfig) -> Result<Self> {
        Self::from_entries(read_dump(bytes, Path::new("<memory>"))?, config)
    }

    fn from_entries(entries: Vec<(String, Tensor)>, config: &ModelConfig) -> Result<Self> {
        let layout = build_backbone(config, 0)?;
        let mut store = ParamStore::default();
        for (name, t) in entries {
            let expected = layout.tensors.get(&name).ok_or_else(|| {
                SrnError::Config(format!("checkpoint has unexpected tensor {name:?}"))
            })?;
            if expected.dims() != t.dims() {
                return Err(SrnError::Config(format!(
                    "checkpoint tensor {name:?} has dims {:?}, model expects {:?}",
                    t.dims(),
                    expected.dims()
                )));
            }
            let frozen = layout.is_frozen(&name);
            store.insert(name, t, frozen);
        }
        if let Some(missing) = layout.names().find(|n| !store.contains(n)) {
            return Err(SrnError::Config(format!(
                "checkpoint is missing tensor {missing:?}"
            )));
        }
        Ok(store)
    }
}

fn upsampler(factor: usize) -> Tensor {
    Tensor::new(vec![1, 1, 2 * factor, 2 * factor], gaussian_kernel(factor)).expect("kernel dims")
}

/// Deterministic parameter layout and initialization for `(config, seed)`.
///
/// Backbone 3x3 weights are drawn from the configured normal, biases are zero,
/// side-output and RU concatenation weights ("nested filters") are zero, RU
/// gate weights are one, and upsampling kernels are the fixed Gaussian.
pub fn build_backbone(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::default();

    let mut in_c = config.input_channels;
    for (si, stage) in config.stages.iter().enumerate() {
        let s = si + 1;
        for j in 1..=stage.convs {
            let fan_in = in_c * 9;
            let std = match config.init {
                InitScheme::Normal(std) => std,
                InitScheme::He => (2.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).map_err(|e| SrnError::Config(e.to_string()))?;
            let n = stage.channels * fan_in;
            let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            store.insert(
                conv_weight(s, j),
                Tensor::new(vec![stage.channels, in_c, 3, 3], w)?,
                false,
            );
            store.insert(conv_bias(s, j), Tensor::zeros(&[stage.channels]), false);
            in_c = stage.channels;
        }
    }

    let sides = config.active_side_stages();
    let frozen_up = !config.train_deconv;
    for &s in &sides {
        let c = config.stages[s - 1].channels;
        store.insert(side_weight(s), Tensor::zeros(&[1, c, 1, 1]), false);
        store.insert(side_bias(s), Tensor::zeros(&[1]), false);
    }

    let unit = || Tensor::full(&[1, 1, 1, 1], 1.0);
    let zero = || Tensor::zeros(&[1, 1, 1, 1]);
    let stride = |s: usize| config.stage_stride(s);
    match config.ru_order {
        RuOrder::DeepToShallow => {
            let deepest = *sides.last().expect("validated");
            if stride(deepest) > 1 {
                store.insert(side_up(deepest), upsampler(stride(deepest)), frozen_up);
            }
            for pair in sides.windows(2) {
                let (s, next) = (pair[0], pair[1]);
                store.insert(ru_concat(s), zero(), false);
                store.insert(ru_deep_gate(s), unit(), false);
                store.insert(ru_up(s), upsampler(stride(next) / stride(s)), frozen_up);
                if stride(s) > 1 {
                    store.insert(ru_out_up(s), upsampler(stride(s)), frozen_up);
                }
            }
        }
        RuOrder::ShallowToDeep => {
            for &s in &sides {
                if stride(s) > 1 {
                    store.insert(side_up(s), upsampler(stride(s)), frozen_up);
                }
            }
            for &s in &sides[1..] {
                store.insert(ru_concat(s), zero(), false);
                store.insert(ru_shallow_gate(s), unit(), false);
            }
        }
        RuOrder::NoRuBaseline => {
            for &s in &sides {
                if stride(s) > 1 {
                    store.insert(side_up(s), upsampler(stride(s)), frozen_up);
                }
            }
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::StageSpec;

    #[test]
    fn default_toy_parameter_count() {
        let cfg = ModelConfig::default();
        let p = build_backbone(&cfg, 1).unwrap();
        // backbone: (1*9+1)*8 + (8*9+1)*8 + (8*9+1)*16 + (16*9+1)*16 + (16*9+1)*32 + (32*9+1)*32
        let backbone = 80 + 584 + 1168 + 2320 + 4640 + 9248;
        // side-outputs: weight C + bias 1 at stages with 8, 16, 32 channels
        let sides = 9 + 17 + 33;
        // two RUs (stages 2 and 1), scalar w_c and w_r each
        let rus = 4;
        assert_eq!(p.learnable_count(), backbone + sides + rus);
        // frozen Gaussian kernels: side3.up x4 (8x8), ru1.up x2, ru2.up x2, ru2.out_up x2 (4x4 each)
        assert_eq!(p.total_count() - p.learnable_count(), 64 + 16 * 3);
    }

    #[test]
    fn same_seed_same_dump() {
        let cfg = ModelConfig::default();
        assert_eq!(
            build_backbone(&cfg, 7).unwrap().to_dump(),
            build_backbone(&cfg, 7).unwrap().to_dump()
        );
        assert_ne!(
            build_backbone(&cfg, 7).unwrap().to_dump(),
            build_backbone(&cfg, 8).unwrap().to_dump()
        );
    }

    #[test]
    fn nested_filters_start_at_zero() {
        let p = build_backbone(&ModelConfig::default(), 3).unwrap();
        for s in 1..=3 {
            assert!(p
                .get(&side_weight(s))
                .unwrap()
                .data()
                .iter()
                .all(|&v| v == 0.0));
        }
        assert_eq!(p.get(&ru_concat(1)).unwrap().item(), 0.0);
        assert_eq!(p.get(&ru_deep_gate(1)).unwrap().item(), 1.0);
        assert!(p.is_frozen(&ru_up(1)));
    }

    #[test]
    fn without_conv1_drops_stage_one_side_output() {
        let cfg = ModelConfig {
            use_conv1: false,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.active_side_stages(), vec![2, 3]);
        let p = build_backbone(&cfg, 1).unwrap();
        assert!(!p.contains(&side_weight(1)));
        assert!(p.contains(&side_weight(2)));
        assert!(p.contains(&ru_out_up(2)));
        assert!(p.contains(&conv_weight(1, 1)), "stage 1 still runs");
    }

    #[test]
    fn empty_stages_rejected() {
        let cfg = ModelConfig {
            stages: Vec::<StageSpec>::new(),
            ..ModelConfig::default()
        };
        assert!(matches!(build_backbone(&cfg, 0), Err(SrnError::Config(_))));
    }

    #[test]
    fn load_checks_layout() {
        let cfg = ModelConfig::default();
        let p = build_backbone(&cfg, 2).unwrap();
        let bytes = p.to_dump();
        assert_eq!(ParamStore::from_dump(&bytes, &cfg).unwrap(), p);
        let other = ModelConfig {
            ru_order: RuOrder::ShallowToDeep,
            ..ModelConfig::default()
        };
        assert!(ParamStore::from_dump(&bytes, &other).is_err());
    }
}
