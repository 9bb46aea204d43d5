//! SGD with momentum and weight decay, loss tracing, and checkpointing.

mod augment;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, flip, rescale, rotate90, Augment, SCALES};

use crate::config::{parse_value, unknown_key, Section};
use crate::error::{Result, SrnError};
use crate::io_util::write_atomic;
use crate::model::{build_backbone, forward_image, ModelConfig, ParamStore, SrnForward};
use crate::supervision::{total_loss, GroundTruth, LossConfig};
use crate::synth::SymmetrySample;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub augment: Augment,
    /// Seeds parameter initialization and the sampling order.
    pub seed: u64,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-6,
            momentum: 0.9,
            weight_decay: 0.002,
            max_iters: 18000,
            batch_size: 1,
            augment: Augment::None,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(SrnError::Config(format!(
                "train.batch_size must be 1, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(SrnError::Config(format!(
                "train.lr must be non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SrnError::Config(format!(
                "train.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(SrnError::Config(format!(
                "train.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

impl Section for TrainConfig {
    const NAME: &'static str = "train";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("train.{key}");
        match key {
            "lr" => self.lr = parse_value(&full, value)?,
            "momentum" => self.momentum = parse_value(&full, value)?,
            "weight_decay" => self.weight_decay = parse_value(&full, value)?,
            "max_iters" => self.max_iters = parse_value(&full, value)?,
            "batch_size" => self.batch_size = parse_value(&full, value)?,
            "augment" => self.augment = value.trim().parse()?,
            "seed" => self.seed = parse_value(&full, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(&full, value)?,
            _ => return Err(unknown_key(Self::NAME, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("augment", self.augment.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}

/// Heavy-ball SGD state.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// `v <- m v - lr (g + wd p); p <- p + v` for every learnable tensor.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        cfg: &TrainConfig,
    ) -> Result<()> {
        let names: Vec<String> = params.learnable_names().map(str::to_string).collect();
        for name in names {
            let g = grads.get(&name).ok_or_else(|| {
                SrnError::Internal(format!("no gradient for learnable parameter {name:?}"))
            })?;
            let p = params.get_mut(&name)?;
            if g.dims() != p.dims() {
                return Err(SrnError::Internal(format!(
                    "gradient of {name:?} has dims {:?}",
                    g.dims()
                )));
            }
            let v = self
                .velocity
                .entry(name)
                .or_insert_with(|| vec![0.0; p.len()]);
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vv = cfg.momentum * *vv - cfg.lr * (gv + cfg.weight_decay * *pv);
                *pv += *vv;
            }
        }
        Ok(())
    }
}

/// Gradients of every learnable parameter after `backward`.
pub fn collect_grads(fwd: &SrnForward, params: &ParamStore) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    for name in params.learnable_names() {
        let var = fwd.params.get(name)?;
        if let Some(g) = fwd.graph.grad(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub total: f64,
    /// Unweighted loss of each supervised output, in supervised order.
    pub parts: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    /// Supervised output names, e.g. `basic`, `ru2`, `ru1`.
    pub outputs: Vec<String>,
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,total");
        for name in &self.outputs {
            let _ = write!(out, ",loss_{name}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{},{}", r.iter, r.total);
            for p in &r.parts {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }
}

/// Where and how often to write checkpoints.
#[derive(Clone, Debug, Default)]
pub struct CheckpointSink {
    pub dir: Option<PathBuf>,
}

fn section_text<S: Section>(s: &S) -> String {
    s.pairs()
        .into_iter()
        .map(|(k, v)| format!("{}.{k}={v}\n", S::NAME))
        .collect()
}

/// Writes `<stem>.srnt` and a `<stem>.txt` sidecar with configs and iteration.
pub fn write_checkpoint(
    dir: &Path,
    stem: &str,
    params: &ParamStore,
    model: &ModelConfig,
    loss: &LossConfig,
    train: &TrainConfig,
    iter: usize,
) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.srnt"));
    params.save(&path)?;
    let sidecar = format!(
        "{}{}{}iter={iter}\n",
        section_text(model),
        section_text(loss),
        section_text(train)
    );
    write_atomic(&dir.join(format!("{stem}.txt")), sidecar.as_bytes())?;
    Ok(path)
}

/// One forward/backward/update step; returns the loss record.
pub fn train_step(
    params: &mut ParamStore,
    sgd: &mut Sgd,
    sample: &SymmetrySample,
    model: &ModelConfig,
    loss: &LossConfig,
    train: &TrainConfig,
    iter: usize,
) -> Result<LossRecord> {
    let gt = GroundTruth::new(sample.mask.clone());
    let non_finite = |e: SrnError| match e {
        SrnError::NonFinite { .. } => SrnError::NonFiniteLoss { iteration: iter },
        e => e,
    };
    let mut fwd = forward_image(&sample.image.to_tensor(), params, model).map_err(non_finite)?;
    let parts = total_loss(&mut fwd, &gt, loss).map_err(non_finite)?;
    let total = fwd.graph.value(parts.total).item();
    if !total.is_finite() {
        return Err(SrnError::NonFiniteLoss { iteration: iter });
    }
    fwd.graph.backward(parts.total).map_err(non_finite)?;
    let grads = collect_grads(&fwd, params)?;
    sgd.step(params, &grads, train)?;
    Ok(LossRecord {
        iter,
        total,
        parts: parts
            .parts
            .iter()
            .map(|(_, v)| fwd.graph.value(*v).item())
            .collect(),
    })
}

fn output_names(
    model: &ModelConfig,
    sample: &SymmetrySample,
    params: &ParamStore,
) -> Result<Vec<String>> {
    let fwd = forward_image(&sample.image.to_tensor(), params, model)?;
    Ok(fwd.supervised.iter().map(|s| s.name.clone()).collect())
}

/// Trains from the seeded initialization of `train.seed`.
pub fn train(
    dataset: &[SymmetrySample],
    model: &ModelConfig,
    loss: &LossConfig,
    train_cfg: &TrainConfig,
    sink: &CheckpointSink,
) -> Result<(ParamStore, LossTrace)> {
    let params = build_backbone(model, train_cfg.seed)?;
    train_from(params, dataset, model, loss, train_cfg, sink)
}

/// Trains starting from `params`. Samples are visited in a fresh seeded
/// shuffle each epoch.
pub fn train_from(
    mut params: ParamStore,
    dataset: &[SymmetrySample],
    model: &ModelConfig,
    loss: &LossConfig,
    train_cfg: &TrainConfig,
    sink: &CheckpointSink,
) -> Result<(ParamStore, LossTrace)> {
    train_cfg.validate()?;
    model.validate()?;
    if dataset.is_empty() {
        return Err(SrnError::Input("empty training set".into()));
    }
    let pool: Vec<SymmetrySample> = dataset
        .iter()
        .flat_map(|s| augment(s, train_cfg.augment))
        .collect();
    let mut trace = LossTrace {
        outputs: output_names(model, &pool[0], &params)?,
        records: Vec::with_capacity(train_cfg.max_iters),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut sgd = Sgd::new();
    for iter in 1..=train_cfg.max_iters {
        if order.is_empty() {
            order = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let idx = order.pop().expect("refilled");
        let record = train_step(
            &mut params,
            &mut sgd,
            &pool[idx],
            model,
            loss,
            train_cfg,
            iter,
        )?;
        trace.records.push(record);
        if let Some(dir) = &sink.dir {
            if train_cfg.checkpoint_every > 0 && iter % train_cfg.checkpoint_every == 0 {
                write_checkpoint(
                    dir,
                    &format!("ckpt_{iter:06}"),
                    &params,
                    model,
                    loss,
                    train_cfg,
                    iter,
                )?;
            }
        }
    }
    Ok((params, trace))
}
