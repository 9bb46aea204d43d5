//! Class-balanced cross-entropy deep supervision.
//!
//! Every supervised output (the basic output and each RU output, or each
//! side-output for the baseline) gets a balanced sigmoid cross-entropy,
//! summed over pixels, and the total loss is their `alpha`-weighted sum.

use std::fmt;
use std::str::FromStr;

use crate::config::{join, parse_list, unknown_key, Section};
use crate::error::{Result, SrnError};
use crate::image::BinaryMap;
use crate::model::{RUTrace, RuOrder, SrnForward};
use crate::tensor::kernels::{sigmoid, weighted_bce_forward};
use crate::tensor::{Graph, Tensor, Var};

/// Which class receives weight `beta = |Y+|/|Y|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BalanceMode {
    /// Positives weighted by `beta`, negatives by `1 - beta`.
    Literal,
    /// Positives weighted by `1 - beta`, negatives by `beta`, so the rare
    /// class is up-weighted.
    #[default]
    InverseFrequency,
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BalanceMode::Literal => "Literal",
            BalanceMode::InverseFrequency => "InverseFrequency",
        })
    }
}

impl FromStr for BalanceMode {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Literal" => Ok(BalanceMode::Literal),
            "InverseFrequency" => Ok(BalanceMode::InverseFrequency),
            _ => Err(SrnError::Config(format!("unknown balance mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossConfig {
    /// One weight per supervised output, basic output first. Empty means all ones.
    pub alphas: Vec<f64>,
    pub balance_mode: BalanceMode,
}

impl LossConfig {
    /// The weights for `n` supervised outputs.
    pub fn resolved_alphas(&self, n: usize) -> Result<Vec<f64>> {
        if self.alphas.is_empty() {
            return Ok(vec![1.0; n]);
        }
        if self.alphas.len() != n {
            return Err(SrnError::Config(format!(
                "{} loss weights given for {n} supervised outputs",
                self.alphas.len()
            )));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(SrnError::Config(format!(
                "loss weight {a} must be non-negative"
            )));
        }
        Ok(self.alphas.clone())
    }
}

impl Section for LossConfig {
    const NAME: &'static str = "loss";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alphas" => self.alphas = parse_list("loss.alphas", value)?,
            "balance_mode" => self.balance_mode = value.trim().parse()?,
            _ => return Err(unknown_key(Self::NAME, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alphas", join(&self.alphas)),
            ("balance_mode", self.balance_mode.to_string()),
        ]
    }
}

/// Binary symmetry ground truth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub mask: BinaryMap,
}

impl GroundTruth {
    pub fn new(mask: BinaryMap) -> Self {
        GroundTruth { mask }
    }

    /// Accepts a row-major map whose values are exactly 0 or 1.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(SrnError::Input(format!(
                    "ground truth value {v} is not binary"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            mask: BinaryMap::from_data(width, height, data)?,
        })
    }

    pub fn labels(&self) -> &[bool] {
        &self.mask.data
    }

    pub fn positives(&self) -> usize {
        self.mask.count()
    }

    pub fn len(&self) -> usize {
        self.mask.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.data.is_empty()
    }
}

/// `beta = |Y+| / |Y|`.
pub fn beta(gt: &GroundTruth) -> Result<f64> {
    if gt.is_empty() {
        return Err(SrnError::Input("empty ground truth".into()));
    }
    Ok(gt.positives() as f64 / gt.len() as f64)
}

/// `(positive weight, negative weight)` for the given mode.
pub fn class_weights(beta: f64, mode: BalanceMode) -> (f64, f64) {
    match mode {
        BalanceMode::Literal => (beta, 1.0 - beta),
        BalanceMode::InverseFrequency => (1.0 - beta, beta),
    }
}

fn check_dims(logits: &Tensor, gt: &GroundTruth) -> Result<()> {
    let [n, c, h, w] = logits.nchw()?;
    if n != 1 || c != 1 || h != gt.mask.height || w != gt.mask.width {
        return Err(SrnError::Shape(format!(
            "logits {:?} vs ground truth {}x{}",
            logits.dims(),
            gt.mask.height,
            gt.mask.width
        )));
    }
    Ok(())
}

/// Balanced cross-entropy of one logit map, recorded on the graph.
pub fn balanced_bce(
    g: &mut Graph,
    logits: Var,
    gt: &GroundTruth,
    beta: f64,
    mode: BalanceMode,
) -> Result<Var> {
    check_dims(g.value(logits), gt)?;
    let (pos, neg) = class_weights(beta, mode);
    g.weighted_bce(logits, gt.labels(), pos, neg)
}

/// Balanced cross-entropy of one logit map as a plain value.
pub fn balanced_bce_value(
    logits: &Tensor,
    gt: &GroundTruth,
    beta: f64,
    mode: BalanceMode,
) -> Result<f64> {
    check_dims(logits, gt)?;
    let (pos, neg) = class_weights(beta, mode);
    Ok(weighted_bce_forward(logits.data(), gt.labels(), pos, neg))
}

/// The total loss node and the unweighted per-output loss nodes.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Var,
    /// `(output name, loss)` in supervised order.
    pub parts: Vec<(String, Var)>,
}

/// Weighted sum of the balanced losses of every supervised output.
pub fn total_loss(fwd: &mut SrnForward, gt: &GroundTruth, cfg: &LossConfig) -> Result<LossParts> {
    let alphas = cfg.resolved_alphas(fwd.supervised.len())?;
    let b = beta(gt)?;
    let mut parts = Vec::with_capacity(alphas.len());
    let mut total: Option<Var> = None;
    for (out, &alpha) in fwd.supervised.iter().zip(&alphas) {
        let l = balanced_bce(&mut fwd.graph, out.logits, gt, b, cfg.balance_mode)?;
        parts.push((out.name.clone(), l));
        let term = fwd.graph.scale(l, alpha)?;
        total = Some(match total {
            Some(t) => fwd.graph.add(t, term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| SrnError::Internal("no supervised outputs".into()))?;
    Ok(LossParts { total, parts })
}

/// Total loss of a recorded trace, computed without a graph.
pub fn total_loss_value(trace: &RUTrace, gt: &GroundTruth, cfg: &LossConfig) -> Result<f64> {
    let alphas = cfg.resolved_alphas(trace.supervised.len())?;
    let b = beta(gt)?;
    let mut total = 0.0;
    for (logits, alpha) in trace.supervised.iter().zip(alphas) {
        total += alpha * balanced_bce_value(logits, gt, b, cfg.balance_mode)?;
    }
    Ok(total)
}

/// Symmetry prediction in `(0, 1)`: the sigmoid of the last RU output, or for
/// the baseline the mean of the per-side-output sigmoids.
pub fn predict(trace: &RUTrace) -> Result<Tensor> {
    match (&trace.final_logits, trace.order) {
        (Some(logits), _) => Ok(logits.map(sigmoid)),
        (None, RuOrder::NoRuBaseline) => {
            let first = trace
                .supervised
                .first()
                .ok_or_else(|| SrnError::Internal("trace has no outputs".into()))?;
            let k = trace.supervised.len() as f64;
            let mut acc = vec![0.0; first.len()];
            for t in &trace.supervised {
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += sigmoid(*v);
                }
            }
            Tensor::new(
                first.dims().to_vec(),
                acc.into_iter().map(|v| v / k).collect(),
            )
        }
        (None, _) => Err(SrnError::Internal("trace has no final prediction".into())),
    }
}
