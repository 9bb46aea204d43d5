use std::collections::BTreeMap;

use super::config::{ModelConfig, RuOrder};
use super::params::{self, ParamStore};
use crate::error::{Result, SrnError};
use crate::image::pad_reflect;
use crate::residual::{self, Gate, RUWeights, RuHandles, RuStep, Upsampler};
use crate::tensor::{Graph, Tensor, Var};

/// Graph handles of every parameter in a [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    /// Registers all parameters as graph leaves; frozen ones do not take gradients.
    pub fn register(g: &mut Graph, store: &ParamStore) -> Self {
        ParamVars(
            store
                .iter()
                .map(|(name, t)| (name.to_string(), g.leaf(t.clone(), !store.is_frozen(name))))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| SrnError::Config(format!("parameter {name:?} not in graph")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// A map that receives its own loss term, already at image resolution.
#[derive(Clone, Debug)]
pub struct SupervisedOutput {
    /// `basic`, `ru{stage}`, or `side{stage}` (baseline).
    pub name: String,
    pub logits: Var,
}

/// One recorded forward pass.
#[derive(Debug)]
pub struct SrnForward {
    pub graph: Graph,
    pub order: RuOrder,
    pub params: ParamVars,
    /// Raw side-outputs `s_i` at their stage resolution, shallow to deep.
    pub side_outputs: Vec<(usize, Var)>,
    /// Side-outputs upsampled to input resolution (shallow-to-deep and baseline).
    pub side_upsampled: Vec<(usize, Var)>,
    pub basic: Option<Var>,
    /// RU steps in stacking order, tagged with their side-output stage.
    pub rus: Vec<(usize, RuStep)>,
    /// Loss terms in order: basic output first, then RUs in stacking order.
    pub supervised: Vec<SupervisedOutput>,
    /// Logits of the final prediction map; `None` for the baseline.
    pub prediction: Option<Var>,
}

/// Per-forward snapshot of side-outputs, RU outputs and residuals.
#[derive(Clone, Debug)]
pub struct RUTrace {
    pub order: RuOrder,
    pub side_outputs: Vec<Tensor>,
    pub basic_output: Option<Tensor>,
    /// RU outputs `r_i` in stacking order.
    pub ru_outputs: Vec<Tensor>,
    /// `r_in↑` of each RU, in stacking order.
    pub ru_inputs_up: Vec<Tensor>,
    /// Output residuals `F_i`, computed independently of the graph.
    pub residuals: Vec<Tensor>,
    /// Logits of every supervised output at image resolution.
    pub supervised: Vec<Tensor>,
    pub final_logits: Option<Tensor>,
}

fn scalar(store: &ParamStore, name: &str) -> Result<f64> {
    Ok(store.get(name)?.item())
}

impl SrnForward {
    /// Snapshot of the pass; residuals come from [`residual::residual_of`].
    pub fn trace(&self, store: &ParamStore) -> Result<RUTrace> {
        let g = &self.graph;
        let mut residuals = Vec::with_capacity(self.rus.len());
        for (stage, step) in &self.rus {
            let w_c = scalar(store, &params::ru_concat(*stage))?;
            let weights = match self.order {
                RuOrder::DeepToShallow => {
                    let factor = g.value(step.input_up).dims()[2] / g.value(step.input).dims()[2];
                    RUWeights {
                        w_c,
                        gate: Gate::Deep(scalar(store, &params::ru_deep_gate(*stage))?),
                        up: Some(Upsampler {
                            factor,
                            kernel: store.get(&params::ru_up(*stage))?.clone(),
                        }),
                    }
                }
                _ => RUWeights {
                    w_c,
                    gate: Gate::Shallow(scalar(store, &params::ru_shallow_gate(*stage))?),
                    up: None,
                },
            };
            residuals.push(residual::residual_of(
                g.value(step.side),
                g.value(step.input),
                &weights,
                self.order,
            )?);
        }
        Ok(RUTrace {
            order: self.order,
            side_outputs: self
                .side_outputs
                .iter()
                .map(|(_, v)| g.value(*v).clone())
                .collect(),
            basic_output: self.basic.map(|v| g.value(v).clone()),
            ru_outputs: self
                .rus
                .iter()
                .map(|(_, s)| g.value(s.output).clone())
                .collect(),
            ru_inputs_up: self
                .rus
                .iter()
                .map(|(_, s)| g.value(s.input_up).clone())
                .collect(),
            residuals,
            supervised: self
                .supervised
                .iter()
                .map(|s| g.value(s.logits).clone())
                .collect(),
            final_logits: self.prediction.map(|v| g.value(v).clone()),
        })
    }
}

/// Single-channel side-output of `stage` via its 1x1 convolution.
pub fn side_output(g: &mut Graph, vars: &ParamVars, features: Var, stage: usize) -> Result<Var> {
    let w = vars
        .get(&params::side_weight(stage))
        .map_err(|_| SrnError::Config(format!("stage {stage} has no side-output")))?;
    let b = vars.get(&params::side_bias(stage))?;
    g.conv1x1(features, w, Some(b))
}

/// Runs the backbone; returns the post-ReLU features of every stage.
fn backbone(g: &mut Graph, vars: &ParamVars, config: &ModelConfig, input: Var) -> Result<Vec<Var>> {
    let mut x = input;
    let mut features = Vec::with_capacity(config.stages.len());
    for (si, stage) in config.stages.iter().enumerate() {
        let s = si + 1;
        if s > 1 {
            x = g.max_pool2(x)?;
        }
        for j in 1..=stage.convs {
            let w = vars.get(&params::conv_weight(s, j))?;
            let b = vars.get(&params::conv_bias(s, j))?;
            x = g.conv2d(x, w, 1, 1)?;
            x = g.bias_add(x, b)?;
            x = g.relu(x)?;
        }
        features.push(x);
    }
    Ok(features)
}

/// Upsamples with the named kernel when the map is below input resolution.
fn to_input_res(
    g: &mut Graph,
    vars: &ParamVars,
    x: Var,
    factor: usize,
    kernel: &str,
) -> Result<Var> {
    if factor == 1 {
        return Ok(x);
    }
    g.gaussian_deconv(x, vars.get(kernel)?, factor)
}

fn crop_to(g: &mut Graph, x: Var, size: (usize, usize)) -> Result<Var> {
    let [_, _, h, w] = g.value(x).nchw()?;
    if (h, w) == size {
        Ok(x)
    } else {
        g.crop(x, size.0, size.1)
    }
}

/// Full SRN forward pass on a `1xCxHxW` image whose dims are multiples of the
/// backbone stride.
pub fn forward_srn(image: &Tensor, store: &ParamStore, config: &ModelConfig) -> Result<SrnForward> {
    let [_, _, h, w] = image.nchw()?;
    let stride = config.total_stride();
    if h % stride != 0 || w % stride != 0 {
        return Err(SrnError::Input(format!(
            "image {h}x{w} is not a multiple of the backbone stride {stride}; pad it first"
        )));
    }
    forward_impl(image, store, config, (h, w))
}

/// Reflect-pads to the backbone stride, runs the network, and crops every
/// supervised output back to the image size.
pub fn forward_image(
    image: &Tensor,
    store: &ParamStore,
    config: &ModelConfig,
) -> Result<SrnForward> {
    let [_, _, h, w] = image.nchw()?;
    let padded = pad_reflect(image, config.total_stride())?;
    forward_impl(&padded, store, config, (h, w))
}

fn forward_impl(
    image: &Tensor,
    store: &ParamStore,
    config: &ModelConfig,
    out_size: (usize, usize),
) -> Result<SrnForward> {
    config.validate()?;
    let [n, c, _, _] = image.nchw()?;
    if n != 1 || c != config.input_channels {
        return Err(SrnError::Input(format!(
            "expected a 1x{}xHxW image, got {:?}",
            config.input_channels,
            image.dims()
        )));
    }
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, store);
    let input = g.input(image.clone());
    let features = backbone(&mut g, &vars, config, input)?;

    let sides = config.active_side_stages();
    let mut side_outputs = Vec::with_capacity(sides.len());
    for &s in &sides {
        side_outputs.push((s, side_output(&mut g, &vars, features[s - 1], s)?));
    }

    let stride = |s: usize| config.stage_stride(s);
    let mut side_upsampled = Vec::new();
    let mut supervised = Vec::new();
    let mut rus = Vec::new();
    let mut basic = None;
    let mut prediction = None;

    match config.ru_order {
        RuOrder::DeepToShallow => {
            let raw: Vec<Var> = side_outputs.iter().map(|(_, v)| *v).collect();
            let handles: Vec<RuHandles> = sides[..sides.len() - 1]
                .iter()
                .rev()
                .zip(sides[1..].iter().rev())
                .map(|(&s, &next)| {
                    Ok(RuHandles {
                        w_c: vars.get(&params::ru_concat(s))?,
                        gate: vars.get(&params::ru_deep_gate(s))?,
                        up: Some((vars.get(&params::ru_up(s))?, stride(next) / stride(s))),
                    })
                })
                .collect::<Result<_>>()?;
            let steps = residual::chain(&mut g, &raw, &handles, RuOrder::DeepToShallow)?;

            let deepest = *sides.last().expect("validated");
            let basic_var = raw[raw.len() - 1];
            basic = Some(basic_var);
            let up = to_input_res(
                &mut g,
                &vars,
                basic_var,
                stride(deepest),
                &params::side_up(deepest),
            )?;
            let logits = crop_to(&mut g, up, out_size)?;
            supervised.push(SupervisedOutput {
                name: "basic".into(),
                logits,
            });
            for (k, step) in steps.into_iter().enumerate() {
                let s = sides[sides.len() - 2 - k];
                let up =
                    to_input_res(&mut g, &vars, step.output, stride(s), &params::ru_out_up(s))?;
                let logits = crop_to(&mut g, up, out_size)?;
                supervised.push(SupervisedOutput {
                    name: format!("ru{s}"),
                    logits,
                });
                rus.push((s, step));
            }
            prediction = supervised.last().map(|s| s.logits);
        }
        RuOrder::ShallowToDeep | RuOrder::NoRuBaseline => {
            for &(s, v) in &side_outputs {
                let up = to_input_res(&mut g, &vars, v, stride(s), &params::side_up(s))?;
                side_upsampled.push((s, up));
            }
            if config.ru_order == RuOrder::NoRuBaseline {
                for &(s, up) in &side_upsampled {
                    let logits = crop_to(&mut g, up, out_size)?;
                    supervised.push(SupervisedOutput {
                        name: format!("side{s}"),
                        logits,
                    });
                }
            } else {
                let ups: Vec<Var> = side_upsampled.iter().map(|(_, v)| *v).collect();
                let handles: Vec<RuHandles> = sides[1..]
                    .iter()
                    .map(|&s| {
                        Ok(RuHandles {
                            w_c: vars.get(&params::ru_concat(s))?,
                            gate: vars.get(&params::ru_shallow_gate(s))?,
                            up: None,
                        })
                    })
                    .collect::<Result<_>>()?;
                let steps = residual::chain(&mut g, &ups, &handles, RuOrder::ShallowToDeep)?;
                basic = Some(ups[0]);
                let logits = crop_to(&mut g, ups[0], out_size)?;
                supervised.push(SupervisedOutput {
                    name: "basic".into(),
                    logits,
                });
                for (step, &s) in steps.into_iter().zip(&sides[1..]) {
                    let logits = crop_to(&mut g, step.output, out_size)?;
                    supervised.push(SupervisedOutput {
                        name: format!("ru{s}"),
                        logits,
                    });
                    rus.push((s, step));
                }
                prediction = supervised.last().map(|s| s.logits);
            }
        }
    }

    Ok(SrnForward {
        graph: g,
        order: config.ru_order,
        params: vars,
        side_outputs,
        side_upsampled,
        basic,
        rus,
        supervised,
        prediction,
    })
}
