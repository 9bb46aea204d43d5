//! Output residual units and their two stacking orders.
//!
//! An RU receives a supervised map `r_in` and a side-output `s`, and emits a
//! supervised map `r_out = r_in↑ + F`, where `↑` is the RU's own upsampling
//! (deep-to-shallow only) and `F` is the learned output residual:
//!
//! * deep-to-shallow: `r_out = w_c * (s + w_r * up(r_in))`,
//!   so `F = w_c * s + (w_r * w_c - 1) * up(r_in)`
//! * shallow-to-deep: `r_out = w_c * (w_s * s_up + r_in)`,
//!   so `F = w_s * w_c * s_up + (w_c - 1) * r_in`
//!
//! `w_c`, `w_r` and `w_s` are bias-free 1x1 convolutions on single-channel
//! maps, i.e. scalars, so the identities above hold literally.

use crate::error::{Result, SrnError};
use crate::model::RuOrder;
use crate::tensor::{Graph, Tensor, Var};

/// The gate weight of an RU; which one exists depends on the stacking order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// `w_r`, scaling the upsampled deeper RU output.
    Deep(f64),
    /// `w_s`, scaling the upsampled side-output.
    Shallow(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    pub factor: usize,
    pub kernel: Tensor,
}

impl Upsampler {
    pub fn gaussian(factor: usize) -> Self {
        let kernel = Tensor::new(
            vec![1, 1, 2 * factor, 2 * factor],
            crate::tensor::kernels::gaussian_kernel(factor),
        )
        .expect("kernel dims");
        Upsampler { factor, kernel }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let kv = g.input(self.kernel.clone());
        let y = g.gaussian_deconv(xv, kv, self.factor)?;
        Ok(g.value(y).clone())
    }
}

/// Scalar weights of one RU, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct RUWeights {
    pub w_c: f64,
    pub gate: Gate,
    /// Internal upsampling of `r_in` (deep-to-shallow only).
    pub up: Option<Upsampler>,
}

impl RUWeights {
    fn check_order(&self, order: RuOrder) -> Result<()> {
        match (order, self.gate) {
            (RuOrder::DeepToShallow, Gate::Deep(_))
            | (RuOrder::ShallowToDeep, Gate::Shallow(_)) => Ok(()),
            _ => Err(SrnError::Config(format!(
                "{:?} gate used with {order}",
                self.gate
            ))),
        }
    }
}

/// Graph handles for one RU's parameters.
#[derive(Clone, Copy, Debug)]
pub struct RuHandles {
    pub w_c: Var,
    pub gate: Var,
    /// Upsampling kernel and factor applied to `r_in` (deep-to-shallow).
    pub up: Option<(Var, usize)>,
}

/// Graph nodes produced by one RU.
#[derive(Clone, Copy, Debug)]
pub struct RuStep {
    /// The side-output as fed to the RU.
    pub side: Var,
    /// The RU input as fed to the RU.
    pub input: Var,
    /// `r_in↑`: the input after the RU's internal upsampling.
    pub input_up: Var,
    pub output: Var,
}

fn same_dims(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.value(a).dims() != g.value(b).dims() {
        return Err(SrnError::Internal(format!(
            "{what}: resolution mismatch {:?} vs {:?}",
            g.value(a).dims(),
            g.value(b).dims()
        )));
    }
    Ok(())
}

/// `r_i = w_c * (s_i + w_r * up(r_next))`.
pub fn ru_deep_to_shallow(g: &mut Graph, s_i: Var, r_next: Var, ru: &RuHandles) -> Result<RuStep> {
    let input_up = match ru.up {
        Some((kernel, factor)) => g.gaussian_deconv(r_next, kernel, factor)?,
        None => r_next,
    };
    same_dims(g, s_i, input_up, "deep-to-shallow RU")?;
    let gated = g.conv1x1(input_up, ru.gate, None)?;
    let sum = g.add(s_i, gated)?;
    let output = g.conv1x1(sum, ru.w_c, None)?;
    Ok(RuStep {
        side: s_i,
        input: r_next,
        input_up,
        output,
    })
}

/// `r_i = w_c * (w_s * up(s_i) + r_prev)`; `s_up` is already at full resolution.
pub fn ru_shallow_to_deep(g: &mut Graph, s_up: Var, r_prev: Var, ru: &RuHandles) -> Result<RuStep> {
    same_dims(g, s_up, r_prev, "shallow-to-deep RU")?;
    let gated = g.conv1x1(s_up, ru.gate, None)?;
    let sum = g.add(gated, r_prev)?;
    let output = g.conv1x1(sum, ru.w_c, None)?;
    Ok(RuStep {
        side: s_up,
        input: r_prev,
        input_up: r_prev,
        output,
    })
}

/// Stacks `M - 1` RUs over `M` side-outputs (ordered shallow to deep).
///
/// The basic output is the deepest side-output for deep-to-shallow and the
/// shallowest for shallow-to-deep; `rus[k]` parameterizes the `k`-th RU in
/// stacking order. Returns the RU steps in stacking order.
pub fn chain(
    g: &mut Graph,
    side_outputs: &[Var],
    rus: &[RuHandles],
    order: RuOrder,
) -> Result<Vec<RuStep>> {
    let m = side_outputs.len();
    if m < 2 {
        return Err(SrnError::Config(format!(
            "an RU chain needs >= 2 side-outputs, got {m}"
        )));
    }
    if rus.len() != m - 1 {
        return Err(SrnError::Config(format!(
            "{m} side-outputs need {} RUs, got {}",
            m - 1,
            rus.len()
        )));
    }
    let mut steps = Vec::with_capacity(m - 1);
    match order {
        RuOrder::DeepToShallow => {
            let mut r = side_outputs[m - 1];
            for (k, i) in (0..m - 1).rev().enumerate() {
                let step = ru_deep_to_shallow(g, side_outputs[i], r, &rus[k])?;
                r = step.output;
                steps.push(step);
            }
        }
        RuOrder::ShallowToDeep => {
            let mut r = side_outputs[0];
            for i in 1..m {
                let step = ru_shallow_to_deep(g, side_outputs[i], r, &rus[i - 1])?;
                r = step.output;
                steps.push(step);
            }
        }
        RuOrder::NoRuBaseline => {
            return Err(SrnError::Config("the baseline has no RU chain".into()));
        }
    }
    Ok(steps)
}

/// The output residual `F` of one RU, computed directly from its inputs.
///
/// Diagnostic only; the training graph never calls this. `s_i` and `r_in`
/// are the RU's inputs as it receives them (see [`RuStep`]).
pub fn residual_of(s_i: &Tensor, r_in: &Tensor, w: &RUWeights, order: RuOrder) -> Result<Tensor> {
    w.check_order(order)?;
    match w.gate {
        Gate::Deep(w_r) => {
            let r_up = match &w.up {
                Some(up) => up.apply(r_in)?,
                None => r_in.clone(),
            };
            if !s_i.same_shape(&r_up) {
                return Err(SrnError::Shape(format!(
                    "side-output {:?} vs upsampled input {:?}",
                    s_i.dims(),
                    r_up.dims()
                )));
            }
            s_i.scaled(w.w_c).axpy(w_r * w.w_c - 1.0, &r_up)
        }
        Gate::Shallow(w_s) => s_i.scaled(w_s * w.w_c).axpy(w.w_c - 1.0, r_in),
    }
}

/// Applies one RU to plain tensors; returns `(r_in↑, r_out)`.
pub fn apply_ru(
    s_i: &Tensor,
    r_in: &Tensor,
    w: &RUWeights,
    order: RuOrder,
) -> Result<(Tensor, Tensor)> {
    w.check_order(order)?;
    let mut g = Graph::new();
    let s = g.input(s_i.clone());
    let r = g.input(r_in.clone());
    let w_c = g.input(Tensor::full(&[1, 1, 1, 1], w.w_c));
    let (gate, up) = match (w.gate, &w.up) {
        (Gate::Deep(v), Some(up)) => (v, Some((g.input(up.kernel.clone()), up.factor))),
        (Gate::Deep(v), None) | (Gate::Shallow(v), _) => (v, None),
    };
    let gate = g.input(Tensor::full(&[1, 1, 1, 1], gate));
    let handles = RuHandles { w_c, gate, up };
    let step = match order {
        RuOrder::DeepToShallow => ru_deep_to_shallow(&mut g, s, r, &handles)?,
        _ => ru_shallow_to_deep(&mut g, s, r, &handles)?,
    };
    Ok((g.value(step.input_up).clone(), g.value(step.output).clone()))
}
