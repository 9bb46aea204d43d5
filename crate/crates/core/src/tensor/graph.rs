use super::kernels::{self, ConvGeom, DeconvGeom};
use super::Tensor;
use crate::error::{Result, SrnError};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    BiasAdd {
        x: Var,
        b: Var,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Deconv {
        x: Var,
        k: Var,
        geom: DeconvGeom,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Crop {
        x: Var,
    },
    Sum(Var),
    WeightedBce {
        logits: Var,
        labels: Vec<bool>,
        pos_w: f64,
        neg_w: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only record of tensor operations.
///
/// Node ids are assigned in creation order, so every input precedes its
/// consumer and reverse creation order is a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that is not differentiated (images, constants).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        node_op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(SrnError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 2-D convolution of an NCHW input with an OIKK kernel, no bias.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw()?;
        let [o, kc, kh, kw] = self.value(k).nchw()?;
        if kc != c {
            return Err(SrnError::Config(format!(
                "conv2d kernel expects {kc} input channels, input has {c}"
            )));
        }
        if stride == 0 {
            return Err(SrnError::Config("conv2d stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(SrnError::Config(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let geom = ConvGeom {
            batch: n,
            in_c: c,
            in_h: h,
            in_w: w,
            out_c: o,
            k_h: kh,
            k_w: kw,
            stride,
            pad,
        };
        let data = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data());
        let value = Tensor::new(vec![n, o, geom.out_h(), geom.out_w()], data)?;
        self.push("conv2d", value, Op::Conv2d { x, k, geom }, &[x, k])
    }

    /// Adds a per-channel bias of length C to an NCHW tensor.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw()?;
        if self.value(b).len() != c {
            return Err(SrnError::Shape(format!(
                "bias of length {} for {c} channels",
                self.value(b).len()
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, chunk) in data.chunks_mut(h * w).enumerate() {
            let bv = bias[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let value = Tensor::new(vec![n, c, h, w], data)?;
        self.push("bias_add", value, Op::BiasAdd { x, b }, &[x, b])
    }

    /// 1x1 convolution: weight `out x in x 1 x 1`, optional bias of length `out`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).nchw()?;
        let [o, wc, kh, kw] = self.value(w).nchw()?;
        if kh != 1 || kw != 1 {
            return Err(SrnError::Config(format!(
                "conv1x1 weight has spatial size {kh}x{kw}"
            )));
        }
        if wc != c {
            return Err(SrnError::Config(format!(
                "conv1x1 weight expects {wc} channels, input has {c}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(SrnError::Config(format!(
                    "conv1x1 bias of length {} for {o} outputs",
                    self.value(b).len()
                )));
            }
        }
        let data = kernels::conv1x1_forward(
            n,
            c,
            o,
            h * wd,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![n, o, h, wd], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv1x1", value, Op::Conv1x1 { x, w, b }, &inputs)
    }

    /// Channel-wise transposed convolution with a shared square kernel `1x1xKxK`.
    pub fn deconv(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw()?;
        let [ko, ki, kh, kw] = self.value(k).nchw()?;
        if ko != 1 || ki != 1 || kh != kw {
            return Err(SrnError::Config(format!(
                "deconv kernel must be 1x1xKxK, got {:?}",
                self.value(k).dims()
            )));
        }
        if stride == 0 || kh < 2 * pad {
            return Err(SrnError::Config(format!(
                "deconv stride {stride} pad {pad} kernel {kh}"
            )));
        }
        let geom = DeconvGeom {
            planes: n * c,
            in_h: h,
            in_w: w,
            k: kh,
            stride,
            pad,
        };
        let data = kernels::deconv_forward(&geom, self.value(x).data(), self.value(k).data());
        let value = Tensor::new(vec![n, c, geom.out_h(), geom.out_w()], data)?;
        self.push("deconv", value, Op::Deconv { x, k, geom }, &[x, k])
    }

    /// Upsamples by `factor` with a `2f x 2f` kernel, stride `f`, padding `f/2`.
    ///
    /// With the kernel from [`kernels::gaussian_kernel`] this is the Gaussian
    /// deconvolution: output spatial dims are exactly `factor` times the input.
    pub fn gaussian_deconv(&mut self, x: Var, kernel: Var, factor: usize) -> Result<Var> {
        check_upsample_factor(factor)?;
        let k = self.value(kernel).dims().last().copied().unwrap_or(0);
        if k != 2 * factor {
            return Err(SrnError::Config(format!(
                "upsampling x{factor} needs a {0}x{0} kernel, got {k}",
                2 * factor
            )));
        }
        self.deconv(x, kernel, factor, factor / 2)
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(SrnError::Shape(format!(
                "{op} of {:?} and {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let value = self.value(a).axpy(1.0, self.value(b))?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).dims().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).scaled(k);
        self.push("scale", value, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(kernels::sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    /// 2x2 max pooling with stride 2; ties route to the first index in scan order.
    pub fn max_pool2(&mut self, a: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).nchw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(SrnError::Shape(format!(
                "max_pool2 needs even dims, got {h}x{w}"
            )));
        }
        let (data, argmax) = kernels::max_pool2_forward(n * c, h, w, self.value(a).data());
        let value = Tensor::new(vec![n, c, h / 2, w / 2], data)?;
        self.push("max_pool2", value, Op::MaxPool2 { x: a, argmax }, &[a])
    }

    /// Keeps the top-left `height x width` window of every plane.
    pub fn crop(&mut self, a: Var, height: usize, width: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(a).nchw()?;
        if height > h || width > w || height == 0 || width == 0 {
            return Err(SrnError::Shape(format!(
                "crop {height}x{width} from {h}x{w}"
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * c * height * width);
        for p in 0..n * c {
            for y in 0..height {
                data.extend_from_slice(&src[p * h * w + y * w..][..width]);
            }
        }
        let value = Tensor::new(vec![n, c, height, width], data)?;
        self.push("crop", value, Op::Crop { x: a }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// `pos_w * sum_{y=1} softplus(-x) + neg_w * sum_{y=0} softplus(x)`.
    pub fn weighted_bce(
        &mut self,
        logits: Var,
        labels: &[bool],
        pos_w: f64,
        neg_w: f64,
    ) -> Result<Var> {
        if self.value(logits).len() != labels.len() {
            return Err(SrnError::Shape(format!(
                "{} logits for {} labels",
                self.value(logits).len(),
                labels.len()
            )));
        }
        let loss = kernels::weighted_bce_forward(self.value(logits).data(), labels, pos_w, neg_w);
        let op = Op::WeightedBce {
            logits,
            labels: labels.to_vec(),
            pos_w,
            neg_w,
        };
        self.push("weighted_bce", Tensor::scalar(loss), op, &[logits])
    }

    /// Accumulates `d loss / d node` into every node that requires a gradient.
    ///
    /// Calling twice without [`Graph::zero_grad`] sums the contributions.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(SrnError::Usage(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(Tensor::new(node.value.dims().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; len])
                .as_mut_slice(),
        )
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Option<Vec<f64>>) {
        if let (Some(delta), Some(dst)) = (delta, self.slot(grads, v)) {
            dst.iter_mut().zip(&delta).for_each(|(a, b)| *a += b);
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let value = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom } => {
                let mut gk = self.nodes[k.0]
                    .requires_grad
                    .then(|| vec![0.0; value(*k).len()]);
                let gx = self.slot(grads, *x);
                if gx.is_some() || gk.is_some() {
                    kernels::conv2d_backward(geom, value(*x), value(*k), g, gx, gk.as_deref_mut());
                }
                self.accumulate(grads, *k, gk);
            }
            Op::BiasAdd { x, b } => {
                let [_, c, h, w] = self.nodes[x.0].value.nchw().expect("nchw");
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (p, chunk) in g.chunks(h * w).enumerate() {
                        gb[p % c] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Conv1x1 { x, w, b } => {
                let [n, c, h, wd] = self.nodes[x.0].value.nchw().expect("nchw");
                let o = self.nodes[w.0].value.dims()[0];
                let mut gw = self.nodes[w.0].requires_grad.then(|| vec![0.0; o * c]);
                let mut gb = b
                    .filter(|b| self.nodes[b.0].requires_grad)
                    .map(|_| vec![0.0; o]);
                let gx = self.slot(grads, *x);
                kernels::conv1x1_backward(
                    n,
                    c,
                    o,
                    h * wd,
                    value(*x),
                    value(*w),
                    g,
                    gx,
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Deconv { x, k, geom } => {
                let mut gk = self.nodes[k.0]
                    .requires_grad
                    .then(|| vec![0.0; value(*k).len()]);
                let gx = self.slot(grads, *x);
                if gx.is_some() || gk.is_some() {
                    kernels::deconv_backward(geom, value(*x), value(*k), g, gx, gk.as_deref_mut());
                }
                self.accumulate(grads, *k, gk);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(dst) = self.slot(grads, v) {
                        dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (value(*a).to_vec(), value(*b).to_vec());
                if let Some(dst) = self.slot(grads, *a) {
                    for ((d, s), y) in dst.iter_mut().zip(g).zip(&vb) {
                        *d += s * y;
                    }
                }
                if let Some(dst) = self.slot(grads, *b) {
                    for ((d, s), x) in dst.iter_mut().zip(g).zip(&va) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(dst) = self.slot(grads, *a) {
                    dst.iter_mut().zip(g).for_each(|(d, s)| *d += k * s);
                }
            }
            Op::Relu(a) => {
                if let Some(dst) = self.slot(grads, *a) {
                    for ((d, s), x) in dst.iter_mut().zip(g).zip(value(*a)) {
                        if *x > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[i].value.data();
                if let Some(dst) = self.slot(grads, *a) {
                    for ((d, s), y) in dst.iter_mut().zip(g).zip(out) {
                        *d += s * y * (1.0 - y);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dst) = self.slot(grads, *x) {
                    for (s, &j) in g.iter().zip(argmax) {
                        dst[j] += s;
                    }
                }
            }
            Op::Crop { x } => {
                let [n, c, h, w] = self.nodes[x.0].value.nchw().expect("nchw");
                let [_, _, ch, cw] = self.nodes[i].value.nchw().expect("nchw");
                if let Some(dst) = self.slot(grads, *x) {
                    for p in 0..n * c {
                        for y in 0..ch {
                            let d = &mut dst[p * h * w + y * w..][..cw];
                            let s = &g[(p * ch + y) * cw..][..cw];
                            d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(dst) = self.slot(grads, *a) {
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::WeightedBce {
                logits,
                labels,
                pos_w,
                neg_w,
            } => {
                if let Some(dst) = self.slot(grads, *logits) {
                    kernels::weighted_bce_grad(value(*logits), labels, *pos_w, *neg_w, g[0], dst);
                }
            }
        }
    }
}

pub(crate) fn check_upsample_factor(factor: usize) -> Result<()> {
    if !matches!(factor, 2 | 4 | 8 | 16) {
        return Err(SrnError::Config(format!(
            "upsampling factor must be one of 2, 4, 8, 16; got {factor}"
        )));
    }
    Ok(())
}
