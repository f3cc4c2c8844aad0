//! Reverse-mode automatic differentiation over NCHW `f64` tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the backward sweep is a reverse walk over the node list.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

use super::conv::{self, ConvGeom};
use super::params::{ParamId, ParamStore, Tensor};

const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<Array2<f64>>,
    },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    LayerNormChannels {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    InstanceNorm {
        x: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MseLoss {
        x: Var,
        target: Tensor,
    },
    SegLoss {
        logits: Var,
        masks: Tensor,
        bce_weight: f64,
        dice_weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of tensor operations.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    keep_cache: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

fn slice(t: &Tensor) -> &[f64] {
    t.as_slice().expect("tensors are kept in standard layout")
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data length")
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Weighted BCE + soft-Dice loss, averaged over the batch.
///
/// `logits` and `masks` are `(N, ...)` with matching shapes. Returns the loss
/// and, if requested, its gradient with respect to the logits.
pub(crate) fn seg_loss(
    logits: &[f64],
    masks: &[f64],
    batch: usize,
    bce_weight: f64,
    dice_weight: f64,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    assert_eq!(logits.len(), masks.len());
    assert!(batch > 0 && logits.len() % batch == 0);
    let per = logits.len() / batch;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; logits.len()]);
    for n in 0..batch {
        let l = &logits[n * per..(n + 1) * per];
        let m = &masks[n * per..(n + 1) * per];
        let mut bce = 0.0;
        let (mut inter, mut psum, mut msum) = (0.0, 0.0, 0.0);
        for (&li, &mi) in l.iter().zip(m) {
            bce += li.max(0.0) - li * mi + (-li.abs()).exp().ln_1p();
            let p = sigmoid(li);
            inter += p * mi;
            psum += p;
            msum += mi;
        }
        bce /= per as f64;
        let denom = psum + msum + 1.0;
        let soft_dice = (2.0 * inter + 1.0) / denom;
        total += bce_weight * bce + dice_weight * (1.0 - soft_dice);
        if let Some(g) = grad.as_mut() {
            let g = &mut g[n * per..(n + 1) * per];
            let inv_b = 1.0 / batch as f64;
            for ((gi, &li), &mi) in g.iter_mut().zip(l).zip(m) {
                let p = sigmoid(li);
                let d_bce = (p - mi) / per as f64;
                let d_dice_dp = (2.0 * mi * denom - (2.0 * inter + 1.0)) / (denom * denom);
                let d_dice = -d_dice_dp * p * (1.0 - p);
                *gi = inv_b * (bce_weight * d_bce + dice_weight * d_dice);
            }
        }
    }
    (total / batch as f64, grad)
}

impl Graph {
    /// Graph whose forward pass retains everything needed for [`Graph::backward`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            keep_cache: true,
        }
    }

    /// Forward-only graph; drops convolution buffers as it goes.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            keep_cache: false,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let t = if t.is_standard_layout() {
            t
        } else {
            t.as_standard_layout().into_owned()
        };
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id).as_standard_layout().into_owned();
        self.push(t, Op::Param(id))
    }

    /// 2-D convolution; `w` is `(cout, cin, k, k)` and `b` is `(cout)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, cin, h, wd) = dims4(self.value(x));
        let (cout, wcin, k, k2) = dims4(self.value(w));
        assert_eq!(cin, wcin, "conv input channels");
        assert_eq!(k, k2, "square kernels only");
        let geom = ConvGeom::new(cin, h, wd, k, stride, pad);
        let mut out = vec![0.0; n * cout * geom.ho * geom.wo];
        let mut cols = Vec::new();
        {
            let xs = slice(self.value(x));
            let ws = slice(self.value(w));
            let bs = b.map(|b| slice(self.value(b)));
            let in_len = cin * h * wd;
            let out_len = cout * geom.ho * geom.wo;
            for i in 0..n {
                let c = conv::forward_sample(
                    &xs[i * in_len..(i + 1) * in_len],
                    ws,
                    bs,
                    cout,
                    &geom,
                    &mut out[i * out_len..(i + 1) * out_len],
                );
                if self.keep_cache {
                    cols.push(c);
                }
            }
        }
        let value = tensor(&[n, cout, geom.ho, geom.wo], out);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shapes");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// 2×2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let xs = slice(self.value(x));
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for &off in &[1, w, w + 1] {
                        let idx = base + 2 * i * w + 2 * j + off;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + i * wo + j;
                    out[o] = xs[best];
                    argmax[o] = best;
                }
            }
        }
        let v = tensor(&[n, c, ho, wo], out);
        self.push(v, Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let xs = slice(self.value(x));
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            for i in 0..ho {
                let src = &xs[plane * h * w + (i / 2) * w..plane * h * w + (i / 2 + 1) * w];
                let dst = &mut out[plane * ho * wo + i * wo..plane * ho * wo + (i + 1) * wo];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = src[j / 2];
                }
            }
        }
        let v = tensor(&[n, c, ho, wo], out);
        self.push(v, Op::Upsample2(x))
    }

    /// Inverted dropout. A zero rate (or no generator) returns `x` itself.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
        let Some(rng) = rng else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x);
        let data: Vec<f64> = slice(xv).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = tensor(xv.shape(), data);
        self.push(v, Op::Dropout { x, mask })
    }

    /// Layer normalisation across channels at every spatial position
    /// (the token-wise normalisation of an MLP block on an `N×C×H×W` grid).
    pub fn layer_norm_channels(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let hw = h * w;
        let xs = slice(self.value(x));
        let g = slice(self.value(gamma));
        let b = slice(self.value(beta));
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; n * hw];
        let mut out = vec![0.0; xs.len()];
        for s in 0..n {
            for p in 0..hw {
                let idx = |ch: usize| (s * c + ch) * hw + p;
                let mean = (0..c).map(|ch| xs[idx(ch)]).sum::<f64>() / c as f64;
                let var = (0..c).map(|ch| (xs[idx(ch)] - mean).powi(2)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[s * hw + p] = is;
                for ch in 0..c {
                    let xh = (xs[idx(ch)] - mean) * is;
                    xhat[idx(ch)] = xh;
                    out[idx(ch)] = xh * g[ch] + b[ch];
                }
            }
        }
        let v = tensor(&[n, c, h, w], out);
        self.push(
            v,
            Op::LayerNormChannels {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Instance normalisation (per sample and channel over H×W), no affine.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let hw = h * w;
        let xs = slice(self.value(x));
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; n * c];
        for plane in 0..n * c {
            let src = &xs[plane * hw..(plane + 1) * hw];
            let mean = src.iter().sum::<f64>() / hw as f64;
            let var = src.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[plane] = is;
            for (d, &a) in xhat[plane * hw..(plane + 1) * hw].iter_mut().zip(src) {
                *d = (a - mean) * is;
            }
        }
        let v = tensor(&[n, c, h, w], xhat.clone());
        self.push(v, Op::InstanceNorm { x, xhat, inv_std })
    }

    /// `y[n,c,:,:] = x[n,c,:,:] * scale[n,c] + shift[n,c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert_eq!(self.value(scale).shape(), &[n, c]);
        assert_eq!(self.value(shift).shape(), &[n, c]);
        let hw = h * w;
        let xs = slice(self.value(x));
        let sc = slice(self.value(scale));
        let sh = slice(self.value(shift));
        let mut out = vec![0.0; xs.len()];
        for plane in 0..n * c {
            for (o, &a) in out[plane * hw..(plane + 1) * hw]
                .iter_mut()
                .zip(&xs[plane * hw..(plane + 1) * hw])
            {
                *o = a * sc[plane] + sh[plane];
            }
        }
        let v = tensor(&[n, c, h, w], out);
        self.push(v, Op::ChannelAffine { x, scale, shift })
    }

    /// `(N, C, H, W) -> (N, C)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let hw = h * w;
        let xs = slice(self.value(x));
        let out: Vec<f64> = (0..n * c)
            .map(|p| xs[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let v = tensor(&[n, c], out);
        self.push(v, Op::GlobalAvgPool(x))
    }

    /// `y = x Wᵀ + b` with `x: (N, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear input must be 2-D");
        let wv = self
            .value(w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("linear weight must be 2-D");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("linear bias must be 1-D");
        let y = xv.dot(&wv.t()) + &bv;
        let v = y.into_dyn().as_standard_layout().into_owned();
        self.push(v, Op::Linear { x, w, b })
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse_loss(&mut self, x: Var, target: Tensor) -> Var {
        assert_eq!(self.value(x).shape(), target.shape(), "mse shapes");
        let target = target.as_standard_layout().into_owned();
        let n = target.len() as f64;
        let l = slice(self.value(x))
            .iter()
            .zip(slice(&target))
            .map(|(a, t)| (a - t).powi(2))
            .sum::<f64>()
            / n;
        self.push(ArrayD::from_elem(IxDyn(&[]), l), Op::MseLoss { x, target })
    }

    /// Weighted BCE-with-logits + (1 - soft Dice); scalar output.
    pub fn seg_loss(&mut self, logits: Var, masks: Tensor, bce_weight: f64, dice_weight: f64) -> Var {
        assert_eq!(self.value(logits).shape(), masks.shape(), "loss shapes");
        let masks = masks.as_standard_layout().into_owned();
        let batch = masks.shape()[0];
        let (l, _) = seg_loss(
            slice(self.value(logits)),
            slice(&masks),
            batch,
            bce_weight,
            dice_weight,
            false,
        );
        self.push(
            ArrayD::from_elem(IxDyn(&[]), l),
            Op::SegLoss {
                logits,
                masks,
                bce_weight,
                dice_weight,
            },
        )
    }

    /// Back-propagate from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(gy);
                continue;
            }
            let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
                Some(e) => *e += &g,
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cols,
                } => {
                    assert!(!cols.is_empty(), "backward through an inference graph");
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, cin, h, wd) = dims4(xv);
                    let cout = wv.shape()[0];
                    let mut dw = vec![0.0; wv.len()];
                    let mut db = b.map(|_| vec![0.0; cout]);
                    let mut dx = vec![0.0; xv.len()];
                    let gs = slice(&gy);
                    let out_len = cout * geom.ho * geom.wo;
                    let in_len = cin * h * wd;
                    for s in 0..n {
                        conv::backward_sample(
                            &gs[s * out_len..(s + 1) * out_len],
                            &cols[s],
                            slice(wv),
                            cout,
                            geom,
                            &mut dw,
                            db.as_deref_mut(),
                            Some(&mut dx[s * in_len..(s + 1) * in_len]),
                        );
                    }
                    acc(*x, tensor(xv.shape(), dx));
                    acc(*w, tensor(wv.shape(), dw));
                    if let (Some(b), Some(db)) = (b, db) {
                        acc(*b, tensor(&[cout], db));
                    }
                }
                Op::Relu(x) => {
                    let mut g = gy;
                    g.zip_mut_with(self.value(*x), |gv, &xv| {
                        if xv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(*x, g);
                }
                Op::Gelu(x) => {
                    let mut g = gy;
                    g.zip_mut_with(self.value(*x), |gv, &xv| *gv *= gelu_grad(xv));
                    acc(*x, g);
                }
                Op::Sigmoid(x) => {
                    let mut g = gy;
                    g.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, gy.clone());
                    acc(*b, gy);
                }
                Op::MaxPool2 { x, argmax } => {
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.len()];
                    for (&src, &g) in argmax.iter().zip(slice(&gy)) {
                        dx[src] += g;
                    }
                    acc(*x, tensor(xv.shape(), dx));
                }
                Op::Upsample2(x) => {
                    let (n, c, h, w) = dims4(self.value(*x));
                    let gs = slice(&gy);
                    let (ho, wo) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; n * c * h * w];
                    for plane in 0..n * c {
                        for i in 0..ho {
                            for j in 0..wo {
                                dx[plane * h * w + (i / 2) * w + j / 2] +=
                                    gs[plane * ho * wo + i * wo + j];
                            }
                        }
                    }
                    acc(*x, tensor(&[n, c, h, w], dx));
                }
                Op::Dropout { x, mask } => {
                    let data: Vec<f64> = slice(&gy).iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(*x, tensor(gy.shape(), data));
                }
                Op::LayerNormChannels {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, c, h, w) = dims4(self.value(*x));
                    let hw = h * w;
                    let g = slice(self.value(*gamma));
                    let gs = slice(&gy);
                    let mut dx = vec![0.0; gs.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for s in 0..n {
                        for p in 0..hw {
                            let idx = |ch: usize| (s * c + ch) * hw + p;
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for ch in 0..c {
                                let d = gs[idx(ch)] * g[ch];
                                sum_d += d;
                                sum_dx += d * xhat[idx(ch)];
                                dgamma[ch] += gs[idx(ch)] * xhat[idx(ch)];
                                dbeta[ch] += gs[idx(ch)];
                            }
                            let is = inv_std[s * hw + p];
                            for ch in 0..c {
                                let d = gs[idx(ch)] * g[ch];
                                dx[idx(ch)] = is / c as f64
                                    * (c as f64 * d - sum_d - xhat[idx(ch)] * sum_dx);
                            }
                        }
                    }
                    acc(*x, tensor(&[n, c, h, w], dx));
                    acc(*gamma, tensor(&[c], dgamma));
                    acc(*beta, tensor(&[c], dbeta));
                }
                Op::InstanceNorm { x, xhat, inv_std } => {
                    let (n, c, h, w) = dims4(self.value(*x));
                    let hw = h * w;
                    let m = hw as f64;
                    let gs = slice(&gy);
                    let mut dx = vec![0.0; gs.len()];
                    for plane in 0..n * c {
                        let r = plane * hw..(plane + 1) * hw;
                        let sum_d: f64 = gs[r.clone()].iter().sum();
                        let sum_dx: f64 = gs[r.clone()]
                            .iter()
                            .zip(&xhat[r.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        let is = inv_std[plane];
                        for k in r {
                            dx[k] = is / m * (m * gs[k] - sum_d - xhat[k] * sum_dx);
                        }
                    }
                    acc(*x, tensor(&[n, c, h, w], dx));
                }
                Op::ChannelAffine { x, scale, shift } => {
                    let xv = self.value(*x);
                    let (n, c, h, w) = dims4(xv);
                    let hw = h * w;
                    let xs = slice(xv);
                    let sc = slice(self.value(*scale));
                    let gs = slice(&gy);
                    let mut dx = vec![0.0; xs.len()];
                    let mut dsc = vec![0.0; n * c];
                    let mut dsh = vec![0.0; n * c];
                    for plane in 0..n * c {
                        for k in plane * hw..(plane + 1) * hw {
                            dx[k] = gs[k] * sc[plane];
                            dsc[plane] += gs[k] * xs[k];
                            dsh[plane] += gs[k];
                        }
                    }
                    acc(*x, tensor(&[n, c, h, w], dx));
                    acc(*scale, tensor(&[n, c], dsc));
                    acc(*shift, tensor(&[n, c], dsh));
                }
                Op::GlobalAvgPool(x) => {
                    let (n, c, h, w) = dims4(self.value(*x));
                    let hw = h * w;
                    let gs = slice(&gy);
                    let mut dx = vec![0.0; n * c * hw];
                    for plane in 0..n * c {
                        let v = gs[plane] / hw as f64;
                        dx[plane * hw..(plane + 1) * hw].fill(v);
                    }
                    acc(*x, tensor(&[n, c, h, w], dx));
                }
                Op::Linear { x, w, b } => {
                    let g2 = gy.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    let xv = self.value(*x).view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    let wv = self.value(*w).view().into_dimensionality::<ndarray::Ix2>().unwrap();
                    let dx = g2.dot(&wv);
                    let dw = g2.t().dot(&xv);
                    let db = g2.sum_axis(ndarray::Axis(0));
                    acc(*x, dx.into_dyn().as_standard_layout().into_owned());
                    acc(*w, dw.into_dyn().as_standard_layout().into_owned());
                    acc(*b, db.into_dyn());
                }
                Op::MseLoss { x, target } => {
                    let g0 = gy.iter().next().copied().unwrap_or(1.0);
                    let n = target.len() as f64;
                    let xv = self.value(*x);
                    let data: Vec<f64> = slice(xv)
                        .iter()
                        .zip(slice(target))
                        .map(|(a, t)| g0 * 2.0 * (a - t) / n)
                        .collect();
                    acc(*x, tensor(xv.shape(), data));
                }
                Op::SegLoss {
                    logits,
                    masks,
                    bce_weight,
                    dice_weight,
                } => {
                    let g0 = gy.iter().next().copied().unwrap_or(1.0);
                    let lv = self.value(*logits);
                    let (_, grad) = seg_loss(
                        slice(lv),
                        slice(masks),
                        masks.shape()[0],
                        *bce_weight,
                        *dice_weight,
                        true,
                    );
                    let data = grad.expect("gradient requested").into_iter().map(|g| g * g0).collect();
                    acc(*logits, tensor(lv.shape(), data));
                }
            }
        }
        Gradients { grads }
    }

    /// Parameter ids referenced by this graph, in node order.
    fn param_nodes(&self) -> impl Iterator<Item = (usize, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((i, id)),
            _ => None,
        })
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients indexed by [`ParamId`]; parameters used several times are summed.
    pub fn params(&self, graph: &Graph, store: &ParamStore) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; store.len()];
        for (node, id) in graph.param_nodes() {
            if let Some(g) = &self.grads[node] {
                match &mut out[id.index()] {
                    Some(e) => *e += g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}
