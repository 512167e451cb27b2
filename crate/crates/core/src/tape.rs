//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Graphs are define-by-run: every builder on [`Tape`] computes its value
//! eagerly and records the operation. [`Tape::backward`] walks the record in
//! reverse node order and returns gradients. Gradients are kept for leaf
//! nodes only (inputs and parameters); interior gradients are dropped once
//! consumed.
//!
//! Shape misuse is a programming error and panics; it is never driven by
//! runtime data.

use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::{scalar, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op<S: Scalar> {
    Leaf,
    /// input [B,IC,H,W], weight [OC,IC,KH,KW], bias [OC].
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: usize },
    /// Nearest-neighbour 2x upsampling of [B,C,H,W].
    Upsample2x { input: NodeId },
    LeakyRelu { input: NodeId, slope: S },
    Tanh { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { input: NodeId, c: S },
    AddScalar { input: NodeId },
    Abs { input: NodeId },
    Square { input: NodeId },
    /// Mean over every element; output shape [1].
    MeanAll { input: NodeId },
    /// Channel concatenation of two [B,C,H,W] tensors.
    ConcatCh { a: NodeId, b: NodeId },
    /// Softmax over the channel axis of [B,K,H,W].
    SoftmaxCh { input: NodeId },
    /// Distance between the batch statistics of one channel (per-pixel mean
    /// image H×W plus H×H column covariance) and fixed reference statistics;
    /// see `domainstats`. Output shape [1].
    StatsLoss {
        input: NodeId,
        channel: usize,
        ref_mean: Vec<S>,
        ref_cov: Vec<S>,
        mean_image: Vec<S>,
        col_mean: Vec<S>,
        cov: Vec<S>,
    },
    /// Frequency-weighted cross-entropy over valid pixels. Output shape [1].
    /// `labels` and `mask` are row-major [B,H,W]; `alphas` has one weight per
    /// class (channel).
    WeightedCe { logits: NodeId, labels: Vec<u8>, mask: Vec<bool>, alphas: Vec<S> },
}

pub struct Tape<S: Scalar> {
    vals: Vec<Tensor<S>>,
    ops: Vec<Op<S>>,
    /// Parameter leaves in creation order, for gradient scatter.
    param_nodes: Vec<(ParamId, NodeId)>,
    /// One binding per store parameter so a parameter reused inside a tape
    /// maps to a single node and its gradients accumulate.
    bindings: Vec<Option<NodeId>>,
}

pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of a leaf node. Interior nodes return `None`.
    pub fn get(&self, n: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(n.0).and_then(|g| g.as_ref())
    }
}

fn dims4<S: Scalar>(t: &Tensor<S>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected rank-4 tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), ops: Vec::new(), param_nodes: Vec::new(), bindings: Vec::new() }
    }

    fn push(&mut self, val: Tensor<S>, op: Op<S>) -> NodeId {
        self.vals.push(val);
        self.ops.push(op);
        NodeId(self.vals.len() - 1)
    }

    pub fn value(&self, n: NodeId) -> &Tensor<S> {
        &self.vals[n.0]
    }

    pub fn scalar_value(&self, n: NodeId) -> S {
        let t = &self.vals[n.0];
        assert_eq!(t.len(), 1, "scalar_value on non-scalar node");
        t.data()[0]
    }

    pub fn leaf(&mut self, t: Tensor<S>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Leaf carrying the value of a node without a gradient path to it.
    pub fn detach(&mut self, n: NodeId) -> NodeId {
        let v = self.vals[n.0].clone();
        self.leaf(v)
    }

    /// Leaf bound to a stored parameter; repeated binding returns the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        if self.bindings.len() < store.len() {
            self.bindings.resize(store.len(), None);
        }
        if let Some(n) = self.bindings[id.index()] {
            return n;
        }
        let n = self.push(store.value(id).clone(), Op::Leaf);
        self.bindings[id.index()] = Some(n);
        self.param_nodes.push((id, n));
        n
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn apply_param_grads(&self, grads: &Gradients<S>, store: &mut ParamStore<S>) {
        for &(pid, node) in &self.param_nodes {
            if let Some(g) = grads.get(node) {
                store.add_grad(pid, g);
            }
        }
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: usize) -> NodeId {
        let out = conv2d_forward(&self.vals[input.0], &self.vals[weight.0], &self.vals[bias.0], stride, pad);
        self.push(out, Op::Conv2d { input, weight, bias, stride, pad })
    }

    pub fn upsample2x(&mut self, input: NodeId) -> NodeId {
        let (b, c, h, w) = dims4(&self.vals[input.0]);
        let src = &self.vals[input.0];
        let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let v = src.at4(bi, ci, y, x);
                        out.set4(bi, ci, 2 * y, 2 * x, v);
                        out.set4(bi, ci, 2 * y, 2 * x + 1, v);
                        out.set4(bi, ci, 2 * y + 1, 2 * x, v);
                        out.set4(bi, ci, 2 * y + 1, 2 * x + 1, v);
                    }
                }
            }
        }
        self.push(out, Op::Upsample2x { input })
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: S) -> NodeId {
        let out = self.vals[input.0].map(|x| if x >= S::zero() { x } else { slope * x });
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let out = self.vals[input.0].map(|x| x.tanh());
        self.push(out, Op::Tanh { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_vec(ta.shape(), data).expect("add shape");
        self.push(out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::from_vec(ta.shape(), data).expect("sub shape");
        self.push(out, Op::Sub { a, b })
    }

    pub fn scale(&mut self, input: NodeId, c: S) -> NodeId {
        let out = self.vals[input.0].map(|x| x * c);
        self.push(out, Op::Scale { input, c })
    }

    pub fn add_scalar(&mut self, input: NodeId, c: S) -> NodeId {
        let out = self.vals[input.0].map(|x| x + c);
        self.push(out, Op::AddScalar { input })
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        let out = self.vals[input.0].map(|x| x.abs());
        self.push(out, Op::Abs { input })
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let out = self.vals[input.0].map(|x| x * x);
        self.push(out, Op::Square { input })
    }

    pub fn mean_all(&mut self, input: NodeId) -> NodeId {
        let t = &self.vals[input.0];
        assert!(!t.is_empty(), "mean over empty tensor");
        let n = scalar::<S>(t.len() as f64);
        let m = t.data().iter().copied().sum::<S>() / n;
        self.push(Tensor::from_vec(&[1], vec![m]).expect("scalar"), Op::MeanAll { input })
    }

    /// Mean absolute difference, also used as the element-wise L1 norm here.
    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    pub fn concat_ch(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ba, ca, ha, wa) = dims4(&self.vals[a.0]);
        let (bb, cb, hb, wb) = dims4(&self.vals[b.0]);
        assert!(ba == bb && ha == hb && wa == wb, "concat_ch spatial mismatch");
        let mut out = Tensor::zeros(&[ba, ca + cb, ha, wa]);
        let plane = ha * wa;
        for bi in 0..ba {
            for ci in 0..ca {
                let src = &self.vals[a.0].data()[((bi * ca + ci) * plane)..][..plane];
                out.data_mut()[((bi * (ca + cb) + ci) * plane)..][..plane].copy_from_slice(src);
            }
            for ci in 0..cb {
                let src = &self.vals[b.0].data()[((bi * cb + ci) * plane)..][..plane];
                out.data_mut()[((bi * (ca + cb) + ca + ci) * plane)..][..plane].copy_from_slice(src);
            }
        }
        self.push(out, Op::ConcatCh { a, b })
    }

    pub fn softmax_ch(&mut self, input: NodeId) -> NodeId {
        let (b, k, h, w) = dims4(&self.vals[input.0]);
        let src = &self.vals[input.0];
        let mut out = Tensor::zeros(&[b, k, h, w]);
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let mut zmax = S::neg_infinity();
                    for c in 0..k {
                        zmax = zmax.max(src.at4(bi, c, y, x));
                    }
                    let mut denom = S::zero();
                    for c in 0..k {
                        denom += (src.at4(bi, c, y, x) - zmax).exp();
                    }
                    for c in 0..k {
                        out.set4(bi, c, y, x, (src.at4(bi, c, y, x) - zmax).exp() / denom);
                    }
                }
            }
        }
        self.push(out, Op::SoftmaxCh { input })
    }

    /// `mean |cov(x) - ref_cov|` plus `mean |mean_image(x) - ref_mean|` for
    /// one channel of a [B,C,H,W] batch. The mean image is the per-pixel
    /// batch mean (H×W); the covariance pools all B·W columns as samples.
    pub fn stats_loss(&mut self, input: NodeId, channel: usize, ref_mean: &[S], ref_cov: &[S]) -> NodeId {
        let (b, c, h, w) = dims4(&self.vals[input.0]);
        assert!(channel < c, "stats channel out of range");
        assert!(b * w >= 2, "column statistics need at least two columns");
        assert_eq!(ref_mean.len(), h * w, "reference mean image length");
        assert_eq!(ref_cov.len(), h * h, "reference covariance length");
        let raw = crate::domainstats::raw_batch_stats(&self.vals[input.0], channel);
        let hh = scalar::<S>((h * h) as f64);
        let hw = scalar::<S>((h * w) as f64);
        let mut loss = S::zero();
        for i in 0..h * h {
            loss += (raw.cov[i] - ref_cov[i]).abs() / hh;
        }
        for i in 0..h * w {
            loss += (raw.mean_image[i] - ref_mean[i]).abs() / hw;
        }
        self.push(
            Tensor::from_vec(&[1], vec![loss]).expect("scalar"),
            Op::StatsLoss {
                input,
                channel,
                ref_mean: ref_mean.to_vec(),
                ref_cov: ref_cov.to_vec(),
                mean_image: raw.mean_image,
                col_mean: raw.col_mean,
                cov: raw.cov,
            },
        )
    }

    /// Mean over valid pixels of `alpha[label] * -ln softmax(logits)[label]`.
    /// Zero-valid batches produce a zero loss with zero gradient.
    pub fn weighted_ce(&mut self, logits: NodeId, labels: &[u8], mask: &[bool], alphas: &[S]) -> NodeId {
        let (b, k, h, w) = dims4(&self.vals[logits.0]);
        assert_eq!(labels.len(), b * h * w, "label count");
        assert_eq!(mask.len(), b * h * w, "mask count");
        assert_eq!(alphas.len(), k, "one class weight per channel");
        let src = &self.vals[logits.0];
        let mut total = S::zero();
        let mut count = 0usize;
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let idx = (bi * h + y) * w + x;
                    if !mask[idx] {
                        continue;
                    }
                    let cl = labels[idx] as usize;
                    assert!(cl < k, "label {cl} out of range for {k} classes");
                    let mut zmax = S::neg_infinity();
                    for c in 0..k {
                        zmax = zmax.max(src.at4(bi, c, y, x));
                    }
                    let mut denom = S::zero();
                    for c in 0..k {
                        denom += (src.at4(bi, c, y, x) - zmax).exp();
                    }
                    let logp = src.at4(bi, cl, y, x) - zmax - denom.ln();
                    total += -alphas[cl] * logp;
                    count += 1;
                }
            }
        }
        let loss = if count > 0 { total / scalar::<S>(count as f64) } else { S::zero() };
        self.push(
            Tensor::from_vec(&[1], vec![loss]).expect("scalar"),
            Op::WeightedCe { logits, labels: labels.to_vec(), mask: mask.to_vec(), alphas: alphas.to_vec() },
        )
    }

    /// Reverse pass from `root` (seeded with ones). Gradients are retained
    /// for leaves only.
    pub fn backward(&self, root: NodeId) -> Gradients<S> {
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.vals.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.vals[root.0].shape(), S::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { input, weight, bias, stride, pad } => {
                    let (gi, gw, gb) = conv2d_backward(
                        &self.vals[input.0],
                        &self.vals[weight.0],
                        &g,
                        *stride,
                        *pad,
                    );
                    add_grad(&mut grads, input.0, gi);
                    add_grad(&mut grads, weight.0, gw);
                    add_grad(&mut grads, bias.0, gb);
                }
                Op::Upsample2x { input } => {
                    let (b, c, h2, w2) = dims4(&g);
                    let (h, w) = (h2 / 2, w2 / 2);
                    let mut gi = Tensor::zeros(&[b, c, h, w]);
                    for bi in 0..b {
                        for ci in 0..c {
                            for y in 0..h {
                                for x in 0..w {
                                    let s = g.at4(bi, ci, 2 * y, 2 * x)
                                        + g.at4(bi, ci, 2 * y, 2 * x + 1)
                                        + g.at4(bi, ci, 2 * y + 1, 2 * x)
                                        + g.at4(bi, ci, 2 * y + 1, 2 * x + 1);
                                    gi.set4(bi, ci, y, x, s);
                                }
                            }
                        }
                    }
                    add_grad(&mut grads, input.0, gi);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.vals[input.0];
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| if xv >= S::zero() { gv } else { gv * *slope })
                        .collect();
                    add_grad(&mut grads, input.0, Tensor::from_vec(x.shape(), data).expect("shape"));
                }
                Op::Tanh { input } => {
                    let y = &self.vals[i];
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| gv * (S::one() - yv * yv))
                        .collect();
                    add_grad(&mut grads, input.0, Tensor::from_vec(y.shape(), data).expect("shape"));
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads, b.0, g.clone());
                    add_grad(&mut grads, a.0, g);
                }
                Op::Sub { a, b } => {
                    add_grad(&mut grads, b.0, g.map(|x| -x));
                    add_grad(&mut grads, a.0, g);
                }
                Op::Scale { input, c } => {
                    let c = *c;
                    add_grad(&mut grads, input.0, g.map(|x| x * c));
                }
                Op::AddScalar { input } => {
                    add_grad(&mut grads, input.0, g);
                }
                Op::Abs { input } => {
                    let x = &self.vals[input.0];
                    let data = x.data().iter().zip(g.data()).map(|(&xv, &gv)| gv * sign(xv)).collect();
                    add_grad(&mut grads, input.0, Tensor::from_vec(x.shape(), data).expect("shape"));
                }
                Op::Square { input } => {
                    let x = &self.vals[input.0];
                    let two = scalar::<S>(2.0);
                    let data = x.data().iter().zip(g.data()).map(|(&xv, &gv)| gv * two * xv).collect();
                    add_grad(&mut grads, input.0, Tensor::from_vec(x.shape(), data).expect("shape"));
                }
                Op::MeanAll { input } => {
                    let x = &self.vals[input.0];
                    let gv = g.data()[0] / scalar::<S>(x.len() as f64);
                    add_grad(&mut grads, input.0, Tensor::full(x.shape(), gv));
                }
                Op::ConcatCh { a, b } => {
                    let (bb, ct, h, w) = dims4(&g);
                    let ca = self.vals[a.0].shape()[1];
                    let cb = ct - ca;
                    let plane = h * w;
                    let mut ga = Tensor::zeros(&[bb, ca, h, w]);
                    let mut gb = Tensor::zeros(&[bb, cb, h, w]);
                    for bi in 0..bb {
                        for ci in 0..ca {
                            let src = &g.data()[((bi * ct + ci) * plane)..][..plane];
                            ga.data_mut()[((bi * ca + ci) * plane)..][..plane].copy_from_slice(src);
                        }
                        for ci in 0..cb {
                            let src = &g.data()[((bi * ct + ca + ci) * plane)..][..plane];
                            gb.data_mut()[((bi * cb + ci) * plane)..][..plane].copy_from_slice(src);
                        }
                    }
                    add_grad(&mut grads, a.0, ga);
                    add_grad(&mut grads, b.0, gb);
                }
                Op::SoftmaxCh { input } => {
                    let p = &self.vals[i];
                    let (b, k, h, w) = dims4(p);
                    let mut gi = Tensor::zeros(&[b, k, h, w]);
                    for bi in 0..b {
                        for y in 0..h {
                            for x in 0..w {
                                let mut dot = S::zero();
                                for c in 0..k {
                                    dot += g.at4(bi, c, y, x) * p.at4(bi, c, y, x);
                                }
                                for c in 0..k {
                                    let pv = p.at4(bi, c, y, x);
                                    gi.set4(bi, c, y, x, pv * (g.at4(bi, c, y, x) - dot));
                                }
                            }
                        }
                    }
                    add_grad(&mut grads, input.0, gi);
                }
                Op::StatsLoss { input, channel, ref_mean, ref_cov, mean_image, col_mean, cov } => {
                    let gi = stats_loss_backward(
                        &self.vals[input.0],
                        *channel,
                        ref_mean,
                        ref_cov,
                        mean_image,
                        col_mean,
                        cov,
                        g.data()[0],
                    );
                    add_grad(&mut grads, input.0, gi);
                }
                Op::WeightedCe { logits, labels, mask, alphas } => {
                    let src = &self.vals[logits.0];
                    let (b, k, h, w) = dims4(src);
                    let count = mask.iter().filter(|&&m| m).count();
                    let mut gi = Tensor::zeros(&[b, k, h, w]);
                    if count > 0 {
                        let gscale = g.data()[0] / scalar::<S>(count as f64);
                        for bi in 0..b {
                            for y in 0..h {
                                for x in 0..w {
                                    let idx = (bi * h + y) * w + x;
                                    if !mask[idx] {
                                        continue;
                                    }
                                    let cl = labels[idx] as usize;
                                    let mut zmax = S::neg_infinity();
                                    for c in 0..k {
                                        zmax = zmax.max(src.at4(bi, c, y, x));
                                    }
                                    let mut denom = S::zero();
                                    for c in 0..k {
                                        denom += (src.at4(bi, c, y, x) - zmax).exp();
                                    }
                                    for c in 0..k {
                                        let p = (src.at4(bi, c, y, x) - zmax).exp() / denom;
                                        let delta = if c == cl { S::one() } else { S::zero() };
                                        let gv = gscale * alphas[cl] * (p - delta);
                                        gi.set4(bi, c, y, x, gi.at4(bi, c, y, x) + gv);
                                    }
                                }
                            }
                        }
                    }
                    add_grad(&mut grads, logits.0, gi);
                }
            }
        }
        Gradients { grads }
    }
}

fn add_grad<S: Scalar>(grads: &mut [Option<Tensor<S>>], node: usize, delta: Tensor<S>) {
    match &mut grads[node] {
        Some(t) => {
            assert_eq!(t.shape(), delta.shape(), "gradient shape mismatch");
            for (d, s) in t.data_mut().iter_mut().zip(delta.data()) {
                *d += *s;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Output rows/cols covered by kernel offset `k0` given `pad`, `stride` and
/// input extent `n`: the half-open range of output indices whose source index
/// `o*stride + k0 - pad` lands inside `[0, n)`.
fn valid_range(n: usize, out_n: usize, k0: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > k0 { (pad - k0 + stride - 1) / stride } else { 0 };
    if n + pad <= k0 {
        return (0, 0);
    }
    let hi = ((n - 1 + pad - k0) / stride + 1).min(out_n);
    (lo.min(hi), hi)
}

fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let (b, ic, h, w) = dims4(input);
    let (oc, ic2, kh, kw) = dims4(weight);
    assert_eq!(ic, ic2, "conv channel mismatch");
    assert_eq!(bias.shape(), &[oc], "conv bias shape");
    assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "kernel larger than padded input");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[b, oc, oh, ow]);
    for bi in 0..b {
        for o in 0..oc {
            let bv = bias.data()[o];
            let out_base = (bi * oc + o) * oh * ow;
            for v in &mut out.data_mut()[out_base..out_base + oh * ow] {
                *v = bv;
            }
            for c in 0..ic {
                for r in 0..kh {
                    let (ylo, yhi) = valid_range(h, oh, r, pad, stride);
                    for q in 0..kw {
                        let wv = weight.data()[((o * ic + c) * kh + r) * kw + q];
                        let (xlo, xhi) = valid_range(w, ow, q, pad, stride);
                        for y in ylo..yhi {
                            let iy = y * stride + r - pad;
                            let in_row = &input.data()[((bi * ic + c) * h + iy) * w..][..w];
                            let out_row = &mut out.data_mut()[out_base + y * ow..][..ow];
                            for x in xlo..xhi {
                                out_row[x] += wv * in_row[x * stride + q - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (b, ic, h, w) = dims4(input);
    let (oc, _, kh, kw) = dims4(weight);
    let (_, _, oh, ow) = dims4(grad_out);
    let mut gi = Tensor::zeros(&[b, ic, h, w]);
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[oc]);
    for bi in 0..b {
        for o in 0..oc {
            let go_base = (bi * oc + o) * oh * ow;
            let mut bsum = S::zero();
            for &v in &grad_out.data()[go_base..go_base + oh * ow] {
                bsum += v;
            }
            gb.data_mut()[o] += bsum;
            for c in 0..ic {
                for r in 0..kh {
                    let (ylo, yhi) = valid_range(h, oh, r, pad, stride);
                    for q in 0..kw {
                        let wv = weight.data()[((o * ic + c) * kh + r) * kw + q];
                        let (xlo, xhi) = valid_range(w, ow, q, pad, stride);
                        let mut wacc = S::zero();
                        for y in ylo..yhi {
                            let iy = y * stride + r - pad;
                            let go_row = &grad_out.data()[go_base + y * ow..][..ow];
                            let in_base = ((bi * ic + c) * h + iy) * w;
                            for x in xlo..xhi {
                                let iw = x * stride + q - pad;
                                wacc += go_row[x] * input.data()[in_base + iw];
                                gi.data_mut()[in_base + iw] += wv * go_row[x];
                            }
                        }
                        gw.data_mut()[((o * ic + c) * kh + r) * kw + q] += wacc;
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}

#[allow(clippy::too_many_arguments)]
fn stats_loss_backward<S: Scalar>(
    input: &Tensor<S>,
    channel: usize,
    ref_mean: &[S],
    ref_cov: &[S],
    mean_image: &[S],
    col_mean: &[S],
    cov: &[S],
    g: S,
) -> Tensor<S> {
    let (b, _c, h, w) = dims4(input);
    let n = b * w;
    let hh = scalar::<S>((h * h) as f64);
    let hw = scalar::<S>((h * w) as f64);
    let bf = scalar::<S>(b as f64);
    let nm1 = scalar::<S>((n - 1) as f64);
    // dL/dcov, scaled by the upstream gradient.
    let mut gc = vec![S::zero(); h * h];
    for i in 0..h * h {
        gc[i] = g * sign(cov[i] - ref_cov[i]) / hh;
    }
    // M = (G + G^T) / (n - 1); the column mean's appearance inside the
    // covariance cancels exactly because the centred columns sum to zero.
    let mut m = vec![S::zero(); h * h];
    for i in 0..h {
        for j in 0..h {
            m[i * h + j] = (gc[i * h + j] + gc[j * h + i]) / nm1;
        }
    }
    let mut gi = Tensor::zeros(input.shape());
    let mut col = vec![S::zero(); h];
    for bi in 0..b {
        for x in 0..w {
            for (y, cv) in col.iter_mut().enumerate() {
                *cv = input.at4(bi, channel, y, x) - col_mean[y];
            }
            for i in 0..h {
                // Covariance term plus the per-pixel mean-image term.
                let mut acc = g * sign(mean_image[i * w + x] - ref_mean[i * w + x]) / (hw * bf);
                for j in 0..h {
                    acc += m[i * h + j] * col[j];
                }
                gi.set4(bi, channel, i, x, acc);
            }
        }
    }
    gi
}

/// Central-difference gradient of `f` at `x`; used to verify analytic
/// gradients.
pub fn central_difference_grad<S: Scalar>(
    x: &Tensor<S>,
    h: f64,
    mut f: impl FnMut(&Tensor<S>) -> S,
) -> Tensor<S> {
    let mut g = Tensor::zeros(x.shape());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + scalar(h);
        let fp = f(&xp);
        xp.data_mut()[i] = orig - scalar(h);
        let fm = f(&xp);
        xp.data_mut()[i] = orig;
        g.data_mut()[i] = (fp - fm) / scalar(2.0 * h);
    }
    g
}

/// Largest relative disagreement between two gradients, with an absolute
/// floor so near-zero entries compare absolutely.
pub fn max_relative_error<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let x = x.to_f64().unwrap();
        let y = y.to_f64().unwrap();
        let denom = x.abs().max(y.abs()).max(floor);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}
