//! Reverse-mode differentiation over a linear tape.
//!
//! Each recorded node keeps its forward value and enough context to apply
//! its gradient rule. [`Tape::backward`] walks the records in reverse,
//! accumulating gradients for every node that depends on a differentiable
//! leaf or a parameter.

use std::sync::Arc;

use crate::attention;
use crate::error::{Error, Result};
use crate::metrics;
use crate::ops::{self, PatchGeom, ResizePlan};
use crate::params::{Gradients, ParamId, Parameters};
use crate::tensor::{Scalar, Shape4, Tensor4};
use crate::wavelet;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Hard-attention indices shared between the relevance and transfer records.
pub type AttnIndex = Arc<Vec<usize>>;

enum Op<T: Scalar> {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    ChannelOffset(Var),
    Relu(Var),
    Sigmoid(Var),
    PixelShuffle(Var, usize),
    AvgPool(Var),
    ChannelGate { x: Var, gate: Var },
    SpatialGate { x: Var, gate: Var },
    Concat(Vec<Var>),
    Resize { x: Var, plan: ResizePlan },
    Stencil { x: Var, backward: [T; 4] },
    MaxRelevance { q: Var, k: Var, geom: PatchGeom, index: AttnIndex },
    Transfer { v: Var, geom: PatchGeom, index: AttnIndex },
    L1(Var, Var),
    Mse(Var, Var),
    SsimLoss(Var, Var),
    Sum(Var),
    Dot(Var, Tensor4<T>),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T: Scalar> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation bound to a parameter store.
pub struct Tape<'p, T: Scalar> {
    params: &'p Parameters<T>,
    nodes: Vec<Node<T>>,
    haar_backward: Option<[T; 4]>,
    frozen: std::collections::VecDeque<AttnIndex>,
    indices: Vec<AttnIndex>,
}

/// Gradients of a scalar with respect to every recorded node.
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads[v.0].as_ref()
    }
}

fn scalar_shape() -> Shape4 {
    Shape4::new(1, 1, 1, 1)
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p Parameters<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            haar_backward: None,
            frozen: Default::default(),
            indices: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p Parameters<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A differentiable input leaf.
    pub fn input(&mut self, value: Tensor4<T>) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(self.params.get(id).clone(), Op::Param(id), &[])
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bias = b.map(|b| self.value(b).data().to_vec());
        let y = ops::conv2d(self.value(x), self.value(w), bias.as_deref(), stride, pad)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(y, Op::Conv { x, w, b, stride, pad }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).scale(s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    /// Adds a fixed per-channel offset.
    pub fn channel_offset(&mut self, x: Var, offsets: &[T]) -> Result<Var> {
        let s = self.shape(x);
        if offsets.len() != s.c {
            return Err(Error::shape(
                "channel_offset",
                format!("{} offsets for {} channels", offsets.len(), s.c),
            ));
        }
        let mut y = self.value(x).clone();
        for (i, plane) in y.data_mut().chunks_exact_mut(s.plane()).enumerate() {
            let o = offsets[i % s.c];
            plane.iter_mut().for_each(|v| *v += o);
        }
        Ok(self.push(y, Op::ChannelOffset(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(y, Op::PixelShuffle(x, r), &[x]))
    }

    pub fn avg_pool_global(&mut self, x: Var) -> Var {
        let y = ops::avg_pool_global(self.value(x));
        self.push(y, Op::AvgPool(x), &[x])
    }

    /// `x * gate` with `gate` of shape `(n, c, 1, 1)` broadcast over space.
    pub fn channel_gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        if gs != Shape4::new(xs.n, xs.c, 1, 1) {
            return Err(Error::mismatch("channel_gate", xs, gs));
        }
        let g = self.value(gate).data().to_vec();
        let mut y = self.value(x).clone();
        for (plane, &gv) in y.data_mut().chunks_exact_mut(xs.plane()).zip(&g) {
            plane.iter_mut().for_each(|v| *v *= gv);
        }
        Ok(self.push(y, Op::ChannelGate { x, gate }, &[x, gate]))
    }

    /// `x * gate` with `gate` of shape `(n, 1, h, w)` broadcast over channels.
    pub fn spatial_gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xs, gs) = (self.shape(x), self.shape(gate));
        if gs != Shape4::new(xs.n, 1, xs.h, xs.w) {
            return Err(Error::mismatch("spatial_gate", xs, gs));
        }
        let mut y = self.value(x).clone();
        let g = self.value(gate);
        for n in 0..xs.n {
            let gp = g.item_slice(n);
            let item = &mut y.data_mut()[n * xs.item()..(n + 1) * xs.item()];
            for plane in item.chunks_exact_mut(xs.plane()) {
                plane.iter_mut().zip(gp).for_each(|(v, &gv)| *v *= gv);
            }
        }
        Ok(self.push(y, Op::SpatialGate { x, gate }, &[x, gate]))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::mismatch("concat", first, s));
            }
            c += s.c;
        }
        let out = first.with_c(c);
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..out.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).item_slice(n));
            }
        }
        let y = Tensor4::from_vec(out, data)?;
        Ok(self.push(y, Op::Concat(parts.to_vec()), parts))
    }

    pub fn resize(&mut self, x: Var, plan: ResizePlan) -> Result<Var> {
        let y = plan.apply(self.value(x))?;
        Ok(self.push(y, Op::Resize { x, plan }, &[x]))
    }

    /// Diagonal Haar subband.
    pub fn haar_hh(&mut self, x: Var) -> Result<Var> {
        let backward = self.haar_backward.unwrap_or_else(wavelet::hh_stencil);
        self.stencil_with_backward(x, wavelet::hh_stencil(), backward)
    }

    /// Hard indices of every relevance search so far, in record order.
    pub fn attention_indices(&self) -> &[AttnIndex] {
        &self.indices
    }

    /// Queues hard indices for the next relevance records, treating the
    /// index as the constant the gradient rules assume it to be.
    pub fn freeze_attention(&mut self, indices: &[AttnIndex]) {
        self.frozen.extend(indices.iter().cloned());
    }

    /// Replaces the backward stencil of every later [`Tape::haar_hh`] record.
    /// Exists so the gradient checker can be shown to catch a wrong rule.
    #[doc(hidden)]
    pub fn corrupt_haar_backward(&mut self, stencil: [T; 4]) {
        self.haar_backward = Some(stencil);
    }

    /// Stride-2 2x2 stencil whose backward rule uses `backward` instead of the
    /// forward stencil. Only gradient-checker mutation tests pass a different one.
    #[doc(hidden)]
    pub fn stencil_with_backward(&mut self, x: Var, forward: [T; 4], backward: [T; 4]) -> Result<Var> {
        let y = wavelet::apply_stencil(self.value(x), forward)?;
        Ok(self.push(y, Op::Stencil { x, backward }, &[x]))
    }

    /// Soft map of maximal relevance `(n, 1, h, w)` and the hard index.
    /// While frozen indices are queued, the next one replaces the search.
    pub fn max_relevance(&mut self, q: Var, k: Var, geom: PatchGeom, row_block: usize) -> Result<(Var, AttnIndex)> {
        let maps = match self.frozen.pop_front() {
            Some(idx) => attention::relevance_at(self.value(q), self.value(k), geom, &idx)?,
            None => attention::max_relevance(self.value(q), self.value(k), geom, row_block)?,
        };
        let index = Arc::new(maps.index);
        self.indices.push(index.clone());
        let v = self.push(
            maps.s_map,
            Op::MaxRelevance {
                q,
                k,
                geom,
                index: index.clone(),
            },
            &[q, k],
        );
        Ok((v, index))
    }

    pub fn transfer(&mut self, v: Var, index: AttnIndex, geom: PatchGeom) -> Result<Var> {
        let t = attention::transfer(self.value(v), &index, geom)?;
        Ok(self.push(t, Op::Transfer { v, geom, index }, &[v]))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b))?;
        let v = d.data().iter().map(|x| x.abs()).sum::<T>() / T::of(d.numel() as f64);
        Ok(self.push(Tensor4::scalar(v), Op::L1(a, b), &[a, b]))
    }

    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.value(a).sub(self.value(b))?;
        let v = d.sq_norm() / T::of(d.numel() as f64);
        Ok(self.push(Tensor4::scalar(v), Op::Mse(a, b), &[a, b]))
    }

    /// `1 - SSIM(a, b)`.
    pub fn ssim_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = metrics::ssim(self.value(a), self.value(b))?;
        Ok(self.push(Tensor4::scalar(T::one() - s), Op::SsimLoss(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        self.push(Tensor4::scalar(v), Op::Sum(x), &[x])
    }

    /// `sum(x * weights)` for a fixed weight tensor.
    pub fn dot(&mut self, x: Var, weights: Tensor4<T>) -> Result<Var> {
        self.value(x).expect_shape("dot", weights.shape())?;
        let v = self.value(x).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor4::scalar(v), Op::Dot(x, weights), &[x]))
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let s = self.value(v).item().ok_or_else(|| {
                Error::usage(format!("weighted_sum term of shape {} is not a scalar", self.shape(v)))
            })?;
            total += w * s;
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor4::scalar(total), Op::WeightedSum(terms.to_vec()), &inputs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.shape(loss) != scalar_shape() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::ones(scalar_shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.rule(node, &g)?;
            grads[i] = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&dg)?,
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(Grads { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rule(&self, node: &Node<T>, g: &Tensor4<T>) -> Result<Vec<(Var, Tensor4<T>)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let scalar_grad = || g.data()[0];
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::Conv { x, w, b, stride, pad } => {
                let cg = ops::conv2d_backward(val(*x), val(*w), *stride, *pad, g, self.needs(*x))?;
                let mut out = vec![(*w, cg.dweight)];
                if let Some(dx) = cg.dx {
                    out.push((*x, dx));
                }
                if let Some(b) = b {
                    out.push((*b, Tensor4::from_vec(val(*b).shape(), cg.dbias)?));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::ChannelOffset(x) => vec![(*x, g.clone())],
            Op::Relu(x) => vec![(*x, ops::relu_backward(val(*x), g))],
            Op::Sigmoid(x) => vec![(*x, ops::sigmoid_backward(&node.value, g))],
            Op::PixelShuffle(x, r) => vec![(*x, ops::pixel_unshuffle(g, *r)?)],
            Op::AvgPool(x) => vec![(*x, ops::avg_pool_global_backward(val(*x).shape(), g))],
            Op::ChannelGate { x, gate } => {
                let xs = val(*x).shape();
                let gv = val(*gate);
                let mut dx = g.clone();
                let mut dgate = Vec::with_capacity(xs.n * xs.c);
                for (i, (dplane, xplane)) in dx
                    .data_mut()
                    .chunks_exact_mut(xs.plane())
                    .zip(val(*x).data().chunks_exact(xs.plane()))
                    .enumerate()
                {
                    dgate.push(dplane.iter().zip(xplane).map(|(&a, &b)| a * b).sum::<T>());
                    let s = gv.data()[i];
                    dplane.iter_mut().for_each(|v| *v *= s);
                }
                vec![(*x, dx), (*gate, Tensor4::from_vec(gv.shape(), dgate)?)]
            }
            Op::SpatialGate { x, gate } => {
                let xs = val(*x).shape();
                let gv = val(*gate);
                let mut dx = g.clone();
                let mut dgate = Tensor4::zeros(gv.shape());
                for n in 0..xs.n {
                    let gp = gv.item_slice(n);
                    let xi = val(*x).item_slice(n);
                    let di = &mut dx.data_mut()[n * xs.item()..(n + 1) * xs.item()];
                    let dg = &mut dgate.data_mut()[n * xs.plane()..(n + 1) * xs.plane()];
                    for (dplane, xplane) in di.chunks_exact_mut(xs.plane()).zip(xi.chunks_exact(xs.plane())) {
                        for p in 0..xs.plane() {
                            dg[p] += dplane[p] * xplane[p];
                            dplane[p] *= gp[p];
                        }
                    }
                }
                vec![(*x, dx), (*gate, dgate)]
            }
            Op::Concat(parts) => {
                let out = g.shape();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let ps = val(p).shape();
                    let mut data = Vec::with_capacity(ps.numel());
                    for n in 0..out.n {
                        let item = g.item_slice(n);
                        data.extend_from_slice(&item[offset * out.plane()..(offset + ps.c) * out.plane()]);
                    }
                    offset += ps.c;
                    res.push((p, Tensor4::from_vec(ps, data)?));
                }
                res
            }
            Op::Resize { x, plan } => vec![(*x, plan.apply_transpose(g, val(*x).shape())?)],
            Op::Stencil { x, backward } => {
                vec![(*x, wavelet::apply_stencil_transpose(g, val(*x).shape(), *backward)?)]
            }
            Op::MaxRelevance { q, k, geom, index } => {
                let (dq, dk) = attention::max_relevance_backward(val(*q), val(*k), *geom, index, g)?;
                vec![(*q, dq), (*k, dk)]
            }
            Op::Transfer { v, geom, index } => {
                vec![(*v, attention::transfer_backward(val(*v).shape(), index, *geom, g)?)]
            }
            Op::L1(a, b) => {
                let n = T::of(val(*a).numel() as f64);
                let s = scalar_grad() / n;
                let da = val(*a).zip_map(val(*b), "l1", |x, y| {
                    if x > y {
                        s
                    } else if x < y {
                        -s
                    } else {
                        T::zero()
                    }
                })?;
                let db = da.scale(-T::one());
                vec![(*a, da), (*b, db)]
            }
            Op::Mse(a, b) => {
                let n = T::of(val(*a).numel() as f64);
                let s = T::of(2.0) * scalar_grad() / n;
                let da = val(*a).zip_map(val(*b), "mse", |x, y| (x - y) * s)?;
                let db = da.scale(-T::one());
                vec![(*a, da), (*b, db)]
            }
            Op::SsimLoss(a, b) => {
                let out = metrics::ssim_with_grad(val(*a), val(*b), true)?;
                let s = -scalar_grad();
                let mut res = Vec::with_capacity(2);
                if let Some(ga) = out.grad_a {
                    res.push((*a, ga.scale(s)));
                }
                if let Some(gb) = out.grad_b {
                    res.push((*b, gb.scale(s)));
                }
                res
            }
            Op::Sum(x) => vec![(*x, Tensor4::full(val(*x).shape(), scalar_grad()))],
            Op::Dot(x, w) => vec![(*x, w.scale(scalar_grad()))],
            Op::WeightedSum(terms) => terms
                .iter()
                .map(|&(v, w)| (v, Tensor4::scalar(w * scalar_grad())))
                .collect(),
        })
    }

    /// Parameter gradients found in `grads`, accumulated into `out`.
    pub fn accumulate_param_grads(&self, grads: &Grads<T>, out: &mut Gradients<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                out.accumulate(*id, g)?;
            }
        }
        Ok(())
    }

    /// Parameter gradients of `loss`, zero for parameters the loss does not reach.
    pub fn param_grads(&self, loss: Var) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        let mut out = Gradients::zeros_like(self.params);
        self.accumulate_param_grads(&grads, &mut out)?;
        Ok(out)
    }
}
