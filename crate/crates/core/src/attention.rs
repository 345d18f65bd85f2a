//! Cross-branch texture attention.
//!
//! SR-branch features act as queries, WT-branch features as keys, and a
//! resampled copy of the keys as values. For every query patch the most
//! relevant key patch (cosine similarity) is located; its value patch is
//! transferred (hard attention) and the similarity itself gates the fused
//! result (soft attention).

use rayon::prelude::*;

use crate::autograd::{Tape, Var};
use crate::blocks::Conv;
use crate::error::{Error, Result};
use crate::ops::{fold_sum, unfold, PatchGeom, ResizePlan};
use crate::params::ParamLayout;
use crate::tensor::{gemm, MatRef, Scalar, Shape4, Tensor4};

/// 3x3 patches, stride 1, zero padding 1: one patch per pixel.
pub const PATCH: PatchGeom = PatchGeom::new(3, 1, 1);

/// Patch vectors of one item, row-major `L x D`, each scaled to unit length.
/// Returns the normalized rows and the original norms (zero for null patches).
fn normalized_patches<T: Scalar>(cols: &[T], d: usize, l: usize) -> (Vec<T>, Vec<T>) {
    let mut rows = vec![T::zero(); l * d];
    let mut norms = vec![T::zero(); l];
    for i in 0..l {
        let row = &mut rows[i * d..(i + 1) * d];
        for (r, v) in row.iter_mut().enumerate() {
            *v = cols[r * l + i];
        }
        // Pre-scale by the largest magnitude before squaring to limit cancellation.
        let peak = row.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if peak == T::zero() {
            continue;
        }
        row.iter_mut().for_each(|v| *v = *v / peak);
        let unit = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        row.iter_mut().for_each(|v| *v = *v / unit);
        norms[i] = peak * unit;
    }
    (rows, norms)
}

/// Relevance matrix `r(i, j) = <q_i / |q_i|, k_j / |k_j|>` between patch sets
/// given as `L x D` row-major matrices. Zero patches have relevance 0.
pub fn relevance<T: Scalar>(q: &[T], k: &[T], d: usize) -> Result<Vec<T>> {
    if d == 0 || !q.len().is_multiple_of(d) || k.len() != q.len() {
        return Err(Error::shape(
            "relevance",
            format!("patch sets of {} and {} values with dimension {d}", q.len(), k.len()),
        ));
    }
    let l = q.len() / d;
    let to_cols = |rows: &[T]| {
        let mut cols = vec![T::zero(); l * d];
        for i in 0..l {
            for r in 0..d {
                cols[r * l + i] = rows[i * d + r];
            }
        }
        cols
    };
    let (qn, _) = normalized_patches(&to_cols(q), d, l);
    let (kn, _) = normalized_patches(&to_cols(k), d, l);
    let mut r = vec![T::zero(); l * l];
    gemm(MatRef::new(&qn, l, d), MatRef::new(&kn, l, d).t(), T::zero(), &mut r);
    Ok(r)
}

/// Row-wise argmax (smallest index wins ties) and the maximal value of an
/// `L x L` relevance matrix.
pub fn hard_soft_attention<T: Scalar>(r: &[T], l: usize) -> (Vec<usize>, Vec<T>) {
    r.chunks_exact(l).map(argmax_first).unzip()
}

fn argmax_first<T: Scalar>(row: &[T]) -> (usize, T) {
    let mut best = (0, row[0]);
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Hard index and soft map of every item, relevance computed in row blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps<T: Scalar> {
    /// `n * L` indices, item-major.
    pub index: Vec<usize>,
    /// Maximal relevance per query position, `(n, 1, oh, ow)`.
    pub s_map: Tensor4<T>,
}

fn check_qk<T: Scalar>(q: &Tensor4<T>, k: &Tensor4<T>) -> Result<()> {
    if q.shape() != k.shape() {
        return Err(Error::mismatch("relevance", q.shape(), k.shape()));
    }
    Ok(())
}

/// Max-relevance search between query and key feature maps. `row_block`
/// bounds the relevance rows held in memory; results do not depend on it.
pub fn max_relevance<T: Scalar>(
    q: &Tensor4<T>,
    k: &Tensor4<T>,
    geom: PatchGeom,
    row_block: usize,
) -> Result<AttentionMaps<T>> {
    check_qk(q, k)?;
    let s = q.shape();
    let (oh, ow) = geom.grid(s.h, s.w)?;
    let l = oh * ow;
    let d = s.c * geom.k * geom.k;
    let block = row_block.max(1);
    let qc = unfold(q, geom)?;
    let kc = unfold(k, geom)?;
    let per_item: Vec<(Vec<usize>, Vec<T>)> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let (qn, _) = normalized_patches(qc.item_slice(n), d, l);
            let (kn, _) = normalized_patches(kc.item_slice(n), d, l);
            let mut index = Vec::with_capacity(l);
            let mut best = Vec::with_capacity(l);
            let mut r = vec![T::zero(); block * l];
            for start in (0..l).step_by(block) {
                let rows = block.min(l - start);
                let buf = &mut r[..rows * l];
                gemm(
                    MatRef::new(&qn[start * d..(start + rows) * d], rows, d),
                    MatRef::new(&kn, l, d).t(),
                    T::zero(),
                    buf,
                );
                for row in buf.chunks_exact(l) {
                    let (j, v) = argmax_first(row);
                    index.push(j);
                    best.push(v.max(-T::one()).min(T::one()));
                }
            }
            (index, best)
        })
        .collect();
    let mut index = Vec::with_capacity(s.n * l);
    let mut values = Vec::with_capacity(s.n * l);
    for (i, v) in per_item {
        index.extend(i);
        values.extend(v);
    }
    Ok(AttentionMaps {
        index,
        s_map: Tensor4::from_vec(Shape4::new(s.n, 1, oh, ow), values)?,
    })
}

/// Soft map for a given hard index: `s_i = r(i, index_i)`, clamped like
/// [`max_relevance`].
pub fn relevance_at<T: Scalar>(q: &Tensor4<T>, k: &Tensor4<T>, geom: PatchGeom, index: &[usize]) -> Result<AttentionMaps<T>> {
    check_qk(q, k)?;
    let s = q.shape();
    let (oh, ow) = geom.grid(s.h, s.w)?;
    let l = oh * ow;
    check_index(index, s.n, l)?;
    let d = s.c * geom.k * geom.k;
    let qc = unfold(q, geom)?;
    let kc = unfold(k, geom)?;
    let mut values = Vec::with_capacity(s.n * l);
    for n in 0..s.n {
        let (qn, _) = normalized_patches(qc.item_slice(n), d, l);
        let (kn, _) = normalized_patches(kc.item_slice(n), d, l);
        for i in 0..l {
            let j = index[n * l + i];
            let v: T = qn[i * d..(i + 1) * d].iter().zip(&kn[j * d..(j + 1) * d]).map(|(&a, &b)| a * b).sum();
            values.push(v.max(-T::one()).min(T::one()));
        }
    }
    Ok(AttentionMaps {
        index: index.to_vec(),
        s_map: Tensor4::from_vec(Shape4::new(s.n, 1, oh, ow), values)?,
    })
}

/// Gradient of the soft map `s_i = r(i, index_i)` with respect to `q` and `k`.
/// The index itself is piecewise constant and carries no gradient.
pub fn max_relevance_backward<T: Scalar>(
    q: &Tensor4<T>,
    k: &Tensor4<T>,
    geom: PatchGeom,
    index: &[usize],
    ds: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    check_qk(q, k)?;
    let s = q.shape();
    let (oh, ow) = geom.grid(s.h, s.w)?;
    let l = oh * ow;
    let d = s.c * geom.k * geom.k;
    ds.expect_shape("relevance_backward", Shape4::new(s.n, 1, oh, ow))?;
    let qc = unfold(q, geom)?;
    let kc = unfold(k, geom)?;
    let mut dqc = Tensor4::zeros(qc.shape());
    let mut dkc = Tensor4::zeros(kc.shape());
    for n in 0..s.n {
        let (qn, qnorm) = normalized_patches(qc.item_slice(n), d, l);
        let (kn, knorm) = normalized_patches(kc.item_slice(n), d, l);
        let g = ds.item_slice(n);
        let base = n * d * l;
        for i in 0..l {
            let j = index[n * l + i];
            if qnorm[i] == T::zero() || knorm[j] == T::zero() || g[i] == T::zero() {
                continue;
            }
            let (qi, kj) = (&qn[i * d..(i + 1) * d], &kn[j * d..(j + 1) * d]);
            let sim: T = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum();
            let (cq, ck) = (g[i] / qnorm[i], g[i] / knorm[j]);
            let dq = dqc.data_mut();
            for r in 0..d {
                dq[base + r * l + i] += cq * (kj[r] - sim * qi[r]);
            }
            let dk = dkc.data_mut();
            for r in 0..d {
                dk[base + r * l + j] += ck * (qi[r] - sim * kj[r]);
            }
        }
    }
    Ok((fold_sum(&dqc, s, geom)?, fold_sum(&dkc, s, geom)?))
}

fn check_index(index: &[usize], n: usize, l: usize) -> Result<()> {
    if index.len() != n * l {
        return Err(Error::shape(
            "transfer",
            format!("{} indices for {n} items of {l} patches", index.len()),
        ));
    }
    // An out-of-range index means the attention search itself is broken.
    assert!(index.iter().all(|&j| j < l), "transfer index out of range");
    Ok(())
}

/// Per-pixel count of in-bounds samples that a gather deposits, item-major `n * h * w`.
fn transfer_weights(shape: Shape4, index: &[usize], geom: PatchGeom, ow: usize) -> Vec<u32> {
    let (h, w, k) = (shape.h as isize, shape.w as isize, geom.k);
    let l = index.len() / shape.n;
    let mut den = vec![0u32; shape.n * shape.plane()];
    let origin = |p: usize| {
        (
            (p / ow * geom.stride) as isize - geom.pad as isize,
            (p % ow * geom.stride) as isize - geom.pad as isize,
        )
    };
    for n in 0..shape.n {
        let plane = &mut den[n * shape.plane()..(n + 1) * shape.plane()];
        for i in 0..l {
            let (dy0, dx0) = origin(i);
            let (sy0, sx0) = origin(index[n * l + i]);
            for ky in 0..k as isize {
                for kx in 0..k as isize {
                    let (dy, dx, sy, sx) = (dy0 + ky, dx0 + kx, sy0 + ky, sx0 + kx);
                    let dst_in = dy >= 0 && dy < h && dx >= 0 && dx < w;
                    let src_in = sy >= 0 && sy < h && sx >= 0 && sx < w;
                    if dst_in && src_in {
                        plane[(dy * w + dx) as usize] += 1;
                    }
                }
            }
        }
    }
    den
}

/// Gathers value patches at `index` and folds them back, averaging each pixel
/// over the in-bounds samples deposited on it. With the identity index this is
/// plain coverage averaging, so `transfer(v, identity) == v`.
pub fn transfer<T: Scalar>(v: &Tensor4<T>, index: &[usize], geom: PatchGeom) -> Result<Tensor4<T>> {
    let s = v.shape();
    let (oh, ow) = geom.grid(s.h, s.w)?;
    let l = oh * ow;
    check_index(index, s.n, l)?;
    let vc = unfold(v, geom)?;
    let d = vc.shape().c;
    let mut tc = Tensor4::zeros(vc.shape());
    for n in 0..s.n {
        let src = vc.item_slice(n);
        let dst = &mut tc.data_mut()[n * d * l..(n + 1) * d * l];
        for i in 0..l {
            let j = index[n * l + i];
            for r in 0..d {
                dst[r * l + i] = src[r * l + j];
            }
        }
    }
    let mut t = fold_sum(&tc, s, geom)?;
    let den = transfer_weights(s, index, geom, ow);
    let plane = s.plane();
    for (n, item) in t.data_mut().chunks_exact_mut(s.item()).enumerate() {
        let den = &den[n * plane..(n + 1) * plane];
        for ch in item.chunks_exact_mut(plane) {
            for (x, &c) in ch.iter_mut().zip(den) {
                *x = if c > 0 { *x / T::of(c as f64) } else { T::zero() };
            }
        }
    }
    Ok(t)
}

pub fn transfer_backward<T: Scalar>(
    v_shape: Shape4,
    index: &[usize],
    geom: PatchGeom,
    dt: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let (oh, ow) = geom.grid(v_shape.h, v_shape.w)?;
    let l = oh * ow;
    check_index(index, v_shape.n, l)?;
    dt.expect_shape("transfer_backward", v_shape)?;
    let den = transfer_weights(v_shape, index, geom, ow);
    let plane = v_shape.plane();
    let mut scaled = dt.clone();
    for (n, item) in scaled.data_mut().chunks_exact_mut(v_shape.item()).enumerate() {
        let den = &den[n * plane..(n + 1) * plane];
        for ch in item.chunks_exact_mut(plane) {
            for (g, &c) in ch.iter_mut().zip(den) {
                *g = if c > 0 { *g / T::of(c as f64) } else { T::zero() };
            }
        }
    }
    let dtc = unfold(&scaled, geom)?;
    let d = dtc.shape().c;
    let mut dvc = Tensor4::zeros(dtc.shape());
    for n in 0..v_shape.n {
        let src = dtc.item_slice(n);
        let dst = &mut dvc.data_mut()[n * d * l..(n + 1) * d * l];
        for i in 0..l {
            let j = index[n * l + i];
            for r in 0..d {
                dst[r * l + j] += src[r * l + i];
            }
        }
    }
    fold_sum(&dvc, v_shape, geom)
}

/// One texture-transfer block: fuse = `q + conv(concat(q, t)) * s`.
#[derive(Clone, Debug)]
pub struct TextureTransformer {
    pub fuse: Conv,
    pub row_block: usize,
    /// Factor of the up-then-down resampling that turns keys into values.
    pub value_factor: f64,
}

impl TextureTransformer {
    pub fn new(layout: &mut ParamLayout, prefix: &str, channels: usize, kernel: usize, row_block: usize) -> Result<Self> {
        Ok(TextureTransformer {
            fuse: Conv::new(layout, &format!("{prefix}.fuse"), 2 * channels, channels, kernel)?,
            row_block,
            value_factor: 2.0,
        })
    }

    /// The value map: keys resampled up then back down.
    pub fn values<T: Scalar>(&self, tape: &mut Tape<'_, T>, k: Var) -> Result<Var> {
        let s = tape.shape(k);
        let up = ResizePlan::for_scale(s.h, s.w, self.value_factor)?;
        let (uh, uw) = (up.rows.out_len(), up.cols.out_len());
        let down = ResizePlan::for_size(uh, uw, s.h, s.w)?;
        let v = tape.resize(k, up)?;
        tape.resize(v, down)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, q: Var, k: Var) -> Result<Var> {
        let v = self.values(tape, k)?;
        let (s_map, index) = tape.max_relevance(q, k, PATCH, self.row_block)?;
        let t = tape.transfer(v, index, PATCH)?;
        self.fuse_with(tape, q, t, s_map)
    }

    /// `q + conv(concat(q, t)) * s`.
    pub fn fuse_with<T: Scalar>(&self, tape: &mut Tape<'_, T>, q: Var, t: Var, s_map: Var) -> Result<Var> {
        if tape.shape(q) != tape.shape(t) {
            return Err(Error::mismatch("fuse", tape.shape(q), tape.shape(t)));
        }
        let qt = tape.concat(&[q, t])?;
        let f = self.fuse.forward(tape, qt)?;
        let gated = tape.spatial_gate(f, s_map)?;
        tape.add(q, gated)
    }
}
