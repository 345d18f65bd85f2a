//! One optimization step over a stacked batch of patch triples.

use crate::autograd::Tape;
use crate::data::{augment, PatchTriple};
use crate::error::{Error, Result};
use crate::model::{CwtNet, Mode};
use crate::objective::{composite_loss, LossBreakdown, Objective};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Gradients, Parameters};
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;
use crate::wavelet::dwt_hh;

/// Stacked triples, batch dimension first.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub i_lr: Tensor,
    pub i_gt: Tensor,
    pub i_gt_prime: Option<Tensor>,
}

impl Batch {
    pub fn stack(triples: &[PatchTriple]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let lr: Vec<Tensor> = triples.iter().map(|t| t.i_lr.clone()).collect();
        let gt: Vec<Tensor> = triples.iter().map(|t| t.i_gt.clone()).collect();
        let gtp: Option<Vec<Tensor>> = triples.iter().map(|t| t.i_gt_prime.clone()).collect();
        Ok(Batch {
            i_lr: Tensor::stack(&lr)?,
            i_gt: Tensor::stack(&gt)?,
            i_gt_prime: gtp.map(|g| Tensor::stack(&g)).transpose()?,
        })
    }

    /// Batch of `size` triples for `step`: indices and rotations depend only on `(seed, step)`.
    pub fn sample(triples: &[PatchTriple], size: usize, seed: u64, step: u64) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::usage("no training triples"));
        }
        let mut rng = SeededRng::keyed(seed, streams::BATCH, step, 0);
        let mut order: Vec<usize> = (0..triples.len()).collect();
        rng.shuffle(&mut order);
        let picked: Vec<PatchTriple> = (0..size)
            .map(|i| augment(&triples[order[i % order.len()]], &mut rng))
            .collect();
        Batch::stack(&picked)
    }
}

/// Loss breakdown and parameter gradients of one batch.
pub fn loss_and_grads(
    net: &CwtNet,
    params: &Parameters,
    objective: &Objective,
    mode: Mode,
    batch: &Batch,
) -> Result<(LossBreakdown, Gradients)> {
    let mut tape = Tape::new(params);
    let lr = tape.constant(batch.i_lr.clone());
    let gt = tape.constant(batch.i_gt.clone());
    let wt_in = match mode {
        Mode::CrossScale => {
            let g = batch
                .i_gt_prime
                .as_ref()
                .ok_or_else(|| Error::usage("cross-scale training needs cross-scale images"))?;
            Some(tape.constant(g.clone()))
        }
        Mode::WrTest | Mode::Sisr => None,
    };
    let target = match &batch.i_gt_prime {
        Some(g) => Some(tape.constant(dwt_hh(g)?)),
        None => None,
    };
    let want_pair = objective.effective().lambda_wr > 0.0;
    let out = net.forward_with(&mut tape, mode, lr, wt_in, want_pair)?;
    let loss = composite_loss(&mut tape, objective, &out, gt, target)?;
    let breakdown = loss.breakdown(&tape);
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", breakdown.total)));
    }
    let grads = tape.param_grads(loss.total)?;
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((breakdown, grads))
}

/// Forward, backward and one optimizer update.
pub fn train_step(
    net: &CwtNet,
    params: &mut Parameters,
    state: &mut AdamState,
    adam: &AdamConfig,
    objective: &Objective,
    mode: Mode,
    batch: &Batch,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = loss_and_grads(net, params, objective, mode, batch)?;
    adam_step(params, &grads, state, adam)?;
    Ok(breakdown)
}
