use serde::{Deserialize, Serialize};

use super::synth::{synth_pyramid, Pyramid, PyramidStyle};
use crate::blocks::depth_for_scale;
use crate::error::{Error, Result};
use crate::ops::ResizePlan;
use crate::rng::{streams, SeededRng};
use crate::tensor::{Shape4, Tensor};

/// Aligned training sample. Levels count upward from the LR level:
/// `lv_lr = 0`, `lv_gt' = 1`, `lv_gt = log2(scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTriple {
    /// `(1, 3, p*s, p*s)`.
    pub i_gt: Tensor,
    /// `(1, 3, 2p, 2p)`; absent for data loaded without cross-scale images.
    pub i_gt_prime: Option<Tensor>,
    /// `(1, 3, p, p)`, the bicubic reduction of `i_gt`.
    pub i_lr: Tensor,
    /// `[lv_gt, lv_gt', lv_lr]`.
    pub levels: [u32; 3],
    /// Window center at base resolution.
    pub center: (usize, usize),
}

impl PatchTriple {
    pub fn levels_for_scale(scale: usize) -> [u32; 3] {
        [scale.trailing_zeros(), 1, 0]
    }

    /// Checks level ordering and the size relations between the members.
    pub fn validate(&self, scale: usize) -> Result<()> {
        let [gt, gtp, lr] = self.levels;
        if !(gt >= gtp && gtp >= lr) {
            return Err(Error::config(format!("level ordering violated: {:?}", self.levels)));
        }
        let l = self.i_lr.shape();
        let want_gt = Shape4::new(1, 3, l.h * scale, l.w * scale);
        if self.i_gt.shape() != want_gt {
            return Err(Error::mismatch("triple gt", want_gt, self.i_gt.shape()));
        }
        if let Some(g) = &self.i_gt_prime {
            let want = Shape4::new(1, 3, 2 * l.h, 2 * l.w);
            if g.shape() != want {
                return Err(Error::mismatch("triple gt'", want, g.shape()));
            }
        }
        Ok(())
    }
}

fn crop(x: &Tensor, y0: usize, x0: usize, size: usize) -> Tensor {
    Tensor::from_fn(Shape4::new(1, 3, size, size), |_, c, y, xx| x.at(0, c, y0 + y, x0 + xx))
}

/// Bicubic reduction by an integer factor.
pub fn degrade(gt: &Tensor, scale: usize) -> Result<Tensor> {
    let s = gt.shape();
    ResizePlan::for_size(s.h, s.w, s.h / scale, s.w / scale)?.apply(gt)
}

fn std_dev(t: &Tensor) -> f64 {
    let n = t.numel() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    (t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

const MAX_TRIES: usize = 16;
const MIN_STD: f64 = 0.02;

/// Crops an aligned triple about a shared center. Window corners are
/// multiples of `scale` so every level crops on whole pixels.
pub fn sample_triple(pyr: &Pyramid, scale: usize, p: usize, rng: &mut SeededRng) -> Result<PatchTriple> {
    depth_for_scale(scale)?;
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::config(format!("patch size {p} must be positive and even")));
    }
    let j = scale.trailing_zeros() as usize - 1;
    if pyr.levels.len() <= j {
        return Err(Error::config(format!(
            "pyramid has {} levels; scale {scale} needs {}",
            pyr.levels.len(),
            j + 1
        )));
    }
    let base = &pyr.levels[0];
    let ps = p * scale;
    let (h, w) = (base.shape().h, base.shape().w);
    if h < ps || w < ps {
        return Err(Error::config(format!("base level {h}x{w} smaller than window {ps}")));
    }
    for _ in 0..MAX_TRIES {
        let y0 = scale * rng.below((h - ps) / scale + 1);
        let x0 = scale * rng.below((w - ps) / scale + 1);
        let i_gt = crop(base, y0, x0, ps);
        if std_dev(&i_gt) < MIN_STD {
            continue;
        }
        let i_gt_prime = crop(&pyr.levels[j], y0 >> j, x0 >> j, 2 * p);
        let i_lr = degrade(&i_gt, scale)?;
        return Ok(PatchTriple {
            i_gt,
            i_gt_prime: Some(i_gt_prime),
            i_lr,
            levels: PatchTriple::levels_for_scale(scale),
            center: (y0 + ps / 2, x0 + ps / 2),
        });
    }
    Err(Error::config(format!("no textured {ps}x{ps} window after {MAX_TRIES} tries")))
}

/// Rotates every channel plane by `k` quarter turns counterclockwise.
pub fn rot90(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    match k % 4 {
        0 => x.clone(),
        1 => Tensor::from_fn(s.with_hw(s.w, s.h), |n, c, y, xx| x.at(n, c, xx, s.w - 1 - y)),
        2 => Tensor::from_fn(s, |n, c, y, xx| x.at(n, c, s.h - 1 - y, s.w - 1 - xx)),
        _ => Tensor::from_fn(s.with_hw(s.w, s.h), |n, c, y, xx| x.at(n, c, s.h - 1 - xx, y)),
    }
}

/// Random quarter-turn applied identically to all members.
pub fn augment(t: &PatchTriple, rng: &mut SeededRng) -> PatchTriple {
    let k = rng.below(4);
    PatchTriple {
        i_gt: rot90(&t.i_gt, k),
        i_gt_prime: t.i_gt_prime.as_ref().map(|g| rot90(g, k)),
        i_lr: rot90(&t.i_lr, k),
        levels: t.levels,
        center: t.center,
    }
}

/// Disjoint `(train, test)` indices in a 5:1 ratio, each sorted.
pub fn split_indices(count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    SeededRng::stream(seed, streams::SPLIT).shuffle(&mut idx);
    let n_test = count / 6;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub scale: usize,
    pub p: usize,
    pub style: PyramidStyle,
}

/// `count` triples, each cut from its own pyramid.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<PatchTriple>> {
    if spec.count == 0 {
        return Err(Error::config("triple count must be at least 1"));
    }
    let levels = spec.scale.trailing_zeros().max(1) as usize;
    let base = (2 * spec.p * spec.scale).max(64).div_ceil(8) * 8;
    (0..spec.count)
        .map(|i| {
            let pyr_seed = SeededRng::keyed(spec.seed, streams::SYNTH, i as u64, 0).next_u64();
            let pyr = synth_pyramid(pyr_seed, base, levels, spec.style)?;
            let mut rng = SeededRng::keyed(spec.seed, streams::SAMPLE, i as u64, 0);
            sample_triple(&pyr, spec.scale, spec.p, &mut rng)
        })
        .collect()
}
