//! Training objective: per-branch L1 + SSIM losses combined linearly.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ForwardOutput;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// SR-branch weight.
    pub lambda1: f64,
    /// WT-branch weight.
    pub lambda2: f64,
    /// SSIM weight inside the SR loss.
    pub lambda3: f64,
    /// SSIM weight inside the WT loss.
    pub lambda4: f64,
    /// Auxiliary WR imitation weight.
    pub lambda_wr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.3,
            lambda2: 0.7,
            lambda3: 0.2,
            lambda4: 0.2,
            lambda_wr: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda_wr];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Pixel loss family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    OnlyL1,
    OnlyMse,
    #[default]
    Ours,
}

/// Branch weighting strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptStrategy {
    OnlySr,
    OnlyWt,
    WeightExchange,
    #[default]
    Ours,
}

macro_rules! parse_kebab {
    ($ty:ty, $what:literal, $($s:literal => $v:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::usage(format!(concat!("unknown ", $what, " {}"), s))),
                }
            }
        }
    };
}

parse_kebab!(LossKind, "loss strategy", "only-l1" => LossKind::OnlyL1, "only-mse" => LossKind::OnlyMse, "ours" => LossKind::Ours);
parse_kebab!(
    OptStrategy,
    "optimization strategy",
    "only-sr" => OptStrategy::OnlySr,
    "only-wt" => OptStrategy::OnlyWt,
    "weight-exchange" => OptStrategy::WeightExchange,
    "ours" => OptStrategy::Ours
);

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub weights: LossWeights,
    pub loss: LossKind,
    pub strategy: OptStrategy,
}

impl Objective {
    /// Weights after applying the loss and branch strategies.
    pub fn effective(&self) -> LossWeights {
        let mut w = self.weights;
        match self.strategy {
            OptStrategy::Ours => {}
            OptStrategy::OnlySr => w.lambda2 = 0.0,
            OptStrategy::OnlyWt => w.lambda1 = 0.0,
            OptStrategy::WeightExchange => std::mem::swap(&mut w.lambda1, &mut w.lambda2),
        }
        if self.loss != LossKind::Ours {
            w.lambda3 = 0.0;
            w.lambda4 = 0.0;
        }
        w
    }
}

/// Loss variables recorded on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l_sr: Var,
    pub l_wt: Option<Var>,
    pub aux: Option<Var>,
}

/// Scalar values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_sr: f64,
    pub l_wt: f64,
    pub aux: f64,
}

impl LossBreakdown {
    /// `lambda1 * l_sr + lambda2 * l_wt + lambda_wr * aux`.
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        w.lambda1 * self.l_sr + w.lambda2 * self.l_wt + w.lambda_wr * self.aux
    }
}

/// Pixel loss plus `lambda_ssim * (1 - SSIM)`.
pub fn branch_loss<T: Scalar>(tape: &mut Tape<'_, T>, kind: LossKind, pred: Var, target: Var, lambda_ssim: f64) -> Result<Var> {
    let pixel = match kind {
        LossKind::OnlyMse => tape.mse_loss(pred, target)?,
        LossKind::OnlyL1 | LossKind::Ours => tape.l1_loss(pred, target)?,
    };
    if kind != LossKind::Ours {
        return Ok(pixel);
    }
    let s = tape.ssim_loss(pred, target)?;
    tape.weighted_sum(&[(pixel, T::one()), (s, T::of(lambda_ssim))])
}

/// Composite loss of one forward pass. `wt_target` is the HH band of the
/// cross-scale image; without it the WT term is omitted.
pub fn composite_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    objective: &Objective,
    out: &ForwardOutput,
    i_gt: Var,
    wt_target: Option<Var>,
) -> Result<LossVars> {
    let w = objective.effective();
    let l_sr = branch_loss(tape, objective.loss, out.i_hr, i_gt, w.lambda3)?;
    let mut terms = vec![(l_sr, T::of(w.lambda1))];
    let l_wt = match (out.i_wt, wt_target) {
        (Some(p), Some(t)) => {
            let l = branch_loss(tape, objective.loss, p, t, w.lambda4)?;
            terms.push((l, T::of(w.lambda2)));
            Some(l)
        }
        _ => None,
    };
    let aux = match out.wr_pair {
        Some((wr, target)) if w.lambda_wr > 0.0 => {
            let l = tape.l1_loss(wr, target)?;
            terms.push((l, T::of(w.lambda_wr)));
            Some(l)
        }
        _ => None,
    };
    let total = tape.weighted_sum(&terms)?;
    Ok(LossVars { total, l_sr, l_wt, aux })
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<'_, T>) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
        LossBreakdown {
            total: get(Some(self.total)),
            l_sr: get(Some(self.l_sr)),
            l_wt: get(self.l_wt),
            aux: get(self.aux),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_adjust_weights() {
        let base = Objective::default();
        assert_eq!(base.effective(), LossWeights::default());
        let ex = Objective {
            strategy: OptStrategy::WeightExchange,
            ..base
        }
        .effective();
        assert_eq!((ex.lambda1, ex.lambda2), (0.7, 0.3));
        let only_sr = Objective {
            strategy: OptStrategy::OnlySr,
            ..base
        }
        .effective();
        assert_eq!(only_sr.lambda2, 0.0);
        let l1 = Objective {
            loss: LossKind::OnlyL1,
            ..base
        }
        .effective();
        assert_eq!((l1.lambda3, l1.lambda4), (0.0, 0.0));
        assert_eq!("only-mse".parse::<LossKind>().unwrap(), LossKind::OnlyMse);
        assert!(matches!("bogus".parse::<OptStrategy>(), Err(Error::Usage(_))));
    }

    #[test]
    fn exchange_recomposes_in_closed_form() {
        let b = LossBreakdown {
            total: 0.0,
            l_sr: 0.4,
            l_wt: 0.1,
            aux: 0.0,
        };
        let ours = b.recompose(&LossWeights::default());
        let ex = b.recompose(
            &Objective {
                strategy: OptStrategy::WeightExchange,
                ..Default::default()
            }
            .effective(),
        );
        assert!((ours - (0.3 * 0.4 + 0.7 * 0.1)).abs() < 1e-15);
        assert!((ex - (0.7 * 0.4 + 0.3 * 0.1)).abs() < 1e-15);
    }
}
