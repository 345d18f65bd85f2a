//! The dual-branch network: an SR branch on the LR image, a WT branch on
//! wavelet features of a cross-scale image, and texture transformers that
//! fuse the two after every block pair.

use serde::{Deserialize, Serialize};

use crate::attention::TextureTransformer;
use crate::autograd::{Tape, Var};
use crate::blocks::{BlockConfig, Conv, MeanShift, ResidualStack, Upsampler, WrModule, RGB_MEANS};
use crate::error::{Error, Result};
use crate::ops::ResizePlan;
use crate::params::{Init, ParamLayout, Parameters};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Where the WT branch gets its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Haar HH band of the cross-scale image `i_gt'`.
    CrossScale,
    /// WR module applied to LR features; no cross-scale image.
    WrTest,
    /// The LR image itself.
    Sisr,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-scale" => Ok(Mode::CrossScale),
            "wr-test" => Ok(Mode::WrTest),
            "sisr" => Ok(Mode::Sisr),
            _ => Err(Error::usage(format!(
                "unknown mode {s}; expected cross-scale, wr-test or sisr"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Drop the WT branch and transformers.
    pub sr_only: bool,
    /// Feed a bicubic half-size copy of the WT input instead of its HH band.
    pub disable_dwt: bool,
    /// Drop the WR module.
    pub disable_wr: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WrInit {
    #[default]
    Kaiming,
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub scale: usize,
    pub cwtb_count: usize,
    pub channels: usize,
    pub block: BlockConfig,
    /// Residual blocks inside each SR block.
    pub rb_per_sr_block: usize,
    pub mode: Mode,
    pub rgb_means: [f64; 3],
    pub seed: u64,
    pub ablation: Ablation,
    pub wr_init: WrInit,
    /// Relevance rows held in memory at once.
    pub attention_row_block: usize,
}

impl NetworkConfig {
    pub fn new(scale: usize, cwtb_count: usize, channels: usize) -> Result<Self> {
        let cfg = NetworkConfig {
            scale,
            cwtb_count,
            channels,
            block: BlockConfig::for_scale(scale, channels)?,
            rb_per_sr_block: 2,
            mode: Mode::CrossScale,
            rgb_means: RGB_MEANS,
            seed: 0,
            ablation: Ablation::default(),
            wr_init: WrInit::Kaiming,
            attention_row_block: 256,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        crate::blocks::depth_for_scale(self.scale)?;
        if self.cwtb_count == 0 {
            return Err(Error::config("cwtb_count must be at least 1"));
        }
        if self.rb_per_sr_block == 0 {
            return Err(Error::config("rb_per_sr_block must be at least 1"));
        }
        if self.block.channels != self.channels {
            return Err(Error::config(format!(
                "block channels {} differ from network channels {}",
                self.block.channels, self.channels
            )));
        }
        self.block.validate()?;
        let a = self.ablation;
        if a.sr_only && (a.disable_dwt || a.disable_wr) {
            return Err(Error::config("sr_only cannot be combined with other ablation flags"));
        }
        self.check_mode(self.mode)
    }

    /// Whether this network can run in `mode`.
    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        if mode == Mode::WrTest && self.ablation.disable_wr {
            return Err(Error::config("wr-test mode needs the WR module; disable_wr is set"));
        }
        if mode == Mode::WrTest && self.ablation.sr_only {
            return Err(Error::config("wr-test mode needs the WT branch; sr_only is set"));
        }
        Ok(())
    }

    pub fn has_wr(&self) -> bool {
        !self.ablation.sr_only && !self.ablation.disable_wr
    }
}

struct WtBranch {
    head: Conv,
    wr: Option<(Conv, WrModule)>,
    blocks: Vec<ResidualStack>,
    transformers: Vec<TextureTransformer>,
    proj: Conv,
}

/// Network structure; parameter values live in a separate [`Parameters`] store.
pub struct CwtNet {
    config: NetworkConfig,
    layout: ParamLayout,
    means: MeanShift,
    sr_head: Conv,
    sr_blocks: Vec<ResidualStack>,
    wt: Option<WtBranch>,
    upsampler: Upsampler,
}

/// Variables produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub i_hr: Var,
    /// WT-branch image, absent when the branch is ablated.
    pub i_wt: Option<Var>,
    /// `(WR features, detached cross-scale features)` when requested.
    pub wr_pair: Option<(Var, Var)>,
}

impl CwtNet {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let k = config.block.kernel;
        let mut layout = ParamLayout::new();
        let sr_head = Conv::new(&mut layout, "sr.head", 3, c, k)?;
        let sr_blocks = (0..config.cwtb_count)
            .map(|m| ResidualStack::new(&mut layout, &format!("sr.block{m}"), config.rb_per_sr_block, c, k))
            .collect::<Result<_>>()?;
        let wt = if config.ablation.sr_only {
            None
        } else {
            let head = Conv::new(&mut layout, "wt.head", 3, c, k)?;
            let wr = if config.has_wr() {
                let wr_head = Conv::new(&mut layout, "wr.head", 3, c, k)?;
                Some((wr_head, WrModule::new(&mut layout, "wr", &config.block)?))
            } else {
                None
            };
            let mut blocks = Vec::with_capacity(config.cwtb_count);
            let mut transformers = Vec::with_capacity(config.cwtb_count);
            for m in 0..config.cwtb_count {
                blocks.push(ResidualStack::new(
                    &mut layout,
                    &format!("wt.block{m}"),
                    config.block.rb_per_wt_block,
                    c,
                    k,
                )?);
                transformers.push(TextureTransformer::new(
                    &mut layout,
                    &format!("tf.block{m}"),
                    c,
                    k,
                    config.attention_row_block,
                )?);
            }
            let proj = Conv::new(&mut layout, "wt.proj", c, 3, k)?;
            Some(WtBranch {
                head,
                wr,
                blocks,
                transformers,
                proj,
            })
        };
        let upsampler = Upsampler::new(&mut layout, "up", config.scale, c, k)?;
        if config.wr_init == WrInit::StandardNormal {
            layout.set_init_prefix("wr.", Init::StandardNormal);
        }
        Ok(CwtNet {
            means: MeanShift {
                means: config.rgb_means,
            },
            config,
            layout,
            sr_head,
            sr_blocks,
            wt,
            upsampler,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.numel()
    }

    /// Freshly initialized parameters from the config seed.
    pub fn init_params<T: Scalar>(&self) -> Parameters<T> {
        Parameters::init(&self.layout, self.config.seed)
    }

    /// Forward pass in the configured mode.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, i_lr: Var, wt_input: Option<Var>) -> Result<ForwardOutput> {
        self.forward_with(tape, self.config.mode, i_lr, wt_input, false)
    }

    /// Forward pass in `mode`. With `wr_pair` set and a WR module present in
    /// cross-scale mode, the WR path also runs for auxiliary supervision.
    pub fn forward_with<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        mode: Mode,
        i_lr: Var,
        wt_input: Option<Var>,
        wr_pair: bool,
    ) -> Result<ForwardOutput> {
        self.config.check_mode(mode)?;
        let lr = tape.shape(i_lr);
        if lr.c != 3 {
            return Err(Error::shape("forward", format!("i_lr must have 3 channels, got {lr}")));
        }
        let shifted = self.means.forward(tape, i_lr, -1.0)?;
        let f0 = self.sr_head.forward(tape, shifted)?;

        let mut f = f0;
        let mut pair = None;
        let mut i_wt = None;
        match &self.wt {
            None => {
                for b in &self.sr_blocks {
                    f = b.forward(tape, f)?;
                }
            }
            Some(wt) => {
                let (mut h, p) = self.wt_stem(tape, wt, mode, shifted, wt_input, wr_pair)?;
                pair = p;
                for ((sr, rb), tf) in self.sr_blocks.iter().zip(&wt.blocks).zip(&wt.transformers) {
                    let q = sr.forward(tape, f)?;
                    h = rb.forward(tape, h)?;
                    f = tf.forward(tape, q, h)?;
                }
                i_wt = Some(wt.proj.forward(tape, h)?);
            }
        }
        let fused = tape.add(f0, f)?;
        let up = self.upsampler.forward(tape, fused)?;
        let i_hr = self.means.forward(tape, up, 1.0)?;
        Ok(ForwardOutput {
            i_hr,
            i_wt,
            wr_pair: pair,
        })
    }

    /// Initial WT feature `f_hwt^0` for `mode`.
    fn wt_stem<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        wt: &WtBranch,
        mode: Mode,
        shifted_lr: Var,
        wt_input: Option<Var>,
        wr_pair: bool,
    ) -> Result<(Var, Option<(Var, Var)>)> {
        let lr = tape.shape(shifted_lr);
        match mode {
            Mode::CrossScale => {
                let x = wt_input.ok_or_else(|| Error::usage("cross-scale mode needs the cross-scale image"))?;
                let xs = tape.shape(x);
                let want = Shape4::new(lr.n, 3, 2 * lr.h, 2 * lr.w);
                if xs != want {
                    return Err(Error::shape(
                        "wt input",
                        format!("cross-scale image must be {want} for i_lr {lr}, got {xs}"),
                    ));
                }
                let bands = if self.config.ablation.disable_dwt {
                    tape.resize(x, ResizePlan::for_size(xs.h, xs.w, lr.h, lr.w)?)?
                } else {
                    tape.haar_hh(x)?
                };
                let h0 = wt.head.forward(tape, bands)?;
                let pair = match (&wt.wr, wr_pair) {
                    (Some((head, module)), true) => {
                        let r = head.forward(tape, shifted_lr)?;
                        let r = module.forward(tape, r)?;
                        let target = tape.detach(h0);
                        Some((r, target))
                    }
                    _ => None,
                };
                Ok((h0, pair))
            }
            Mode::WrTest => {
                if wt_input.is_some() {
                    return Err(Error::usage("wr-test mode takes no cross-scale image"));
                }
                let (head, module) = wt
                    .wr
                    .as_ref()
                    .ok_or_else(|| Error::config("wr-test mode needs the WR module"))?;
                let r = head.forward(tape, shifted_lr)?;
                Ok((module.forward(tape, r)?, None))
            }
            Mode::Sisr => {
                if wt_input.is_some() {
                    return Err(Error::usage("sisr mode takes no cross-scale image"));
                }
                Ok((wt.head.forward(tape, shifted_lr)?, None))
            }
        }
    }

    /// Inference on concrete tensors in `mode`: `(i_hr, i_wt)`.
    pub fn infer<T: Scalar>(
        &self,
        params: &Parameters<T>,
        mode: Mode,
        i_lr: &Tensor4<T>,
        wt_input: Option<&Tensor4<T>>,
    ) -> Result<(Tensor4<T>, Option<Tensor4<T>>)> {
        let mut tape = Tape::new(params);
        let x = tape.constant(i_lr.clone());
        let w = wt_input.map(|w| tape.constant(w.clone()));
        let out = self.forward_with(&mut tape, mode, x, w, false)?;
        let i_wt = out.i_wt.map(|v| tape.value(v).clone());
        Ok((tape.value(out.i_hr).clone(), i_wt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(shape: Shape4, seed: u64) -> Tensor4<f32> {
        let mut rng = SeededRng::new(seed);
        Tensor4::from_fn(shape, |_, _, _, _| rng.uniform() as f32)
    }

    fn micro(scale: usize) -> NetworkConfig {
        let mut cfg = NetworkConfig::new(scale, 1, 8).unwrap();
        cfg.rb_per_sr_block = 1;
        cfg
    }

    #[test]
    fn output_shapes_per_mode() {
        let net = CwtNet::new(micro(2)).unwrap();
        let params = net.init_params::<f32>();
        let lr = random(Shape4::new(1, 3, 8, 8), 1);
        let gtp = random(Shape4::new(1, 3, 16, 16), 2);
        let (hr, wt) = net.infer(&params, Mode::CrossScale, &lr, Some(&gtp)).unwrap();
        assert_eq!(hr.shape(), Shape4::new(1, 3, 16, 16));
        assert_eq!(wt.unwrap().shape(), Shape4::new(1, 3, 8, 8));
        let (hr2, _) = net.infer(&params, Mode::WrTest, &lr, None).unwrap();
        assert_eq!(hr2.shape(), hr.shape());
        assert!(matches!(
            net.infer(&params, Mode::WrTest, &lr, Some(&gtp)),
            Err(Error::Usage(_))
        ));
        assert!(matches!(net.infer(&params, Mode::CrossScale, &lr, None), Err(Error::Usage(_))));
    }

    #[test]
    fn contradictory_ablation_is_rejected() {
        let mut cfg = micro(2);
        cfg.ablation.sr_only = true;
        cfg.ablation.disable_wr = true;
        assert!(matches!(CwtNet::new(cfg), Err(Error::Config(_))));
        let mut cfg = micro(2);
        cfg.cwtb_count = 0;
        assert!(matches!(CwtNet::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_is_linear_in_blocks() {
        let count = |n| {
            let mut cfg = micro(2);
            cfg.cwtb_count = n;
            CwtNet::new(cfg).unwrap().parameter_count()
        };
        let per_block = count(2) - count(1);
        assert_eq!(count(12) - count(6), 6 * per_block);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = CwtNet::new(micro(2)).unwrap();
        let params = net.init_params::<f32>();
        let lr = random(Shape4::new(2, 3, 8, 8), 5);
        let gtp = random(Shape4::new(2, 3, 16, 16), 6);
        let a = net.infer(&params, Mode::CrossScale, &lr, Some(&gtp)).unwrap();
        let b = net.infer(&params, Mode::CrossScale, &lr, Some(&gtp)).unwrap();
        assert_eq!(a, b);
    }
}
