//! Network building blocks. Each block declares its parameters in a
//! [`ParamLayout`] at construction and records its forward pass on a [`Tape`].

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamLayout};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Per-channel color means of the training corpus.
pub const RGB_MEANS: [f64; 3] = [0.7204, 0.4298, 0.6379];

/// WT-branch depth for a scale: residual blocks per WT block and WRB count.
pub fn depth_for_scale(scale: usize) -> Result<(usize, usize)> {
    match scale {
        2 => Ok((2, 4)),
        4 => Ok((3, 6)),
        8 => Ok((4, 8)),
        _ => Err(Error::config(format!("unsupported scale {scale}; expected 2, 4 or 8"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub kernel: usize,
    pub ca_reduction: usize,
    pub rb_per_wt_block: usize,
    pub wrb_count: usize,
}

impl BlockConfig {
    /// Defaults for `channels` with the depth rule of `scale`.
    pub fn for_scale(scale: usize, channels: usize) -> Result<Self> {
        let (rb_per_wt_block, wrb_count) = depth_for_scale(scale)?;
        Ok(BlockConfig {
            channels,
            kernel: 3,
            ca_reduction: 8,
            rb_per_wt_block,
            wrb_count,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("channels must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.ca_reduction == 0 || !self.channels.is_multiple_of(self.ca_reduction) {
            return Err(Error::config(format!(
                "channels {} not divisible by attention reduction {}",
                self.channels, self.ca_reduction
            )));
        }
        Ok(())
    }
}

/// Convolution with bias and same-size zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("{name}: kernel {kernel} must be odd")));
        }
        let fan_in = cin * kernel * kernel;
        let weight = layout.add(
            format!("{name}.weight"),
            Shape4::new(cout, cin, kernel, kernel),
            Init::KaimingUniform { fan_in },
        )?;
        let bias = layout.add(format!("{name}.bias"), Shape4::new(cout, 1, 1, 1), Init::Zeros)?;
        Ok(Conv {
            weight,
            bias,
            cin,
            cout,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let c = tape.shape(x).c;
        if c != self.cin {
            return Err(Error::shape(
                "conv",
                format!("input has {c} channels, layer expects {}", self.cin),
            ));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv2d(x, w, Some(b), 1, self.kernel / 2)
    }
}

/// `x - means` (sign -1) or `x + means` (sign +1) per channel.
pub fn mean_shift<T: Scalar>(x: &Tensor4<T>, means: &[f64], sign: f64) -> Result<Tensor4<T>> {
    let s = x.shape();
    if means.len() != s.c {
        return Err(Error::shape(
            "mean_shift",
            format!("{} means for {} channels", means.len(), s.c),
        ));
    }
    let mut y = x.clone();
    for (i, plane) in y.data_mut().chunks_exact_mut(s.plane()).enumerate() {
        let o = T::of(sign * means[i % s.c]);
        plane.iter_mut().for_each(|v| *v += o);
    }
    Ok(y)
}

/// Fixed color normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanShift {
    pub means: [f64; 3],
}

impl MeanShift {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, sign: f64) -> Result<Var> {
        let offsets: Vec<T> = self.means.iter().map(|&m| T::of(sign * m)).collect();
        tape.channel_offset(x, &offsets)
    }
}

/// `x + conv(relu(conv(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResidualBlock {
    pub fn new(layout: &mut ParamLayout, prefix: &str, channels: usize, kernel: usize) -> Result<Self> {
        Ok(ResidualBlock {
            conv1: Conv::new(layout, &format!("{prefix}.conv1"), channels, channels, kernel)?,
            conv2: Conv::new(layout, &format!("{prefix}.conv2"), channels, channels, kernel)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y)?;
        tape.add(x, y)
    }
}

/// Sequence of residual blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStack {
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualStack {
    pub fn new(layout: &mut ParamLayout, prefix: &str, count: usize, channels: usize, kernel: usize) -> Result<Self> {
        let blocks = (0..count)
            .map(|i| ResidualBlock::new(layout, &format!("{prefix}.rb{i}"), channels, kernel))
            .collect::<Result<_>>()?;
        Ok(ResidualStack { blocks })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        Ok(x)
    }
}

/// Squeeze-excite gating: `x * sigmoid(up(relu(down(pool(x)))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttention {
    pub down: Conv,
    pub up: Conv,
}

impl ChannelAttention {
    pub fn new(layout: &mut ParamLayout, prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::config(format!(
                "channels {channels} not divisible by attention reduction {reduction}"
            )));
        }
        let inner = channels / reduction;
        Ok(ChannelAttention {
            down: Conv::new(layout, &format!("{prefix}.down"), channels, inner, 1)?,
            up: Conv::new(layout, &format!("{prefix}.up"), inner, channels, 1)?,
        })
    }

    /// Pre-sigmoid channel scores, `(n, c, 1, 1)`.
    pub fn scores<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.avg_pool_global(x);
        let g = self.down.forward(tape, g)?;
        let g = tape.relu(g);
        self.up.forward(tape, g)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let s = self.scores(tape, x)?;
        let w = tape.sigmoid(s);
        tape.channel_gate(x, w)
    }
}

/// Wavelet reconstruction block: `x + ca(conv(relu(conv(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Wrb {
    pub conv1: Conv,
    pub conv2: Conv,
    pub attention: ChannelAttention,
}

impl Wrb {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(Wrb {
            conv1: Conv::new(layout, &format!("{prefix}.conv1"), c, c, cfg.kernel)?,
            conv2: Conv::new(layout, &format!("{prefix}.conv2"), c, c, cfg.kernel)?,
            attention: ChannelAttention::new(layout, &format!("{prefix}.ca"), c, cfg.ca_reduction)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, x)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y)?;
        let y = self.attention.forward(tape, y)?;
        tape.add(x, y)
    }
}

/// WRB stack followed by one convolution; shape-preserving.
#[derive(Clone, Debug, PartialEq)]
pub struct WrModule {
    pub blocks: Vec<Wrb>,
    pub tail: Conv,
}

impl WrModule {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cfg: &BlockConfig) -> Result<Self> {
        let blocks = (0..cfg.wrb_count)
            .map(|i| Wrb::new(layout, &format!("{prefix}.wrb{i}"), cfg))
            .collect::<Result<_>>()?;
        let tail = Conv::new(layout, &format!("{prefix}.tail"), cfg.channels, cfg.channels, cfg.kernel)?;
        Ok(WrModule { blocks, tail })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        self.tail.forward(tape, x)
    }
}

/// `log2(scale)` stages of conv to `4c` plus pixel shuffle, then conv to 3 channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsampler {
    pub stages: Vec<Conv>,
    pub tail: Conv,
}

impl Upsampler {
    pub fn new(layout: &mut ParamLayout, prefix: &str, scale: usize, channels: usize, kernel: usize) -> Result<Self> {
        depth_for_scale(scale)?;
        let stages = (0..scale.trailing_zeros())
            .map(|i| Conv::new(layout, &format!("{prefix}.stage{i}"), channels, 4 * channels, kernel))
            .collect::<Result<_>>()?;
        let tail = Conv::new(layout, &format!("{prefix}.tail"), channels, 3, kernel)?;
        Ok(Upsampler { stages, tail })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, mut x: Var) -> Result<Var> {
        for s in &self.stages {
            x = s.forward(tape, x)?;
            x = tape.pixel_shuffle(x, 2)?;
        }
        self.tail.forward(tape, x)
    }
}
