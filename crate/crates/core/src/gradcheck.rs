//! Finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::attention::TextureTransformer;
use crate::autograd::{AttnIndex, Tape, Var};
use crate::blocks::{BlockConfig, ChannelAttention, ResidualBlock, Upsampler, WrModule, Wrb};
use crate::error::Result;
use crate::model::{CwtNet, Mode, NetworkConfig};
use crate::params::{ParamLayout, Parameters};
use crate::rng::{streams, SeededRng};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Relative error bound per coordinate.
    pub tol: f64,
    /// Absolute difference below which a coordinate passes regardless.
    pub abs_floor: f64,
    pub samples: usize,
    /// Fraction of sampled coordinates that must pass.
    pub pass_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-3,
            tol: 1e-3,
            abs_floor: 1e-8,
            samples: 200,
            pass_fraction: 0.99,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub passed: usize,
    /// Coordinates whose absolute difference is within `abs_floor` count as 0.
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub failures: Vec<Failure>,
    pub required_fraction: f64,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.checked > 0 && self.passed as f64 >= self.required_fraction * self.checked as f64
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {} {}/{} passed  max rel {:.3e}  mean rel {:.3e}",
            self.name,
            if self.ok() { "PASS" } else { "FAIL" },
            self.passed,
            self.checked,
            self.max_rel_error,
            self.mean_rel_error
        )
    }
}

#[derive(Clone, Copy)]
enum Coord {
    Input(usize, usize),
    Param(usize, usize),
}

/// Builds a scalar loss from differentiable input variables.
pub trait LossFn: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>> LossFn for F {}

fn evaluate(params: &Parameters<f64>, inputs: &[Tensor4<f64>], frozen: &[AttnIndex], f: &impl LossFn) -> Result<f64> {
    let mut tape = Tape::new(params);
    tape.freeze_attention(frozen);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let l = f(&mut tape, &vars)?;
    Ok(tape.value(l).data()[0])
}

/// Compares analytic gradients of `f` with respect to every input and
/// parameter against central differences on sampled coordinates. Hard
/// attention indices found at the unperturbed point stay fixed while
/// differencing.
pub fn check_gradients(
    name: &str,
    params: &Parameters<f64>,
    inputs: &[Tensor4<f64>],
    f: impl LossFn,
    cfg: &GradCheckConfig,
) -> Result<GradReport> {
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let frozen = tape.attention_indices().to_vec();
    let pgrads = {
        let mut g = crate::params::Gradients::zeros_like(params);
        tape.accumulate_param_grads(&grads, &mut g)?;
        g
    };
    let input_grads: Vec<Tensor4<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor4::zeros(x.shape())))
        .collect();
    drop(tape);

    let mut coords: Vec<Coord> = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        coords.extend((0..x.numel()).map(|j| Coord::Input(i, j)));
    }
    for (id, _, p) in params.iter() {
        coords.extend((0..p.numel()).map(|j| Coord::Param(id.0, j)));
    }
    let mut rng = SeededRng::stream(cfg.seed, streams::INIT ^ 0x6772_6164);
    rng.shuffle(&mut coords);
    coords.truncate(cfg.samples);

    let mut work_inputs = inputs.to_vec();
    let mut work_params = params.clone();
    let mut failures = Vec::new();
    let (mut passed, mut max_rel, mut sum_rel) = (0usize, 0.0f64, 0.0f64);
    for &c in &coords {
        let (analytic, label) = match c {
            Coord::Input(i, j) => (input_grads[i].data()[j], format!("input{i}[{j}]")),
            Coord::Param(p, j) => {
                let id = crate::params::ParamId(p);
                (pgrads.get(id).data()[j], format!("{}[{j}]", params.name(id)))
            }
        };
        let slot = |inputs: &mut Vec<Tensor4<f64>>, params: &mut Parameters<f64>, delta: f64| match c {
            Coord::Input(i, j) => inputs[i].data_mut()[j] += delta,
            Coord::Param(p, j) => params.get_mut(crate::params::ParamId(p)).data_mut()[j] += delta,
        };
        let orig = match c {
            Coord::Input(i, j) => inputs[i].data()[j],
            Coord::Param(p, j) => params.get(crate::params::ParamId(p)).data()[j],
        };
        slot(&mut work_inputs, &mut work_params, cfg.h);
        let plus = evaluate(&work_params, &work_inputs, &frozen, &f)?;
        slot(&mut work_inputs, &mut work_params, -2.0 * cfg.h);
        let minus = evaluate(&work_params, &work_inputs, &frozen, &f)?;
        // restore exactly
        match c {
            Coord::Input(i, j) => work_inputs[i].data_mut()[j] = orig,
            Coord::Param(p, j) => work_params.get_mut(crate::params::ParamId(p)).data_mut()[j] = orig,
        }
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let diff = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        if rel <= cfg.tol || diff <= cfg.abs_floor {
            passed += 1;
        } else {
            failures.push(Failure {
                coordinate: label,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
        let counted = if diff <= cfg.abs_floor { 0.0 } else { rel };
        max_rel = max_rel.max(counted);
        sum_rel += counted;
    }
    let checked = coords.len();
    Ok(GradReport {
        name: name.to_string(),
        checked,
        passed,
        max_rel_error: max_rel,
        mean_rel_error: if checked > 0 { sum_rel / checked as f64 } else { 0.0 },
        failures,
        required_fraction: cfg.pass_fraction,
    })
}

/// Fixed random weights for a `sum(out * r)` probe loss.
pub fn probe_weights(shape: Shape4, seed: u64) -> Tensor4<f64> {
    let mut rng = SeededRng::keyed(seed, streams::INIT, shape.numel() as u64, 0x7072);
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform_in(-1.0, 1.0))
}

/// Random tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: Shape4, seed: u64, lo: f64, hi: f64) -> Tensor4<f64> {
    let mut rng = SeededRng::keyed(seed, streams::INIT, shape.numel() as u64, 0x7269);
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform_in(lo, hi))
}

/// Backward stencil used by mutation runs: one sign of the diagonal filter flipped.
pub const MUTATED_HH: [f64; 4] = [0.5, 0.5, -0.5, 0.5];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Corrupt the Haar backward rule everywhere it is recorded.
    pub mutate_haar: bool,
}

fn with_layout<B>(build: impl FnOnce(&mut ParamLayout) -> Result<B>, seed: u64) -> Result<(B, Parameters<f64>)> {
    let mut layout = ParamLayout::new();
    let block = build(&mut layout)?;
    let params = Parameters::init(&layout, seed);
    Ok((block, params))
}

/// Randomizes zero-initialized biases so their gradients are exercised off zero.
fn jitter_biases(params: &mut Parameters<f64>, seed: u64) {
    let mut rng = SeededRng::keyed(seed, streams::INIT, 0x6269, 0);
    for (_, name, p) in params.iter_mut() {
        if name.ends_with(".bias") {
            p.data_mut().iter_mut().for_each(|v| *v = rng.uniform_in(-0.1, 0.1));
        }
    }
}

/// Gradient checks of every block type, the diagonal Haar filter, the SSIM
/// loss and a one-block network, each on 200 sampled coordinates.
pub fn standard_suite(opts: SuiteOptions) -> Result<Vec<GradReport>> {
    let cfg = GradCheckConfig {
        seed: opts.seed,
        ..GradCheckConfig::default()
    };
    let seed = opts.seed;
    let mutate = opts.mutate_haar;
    let mut reports = Vec::new();
    let probe = |shape: Shape4, k: u64| probe_weights(shape, seed.wrapping_add(k));
    let input = |shape: Shape4, k: u64| random_tensor(shape, seed.wrapping_add(k), -1.0, 1.0);

    {
        let (rb, mut params) = with_layout(|l| ResidualBlock::new(l, "rb", 4, 3), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(1, 4, 6, 6), 1);
        reports.push(check_gradients(
            "residual_block",
            &params,
            &[input(Shape4::new(1, 4, 6, 6), 2)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = rb.forward(t, v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let (ca, mut params) = with_layout(|l| ChannelAttention::new(l, "ca", 16, 8), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(2, 16, 4, 4), 3);
        reports.push(check_gradients(
            "channel_attention",
            &params,
            &[input(Shape4::new(2, 16, 4, 4), 4)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = ca.forward(t, v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    let small = BlockConfig {
        channels: 8,
        kernel: 3,
        ca_reduction: 4,
        rb_per_wt_block: 2,
        wrb_count: 2,
    };
    {
        let (wrb, mut params) = with_layout(|l| Wrb::new(l, "wrb", &small), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(1, 8, 5, 5), 5);
        reports.push(check_gradients(
            "wrb",
            &params,
            &[input(Shape4::new(1, 8, 5, 5), 6)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = wrb.forward(t, v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let (wr, mut params) = with_layout(|l| WrModule::new(l, "wr", &small), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(1, 8, 5, 5), 7);
        reports.push(check_gradients(
            "wr_module",
            &params,
            &[input(Shape4::new(1, 8, 5, 5), 8)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = wr.forward(t, v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let (up, mut params) = with_layout(|l| Upsampler::new(l, "up", 2, 4, 3), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(1, 3, 8, 8), 9);
        reports.push(check_gradients(
            "upsampler",
            &params,
            &[input(Shape4::new(1, 4, 4, 4), 10)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = up.forward(t, v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let (tf, mut params) = with_layout(|l| TextureTransformer::new(l, "tf", 4, 3, 16), seed)?;
        jitter_biases(&mut params, seed);
        let r = probe(Shape4::new(1, 4, 8, 8), 11);
        reports.push(check_gradients(
            "attention_fuse",
            &params,
            &[input(Shape4::new(1, 4, 8, 8), 12), input(Shape4::new(1, 4, 8, 8), 13)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = tf.forward(t, v[0], v[1])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let params = Parameters::<f64>::zeros(&ParamLayout::new());
        let a = random_tensor(Shape4::new(1, 2, 12, 12), seed.wrapping_add(14), 0.1, 0.9);
        let b = random_tensor(Shape4::new(1, 2, 12, 12), seed.wrapping_add(15), 0.1, 0.9);
        reports.push(check_gradients(
            "ssim_loss",
            &params,
            &[a, b],
            |t: &mut Tape<'_, f64>, v: &[Var]| t.ssim_loss(v[0], v[1]),
            &cfg,
        )?);
    }
    {
        let params = Parameters::<f64>::zeros(&ParamLayout::new());
        let r = probe(Shape4::new(1, 2, 4, 4), 16);
        reports.push(check_gradients(
            "haar_hh",
            &params,
            &[input(Shape4::new(1, 2, 8, 8), 17)],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                if mutate {
                    t.corrupt_haar_backward(MUTATED_HH);
                }
                let y = t.haar_hh(v[0])?;
                t.dot(y, r.clone())
            },
            &cfg,
        )?);
    }
    {
        let mut nc = NetworkConfig::new(2, 1, 8)?;
        nc.rb_per_sr_block = 1;
        nc.seed = seed;
        let net = CwtNet::new(nc)?;
        let mut params: Parameters<f64> = net.init_params();
        jitter_biases(&mut params, seed);
        let r_hr = probe(Shape4::new(1, 3, 16, 16), 18);
        let r_wt = probe(Shape4::new(1, 3, 8, 8), 19);
        let lr = random_tensor(Shape4::new(1, 3, 8, 8), seed.wrapping_add(20), 0.0, 1.0);
        let gtp = random_tensor(Shape4::new(1, 3, 16, 16), seed.wrapping_add(21), 0.0, 1.0);
        reports.push(check_gradients(
            "network_1_cwtb",
            &params,
            &[lr, gtp],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                if mutate {
                    t.corrupt_haar_backward(MUTATED_HH);
                }
                let out = net.forward_with(t, Mode::CrossScale, v[0], Some(v[1]), false)?;
                let a = t.dot(out.i_hr, r_hr.clone())?;
                let wt = out.i_wt.expect("WT branch present");
                let b = t.dot(wt, r_wt.clone())?;
                t.add(a, b)
            },
            &cfg,
        )?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn conv_sum_passes() {
        let mut layout = ParamLayout::new();
        let w = layout.add("w", Shape4::new(3, 2, 3, 3), Init::KaimingUniform { fan_in: 18 }).unwrap();
        let params = Parameters::<f64>::init(&layout, 1);
        let x = random_tensor(Shape4::new(1, 2, 4, 4), 2, -1.0, 1.0);
        let report = check_gradients(
            "conv",
            &params,
            &[x],
            |t: &mut Tape<'_, f64>, v: &[Var]| {
                let wv = t.param(w);
                let y = t.conv2d(v[0], wv, None, 1, 1)?;
                let y = t.relu(y);
                Ok(t.sum(y))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.ok(), "{report}");
    }

    #[test]
    fn corrupted_rule_fails() {
        let params = Parameters::<f64>::zeros(&ParamLayout::new());
        let x = random_tensor(Shape4::new(1, 1, 4, 4), 3, -1.0, 1.0);
        let r = probe_weights(Shape4::new(1, 1, 2, 2), 4);
        let report = check_gradients(
            "bad stencil",
            &params,
            &[x],
            move |t: &mut Tape<'_, f64>, v: &[Var]| {
                let y = t.stencil_with_backward(v[0], [0.5, -0.5, -0.5, 0.5], [0.5, 0.5, -0.5, 0.5])?;
                t.dot(y, r.clone())
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.ok());
    }
}
