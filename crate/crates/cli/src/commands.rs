//! Subcommand bodies that do not need a training loop of their own.

use std::path::Path;

use cwtnet_core::data::{load_patch_dir, load_png, save_dataset, save_png, synth_dataset, Manifest, PyramidStyle, SynthSpec};
use cwtnet_core::gradcheck::{standard_suite, GradReport, SuiteOptions};
use cwtnet_core::{Ablation, CwtNet, Error, Mode, Result, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::evaluate::{evaluate, Report};
use crate::run::{run_train, TrainOptions, TrainSummary};

pub fn synth(seed: u64, count: usize, scale: usize, p: usize, style: PyramidStyle, out: &Path) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::usage("--count must be at least 1"));
    }
    let triples = synth_dataset(&SynthSpec { seed, count, scale, p, style })?;
    save_dataset(out, &triples, scale, p, seed)
}

/// Evaluates a checkpoint on `<data>/<split>`; grids go to `grids` when given.
pub fn eval(ckpt: &Path, data: &Path, split: &str, mode: Option<Mode>, grids: Option<&Path>) -> Result<Report> {
    let ck = Checkpoint::load(ckpt)?;
    let mode = mode.unwrap_or(ck.config.network.mode);
    let net = CwtNet::new(ck.config.network.clone())?;
    net.config().check_mode(mode)?;
    let (manifest, triples) = load_patch_dir(data, split, mode == Mode::CrossScale)?;
    if manifest.scale != net.config().scale {
        return Err(Error::data(
            data,
            format!("dataset scale {} differs from checkpoint scale {}", manifest.scale, net.config().scale),
        ));
    }
    if triples.is_empty() {
        return Err(Error::data(data.join(split), "split is empty"));
    }
    evaluate(&net, &ck.params, mode, &triples, grids)
}

#[derive(Clone, Debug, Default)]
pub struct InferOptions<'a> {
    pub mode: Option<Mode>,
    /// Cross-scale image at twice the input size, for cross-scale mode.
    pub wt_input: Option<&'a Path>,
    /// Drop a trailing row/column of odd-sized inputs instead of failing.
    pub crop_odd: bool,
}

/// Super-resolves one PNG; returns any warnings raised on the way.
pub fn infer(ckpt: &Path, input: &Path, out: &Path, opts: &InferOptions<'_>) -> Result<Vec<String>> {
    let ck = Checkpoint::load(ckpt)?;
    let mode = opts.mode.unwrap_or(ck.config.network.mode);
    let net = CwtNet::new(ck.config.network.clone())?;
    net.config().check_mode(mode)?;
    let mut warnings = Vec::new();
    let lr = even_sized(load_png(input)?, input, opts.crop_odd, &mut warnings)?;
    let wt = match (mode, opts.wt_input) {
        (Mode::CrossScale, Some(path)) => Some(load_png(path)?),
        (Mode::CrossScale, None) => {
            return Err(Error::usage("cross-scale mode needs --wt-input; use --mode wr-test without one"))
        }
        (_, Some(_)) => return Err(Error::usage(format!("{mode:?} mode takes no --wt-input"))),
        (_, None) => None,
    };
    let (sr, _) = net.infer(&ck.params, mode, &lr, wt.as_ref())?;
    if !sr.all_finite() {
        return Err(Error::Numeric("non-finite output".into()));
    }
    save_png(&sr.map(|v| v.clamp(0.0, 1.0)), out)?;
    Ok(warnings)
}

fn even_sized(x: Tensor, path: &Path, crop: bool, warnings: &mut Vec<String>) -> Result<Tensor> {
    let s = x.shape();
    if s.h.is_multiple_of(2) && s.w.is_multiple_of(2) {
        return Ok(x);
    }
    if !crop {
        return Err(Error::data(
            path,
            format!("image is {}x{}; dimensions must be even (pass --crop-odd to trim)", s.h, s.w),
        ));
    }
    let (h, w) = (s.h & !1, s.w & !1);
    if h == 0 || w == 0 {
        return Err(Error::data(path, "image too small after cropping"));
    }
    warnings.push(format!("{}: cropped {}x{} to {h}x{w}", path.display(), s.h, s.w));
    Ok(Tensor::from_fn(s.with_hw(h, w), |n, c, y, xx| x.at(n, c, y, xx)))
}

pub fn gradcheck(seed: u64, mutate_haar: bool) -> Result<Vec<GradReport>> {
    standard_suite(SuiteOptions { seed, mutate_haar })
}

/// The four component rows: SR branch only, no DWT, no WR, full network.
pub const ABLATION_ROWS: [(&str, Ablation); 4] = [
    ("sr-only", Ablation { sr_only: true, disable_dwt: false, disable_wr: false }),
    ("no-dwt", Ablation { sr_only: false, disable_dwt: true, disable_wr: false }),
    ("no-wr", Ablation { sr_only: false, disable_dwt: false, disable_wr: true }),
    ("full", Ablation { sr_only: false, disable_dwt: false, disable_wr: false }),
];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: &'static str,
    pub parameters: usize,
    pub summary: TrainSummary,
}

/// Trains every row from `base` into `<out>/<row>`.
pub fn ablate(base: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, ablation) in ABLATION_ROWS {
        let mut cfg = base.clone();
        cfg.network.ablation = ablation;
        cfg.validate()?;
        let parameters = CwtNet::new(cfg.network.clone())?.parameter_count();
        let summary = run_train(cfg, &out.join(name), TrainOptions::default())?;
        rows.push(AblationRow { name, parameters, summary });
    }
    Ok(rows)
}
