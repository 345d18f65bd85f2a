//! Training driver: owns the output directory, the metric CSV and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cwtnet_core::data::{load_patch_dir, split_indices, synth_dataset, PatchTriple};
use cwtnet_core::train::{train_step, Batch};
use cwtnet_core::{AdamState, CwtNet, Error, LossBreakdown, Mode, Parameters, Result};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::evaluate::{evaluate, Report};

pub const METRICS_HEADER: &str = "step,L,L_SR,L_WT,psnr_db,ssim";
pub const LOCKFILE: &str = "train.lock";
pub const LAST: &str = "last.bin";

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt-{step:06}.bin")
}

/// Training triples named by the config: the train split of the synthetic set or directory.
pub fn training_triples(config: &RunConfig) -> Result<Vec<PatchTriple>> {
    let need_gtp = config.network.mode == Mode::CrossScale;
    match &config.data {
        DataSource::Synthetic(spec) => {
            let all = synth_dataset(spec)?;
            let (train, _) = split_indices(all.len(), spec.seed);
            Ok(train.into_iter().map(|i| all[i].clone()).collect())
        }
        DataSource::Directory { path } => {
            let (manifest, triples) = load_patch_dir(path, "train", need_gtp)?;
            if manifest.scale != config.network.scale {
                return Err(Error::data(
                    path,
                    format!("dataset scale {} differs from network scale {}", manifest.scale, config.network.scale),
                ));
            }
            config.check_patch(manifest.p)?;
            if triples.is_empty() {
                return Err(Error::data(path, "train split is empty"));
            }
            Ok(triples)
        }
    }
}

pub struct Trainer {
    config: RunConfig,
    net: CwtNet,
    params: Parameters,
    adam: AdamState,
    step: u64,
    triples: Vec<PatchTriple>,
}

impl Trainer {
    /// Validates the config and loads data; nothing is trained yet.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let net = CwtNet::new(config.network.clone())?;
        let triples = training_triples(&config)?;
        let params = net.init_params();
        let adam = AdamState::new(&params);
        Ok(Trainer { config, net, params, adam, step: 0, triples })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        let net = CwtNet::new(ck.config.network.clone())?;
        let triples = training_triples(&ck.config)?;
        Ok(Trainer {
            config: ck.config,
            net,
            params: ck.params,
            adam: ck.adam,
            step: ck.step,
            triples,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn net(&self) -> &CwtNet {
        &self.net
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    /// Completed steps.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn triples(&self) -> &[PatchTriple] {
        &self.triples
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let c = &self.config;
        let batch = Batch::sample(&self.triples, c.batch_size, c.seed, self.step)?;
        let loss = train_step(
            &self.net,
            &mut self.params,
            &mut self.adam,
            &c.optimizer,
            &c.objective,
            c.network.mode,
            &batch,
        )?;
        self.step += 1;
        Ok(loss)
    }

    /// Metrics of the current parameters on the training triples.
    pub fn evaluate_train(&self) -> Result<Report> {
        evaluate(&self.net, &self.params, self.config.network.mode, &self.triples, None)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            params: self.params.clone(),
            adam: self.adam.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `<out>/last.bin`.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many steps are done.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub last_loss: Option<LossBreakdown>,
    pub final_eval: Option<Report>,
}

/// Exclusive ownership of an output directory; released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCKFILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::usage(format!(
                "{} is owned by another training run (remove {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Keeps rows up to and including `step`, so a resumed run rewrites what follows.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
            Some(s) => s <= step,
            None => line == METRICS_HEADER,
        };
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    std::fs::write(path, kept).map_err(|e| Error::io(path, e))
}

fn open_metrics(path: &Path, resume_step: Option<u64>) -> Result<File> {
    match resume_step {
        Some(step) if path.exists() => truncate_metrics(path, step)?,
        _ => std::fs::write(path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(path, e))?,
    }
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

fn save(trainer: &Trainer, out: &Path, numbered: bool) -> Result<()> {
    let ck = trainer.checkpoint();
    if numbered {
        ck.save(&out.join(checkpoint_name(trainer.steps_done())))?;
    }
    ck.save(&out.join(LAST))
}

/// Trains `config.steps` steps into `out`, writing `metrics.csv` and checkpoints.
pub fn run_train(config: RunConfig, out: &Path, opts: TrainOptions) -> Result<TrainSummary> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = DirLock::acquire(out)?;
    let mut trainer = if opts.resume {
        let ck = Checkpoint::load(&out.join(LAST))?;
        let mut stored = ck.config.clone();
        stored.steps = config.steps;
        if stored != config {
            return Err(Error::config("resume config differs from the checkpoint's beyond the step budget"));
        }
        let mut t = Trainer::from_checkpoint(ck)?;
        t.config.steps = config.steps;
        t
    } else {
        Trainer::new(config)?
    };
    let metrics_path = out.join("metrics.csv");
    let mut metrics = open_metrics(&metrics_path, opts.resume.then(|| trainer.steps_done()))?;
    let total = trainer.config.steps;
    let stop = opts.stop_after.unwrap_or(total).min(total);
    let (eval_every, ckpt_every) = (trainer.config.eval_every, trainer.config.checkpoint_every);
    let mut last_loss = None;
    let mut final_eval = None;
    while trainer.steps_done() < stop {
        let loss = trainer.step()?;
        let step = trainer.steps_done();
        let eval_now = step == total || (eval_every > 0 && step % eval_every == 0);
        let (psnr, ssim) = if eval_now {
            let r = trainer.evaluate_train()?;
            let m = r.mean();
            final_eval = Some(r);
            (format!("{:.4}", m.psnr_db), format!("{:.6}", m.ssim))
        } else {
            (String::new(), String::new())
        };
        writeln!(metrics, "{step},{:.6},{:.6},{:.6},{psnr},{ssim}", loss.total, loss.l_sr, loss.l_wt)
            .map_err(|e| Error::io(&metrics_path, e))?;
        let cadence = ckpt_every > 0 && step % ckpt_every == 0;
        if cadence || step == stop {
            save(&trainer, out, cadence || step == total)?;
        }
        last_loss = Some(loss);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    Ok(TrainSummary { steps: trainer.steps_done(), last_loss, final_eval })
}
