use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cwtnet_cli::commands::{self, InferOptions};
use cwtnet_cli::run::{run_train, TrainOptions};
use cwtnet_cli::{exit_code, RunConfig};
use cwtnet_core::data::PyramidStyle;
use cwtnet_core::metrics::format_psnr;
use cwtnet_core::{Error, LossKind, Mode, OptStrategy, Result};

#[derive(Parser)]
#[command(name = "cwtnet", version, about = "Cross-scale wavelet super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset of patch triples with a 5:1 train/test split.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        /// LR patch size.
        #[arg(long, default_value_t = 32)]
        p: usize,
        #[arg(long, value_enum, default_value_t = Style::Area)]
        style: Style,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network, writing metrics.csv and checkpoints into --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, required_unless_present = "emit_default_config")]
        out: Option<PathBuf>,
        /// Continue from <out>/last.bin.
        #[arg(long)]
        resume: bool,
        /// Stop after this many completed steps, leaving a resumable checkpoint.
        #[arg(long, hide = true)]
        stop_after: Option<u64>,
        /// Print the resolved configuration as JSON and exit.
        #[arg(long)]
        emit_default_config: bool,
    },
    /// Report PSNR/SSIM of a checkpoint against a bicubic baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to the checkpoint's training mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for LR | bicubic | SR | GT comparison PNGs.
        #[arg(long)]
        grids: Option<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Super-resolve one PNG.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint's training mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Cross-scale image (twice the input size) for cross-scale mode.
        #[arg(long)]
        wt_input: Option<PathBuf>,
        /// Trim odd dimensions by one pixel instead of failing.
        #[arg(long)]
        crop_odd: bool,
    },
    /// Finite-difference check of every block and a one-block network.
    Gradcheck {
        /// Take the seed from this run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        mutate_haar: bool,
    },
    /// Train and evaluate the four component-ablation rows.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    opt: Option<OptStrategy>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::preset(&self.preset)?,
        };
        if let Some(m) = self.mode {
            cfg.network.mode = m;
        }
        if let Some(l) = self.loss {
            cfg.objective.loss = l;
        }
        if let Some(o) = self.opt {
            cfg.objective.strategy = o;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Area,
    Bicubic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth { seed, count, scale, p, style, out } => {
            let style = match style {
                Style::Area => PyramidStyle::AreaAverage,
                Style::Bicubic => PyramidStyle::Bicubic,
            };
            let m = commands::synth(seed, count, scale, p, style, &out)?;
            println!("wrote {} train / {} test triples to {}", m.train, m.test, out.display());
        }
        Command::Train { cfg, out, resume, stop_after, emit_default_config } => {
            let cfg = cfg.resolve()?;
            if emit_default_config {
                println!("{}", cfg.to_json());
                return Ok(ExitCode::SUCCESS);
            }
            let out = out.ok_or_else(|| Error::usage("--out is required"))?;
            let summary = run_train(cfg, &out, TrainOptions { resume, stop_after })?;
            if let Some(l) = summary.last_loss {
                println!("step {} L {:.6} L_SR {:.6} L_WT {:.6}", summary.steps, l.total, l.l_sr, l.l_wt);
            }
            if let Some(r) = summary.final_eval {
                let m = r.mean();
                println!(
                    "train psnr {} dB (bicubic {}) ssim {:.4} (bicubic {:.4})",
                    format_psnr(m.psnr_db),
                    format_psnr(m.bicubic_psnr_db),
                    m.ssim,
                    m.bicubic_ssim
                );
            }
        }
        Command::Eval { ckpt, data, split, mode, grids, csv } => {
            let report = commands::eval(&ckpt, &data, &split, mode, grids.as_deref())?;
            let text = report.to_csv();
            print!("{text}");
            if let Some(path) = csv {
                write(&path, &text)?;
            }
        }
        Command::Infer { ckpt, input, out, mode, wt_input, crop_odd } => {
            let opts = InferOptions { mode, wt_input: wt_input.as_deref(), crop_odd };
            for w in commands::infer(&ckpt, &input, &out, &opts)? {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", out.display());
        }
        Command::Gradcheck { config, seed, mutate_haar } => {
            let seed = match config {
                Some(path) => RunConfig::load(&path)?.seed,
                None => seed,
            };
            let reports = commands::gradcheck(seed, mutate_haar)?;
            for r in &reports {
                println!("{r}");
            }
            if !reports.iter().all(|r| r.ok()) {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(4));
            }
        }
        Command::Ablate { cfg, out } => {
            let rows = commands::ablate(&cfg.resolve()?, &out)?;
            let mut csv = String::from("row,parameters,L,psnr_db,ssim,bicubic_psnr_db\n");
            for row in &rows {
                let l = row.summary.last_loss.map(|l| l.total).unwrap_or(f64::NAN);
                let m = row.summary.final_eval.as_ref().map(|r| r.mean());
                let (p, s, b) = m.map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.psnr_db, m.ssim, m.bicubic_psnr_db));
                csv.push_str(&format!(
                    "{},{},{l:.6},{},{s:.6},{}\n",
                    row.name,
                    row.parameters,
                    format_psnr(p),
                    format_psnr(b)
                ));
            }
            print!("{csv}");
            write(&out.join("ablation.csv"), &csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
