//! PSNR/SSIM reports against a bicubic baseline, plus comparison grids.

use std::fmt::Write as _;
use std::path::Path;

use cwtnet_core::data::{save_png, PatchTriple};
use cwtnet_core::metrics::{format_psnr, psnr, ssim};
use cwtnet_core::ops::resize_bicubic;
use cwtnet_core::{CwtNet, Error, Mode, Parameters, Result, Shape4, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub psnr_db: f64,
    pub ssim: f64,
    pub bicubic_psnr_db: f64,
    pub bicubic_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<Row>,
}

impl Report {
    /// Mean of each column; infinite PSNR stays infinite.
    pub fn mean(&self) -> Row {
        let n = self.rows.len().max(1) as f64;
        let avg = |f: fn(&Row) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Row {
            psnr_db: avg(|r| r.psnr_db),
            ssim: avg(|r| r.ssim),
            bicubic_psnr_db: avg(|r| r.bicubic_psnr_db),
            bicubic_ssim: avg(|r| r.bicubic_ssim),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim\n");
        let line = |s: &mut String, label: &str, r: &Row| {
            writeln!(
                s,
                "{label},{},{:.6},{},{:.6}",
                format_psnr(r.psnr_db),
                r.ssim,
                format_psnr(r.bicubic_psnr_db),
                r.bicubic_ssim
            )
            .expect("write to string");
        };
        for (i, r) in self.rows.iter().enumerate() {
            line(&mut s, &format!("{i:04}"), r);
        }
        line(&mut s, "mean", &self.mean());
        s
    }
}

/// The WT-branch input a mode consumes from a triple.
pub fn wt_input(mode: Mode, t: &PatchTriple) -> Result<Option<&Tensor>> {
    match mode {
        Mode::CrossScale => t
            .i_gt_prime
            .as_ref()
            .map(Some)
            .ok_or_else(|| Error::usage("cross-scale mode needs gtp.png for every image")),
        Mode::WrTest | Mode::Sisr => Ok(None),
    }
}

/// One row per triple; when `grids` is set a `LR | bicubic | SR | GT` PNG is written per triple.
pub fn evaluate(net: &CwtNet, params: &Parameters, mode: Mode, triples: &[PatchTriple], grids: Option<&Path>) -> Result<Report> {
    let scale = net.config().scale;
    if let Some(dir) = grids {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut report = Report::default();
    for (i, t) in triples.iter().enumerate() {
        let (sr, _) = net.infer(params, mode, &t.i_lr, wt_input(mode, t)?)?;
        let bic = resize_bicubic(&t.i_lr, scale as f64)?.map(|v| v.clamp(0.0, 1.0));
        let sr = sr.map(|v| v.clamp(0.0, 1.0));
        report.rows.push(Row {
            psnr_db: psnr(&sr, &t.i_gt)?,
            ssim: ssim(&sr, &t.i_gt)? as f64,
            bicubic_psnr_db: psnr(&bic, &t.i_gt)?,
            bicubic_ssim: ssim(&bic, &t.i_gt)? as f64,
        });
        if let Some(dir) = grids {
            let lr = nearest_up(&t.i_lr, scale);
            save_png(&hconcat(&[&lr, &bic, &sr, &t.i_gt])?, &dir.join(format!("{i:04}.png")))?;
        }
    }
    Ok(report)
}

fn nearest_up(x: &Tensor, s: usize) -> Tensor {
    let sh = x.shape();
    Tensor::from_fn(Shape4::new(sh.n, sh.c, sh.h * s, sh.w * s), |n, c, y, xx| x.at(n, c, y / s, xx / s))
}

fn hconcat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0].shape();
    for p in parts {
        if p.shape() != first {
            return Err(Error::mismatch("grid", first, p.shape()));
        }
    }
    let w = first.w;
    Ok(Tensor::from_fn(first.with_hw(first.h, w * parts.len()), |n, c, y, x| {
        parts[x / w].at(n, c, y, x % w)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_bicubic_columns_and_mean() {
        let r = Report {
            rows: vec![Row { psnr_db: f64::INFINITY, ssim: 1.0, bicubic_psnr_db: 20.0, bicubic_ssim: 0.5 }],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("image,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim\n"));
        assert!(csv.contains("\nmean,"));
        assert_eq!(r.mean().bicubic_psnr_db, 20.0);
    }

    #[test]
    fn grid_places_panels_left_to_right() {
        let a = Tensor::full(Shape4::new(1, 3, 2, 2), 0.0);
        let b = Tensor::full(Shape4::new(1, 3, 2, 2), 1.0);
        let g = hconcat(&[&a, &b]).unwrap();
        assert_eq!(g.shape(), Shape4::new(1, 3, 2, 4));
        assert_eq!((g.at(0, 0, 1, 1), g.at(0, 0, 1, 2)), (0.0, 1.0));
    }
}
