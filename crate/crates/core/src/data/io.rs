use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::triple::{split_indices, PatchTriple};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

pub const MANIFEST: &str = "manifest.json";
const GT: &str = "gt.png";
const GT_PRIME: &str = "gtp.png";
const LR: &str = "lr.png";

/// Dataset-level metadata stored next to the split directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scale: usize,
    pub p: usize,
    /// `[lv_gt, lv_gt', lv_lr]`.
    pub levels: [u32; 3],
    pub means: [f64; 3],
    pub seed: u64,
    pub train: usize,
    pub test: usize,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(&path, e.to_string()))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::data(&path, e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Writes a `(1, 3, h, w)` tensor as 8-bit RGB, values clamped to `[0, 1]`.
pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("save_png", format!("expected 1x3xHxW, got {s}")));
    }
    let mut img = image::RgbImage::new(s.w as u32, s.h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = t.at(0, c, y as usize, x as usize).clamp(0.0, 1.0);
            px[c] = (v * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(|e| Error::data(path, e.to_string()))
}

/// Reads an image as a `(1, 3, h, w)` tensor with values `k / 255`.
pub fn load_png(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    let img = image::open(path).map_err(|e| Error::data(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape4::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

pub fn save_triple(t: &PatchTriple, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png(&t.i_gt, &dir.join(GT))?;
    if let Some(g) = &t.i_gt_prime {
        save_png(g, &dir.join(GT_PRIME))?;
    }
    save_png(&t.i_lr, &dir.join(LR))
}

/// Writes `triples` under `<root>/{train,test}/<id>/` with a 5:1 split and a manifest.
pub fn save_dataset(root: &Path, triples: &[PatchTriple], scale: usize, p: usize, seed: u64) -> Result<Manifest> {
    let (train, test) = split_indices(triples.len(), seed);
    for (split, idx) in [("train", &train), ("test", &test)] {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for &i in idx.iter() {
            save_triple(&triples[i], &dir.join(format!("{i:04}")))?;
        }
    }
    let manifest = Manifest {
        scale,
        p,
        levels: PatchTriple::levels_for_scale(scale),
        means: crate::blocks::RGB_MEANS,
        seed,
        train: train.len(),
        test: test.len(),
    };
    manifest.write(root)?;
    Ok(manifest)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.path().is_dir() {
            out.push(e.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every triple of `<root>/<split>`. Without `require_gt_prime` a
/// missing `gtp.png` is tolerated.
pub fn load_patch_dir(root: &Path, split: &str, require_gt_prime: bool) -> Result<(Manifest, Vec<PatchTriple>)> {
    let manifest = Manifest::read(root)?;
    let scale = manifest.scale;
    let mut triples = Vec::new();
    for dir in sorted_dirs(&root.join(split))? {
        let gt_path = dir.join(GT);
        let lr_path = dir.join(LR);
        let gtp_path = dir.join(GT_PRIME);
        for (path, name) in [(&gt_path, GT), (&lr_path, LR)] {
            if !path.exists() {
                return Err(Error::data(path.as_path(), format!("triple is missing {name}")));
            }
        }
        let i_gt = load_png(&gt_path)?;
        let i_lr = load_png(&lr_path)?;
        let i_gt_prime = if gtp_path.exists() {
            Some(load_png(&gtp_path)?)
        } else if require_gt_prime {
            return Err(Error::data(&gtp_path, format!("triple is missing {GT_PRIME}")));
        } else {
            None
        };
        let (l, g) = (i_lr.shape(), i_gt.shape());
        if g.h != l.h * scale || g.w != l.w * scale {
            return Err(Error::data(
                &gt_path,
                format!("{GT} is {}x{} but {LR} is {}x{} at manifest scale {scale}", g.h, g.w, l.h, l.w),
            ));
        }
        if let Some(gp) = &i_gt_prime {
            let s = gp.shape();
            if s.h != 2 * l.h || s.w != 2 * l.w {
                return Err(Error::data(
                    &gtp_path,
                    format!("{GT_PRIME} is {}x{}, expected twice {LR} ({}x{})", s.h, s.w, l.h, l.w),
                ));
            }
        }
        triples.push(PatchTriple {
            i_gt,
            i_gt_prime,
            i_lr,
            levels: manifest.levels,
            center: (0, 0),
        });
    }
    Ok((manifest, triples))
}
