use serde::{Deserialize, Serialize};

use crate::blocks::RGB_MEANS;
use crate::error::{Error, Result};
use crate::ops::resize_bicubic;
use crate::rng::SeededRng;
use crate::tensor::{Shape4, Tensor};

/// How coarser levels are derived from the base level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PyramidStyle {
    /// 2x2 area averaging, as a scanner samples coarser levels.
    #[default]
    AreaAverage,
    /// Bicubic half-size resampling of the previous level.
    Bicubic,
}

/// Image levels, level `k` at `1/2^k` of the base resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<Tensor>,
    pub microns_per_pixel: Vec<f64>,
}

const BASE_MICRONS: f64 = 0.25;

fn area_half(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let out = s.with_hw(s.h / 2, s.w / 2);
    let mut data = Vec::with_capacity(out.numel());
    for plane in x.data().chunks_exact(s.plane()) {
        for y in 0..out.h {
            let r0 = &plane[2 * y * s.w..];
            let r1 = &plane[(2 * y + 1) * s.w..];
            for xx in 0..out.w {
                let sum = r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
                data.push(sum * 0.25);
            }
        }
    }
    Tensor::from_vec(out, data)
}

struct Cell {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    nucleus: f64,
    shade: f64,
}

/// Procedural tissue-like texture: cells with thin dark membranes and
/// nuclei over a smooth stroma background. Deterministic per seed.
fn base_image(rng: &mut SeededRng, size: usize) -> Tensor {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let f = rng.uniform_in(0.5, 2.5) / size as f64;
            let a = rng.uniform_in(0.0, std::f64::consts::TAU);
            (f * a.cos(), f * a.sin(), rng.uniform_in(0.0, std::f64::consts::TAU), rng.uniform_in(0.02, 0.06))
        })
        .collect();
    let area = (size * size) as f64;
    let count = (area / 160.0).ceil() as usize;
    let cells: Vec<Cell> = (0..count)
        .map(|_| {
            let a = rng.uniform_in(0.0, std::f64::consts::PI);
            Cell {
                cy: rng.uniform_in(0.0, size as f64),
                cx: rng.uniform_in(0.0, size as f64),
                ry: rng.uniform_in(3.0, 8.0),
                rx: rng.uniform_in(3.0, 8.0),
                cos: a.cos(),
                sin: a.sin(),
                nucleus: rng.uniform_in(0.25, 0.5),
                shade: rng.uniform_in(-0.08, 0.08),
            }
        })
        .collect();
    let stroma = [0.93, 0.62, 0.80];
    let cytoplasm = [0.80, 0.45, 0.70];
    let membrane = [0.35, 0.12, 0.40];
    let nucleus = [0.30, 0.18, 0.55];
    let mut bg = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            bg[y * size + x] = waves
                .iter()
                .map(|(ky, kx, ph, amp)| amp * (std::f64::consts::TAU * (ky * fy + kx * fx) + ph).sin())
                .sum();
        }
    }
    let mut pix: Vec<[f64; 3]> = bg.iter().map(|&b| stroma.map(|v| v + b)).collect();
    // later cells paint over earlier ones
    for cell in &cells {
        let reach = cell.rx.max(cell.ry).ceil() as isize + 1;
        let (cy, cx) = (cell.cy as isize, cell.cx as isize);
        for y in (cy - reach).max(0)..(cy + reach + 1).min(size as isize) {
            for x in (cx - reach).max(0)..(cx + reach + 1).min(size as isize) {
                let (dy, dx) = (y as f64 + 0.5 - cell.cy, x as f64 + 0.5 - cell.cx);
                let u = (dx * cell.cos + dy * cell.sin) / cell.rx;
                let v = (-dx * cell.sin + dy * cell.cos) / cell.ry;
                let r = (u * u + v * v).sqrt();
                if r > 1.0 {
                    continue;
                }
                let i = y as usize * size + x as usize;
                let rim = 1.0 - 1.2 / cell.rx.min(cell.ry);
                pix[i] = if r > rim {
                    membrane
                } else if r < cell.nucleus {
                    nucleus.map(|v| v + cell.shade)
                } else {
                    cytoplasm.map(|v| v + cell.shade + bg[i])
                };
            }
        }
    }
    let shape = Shape4::new(1, 3, size, size);
    let mut t = Tensor::from_fn(shape, |_, c, y, x| pix[y * size + x][c] as f32);
    steer_means(&mut t, &RGB_MEANS);
    t
}

/// Shifts channel means toward `means`, then clamps to `[0, 1]`.
fn steer_means(t: &mut Tensor, means: &[f64; 3]) {
    let plane = t.shape().plane();
    for (c, p) in t.data_mut().chunks_exact_mut(plane).enumerate() {
        let m: f64 = p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let d = (means[c] - m) as f32;
        p.iter_mut().for_each(|v| *v = (*v + d).clamp(0.0, 1.0));
    }
}

/// Pyramid with `levels` levels whose base is `base_size` square.
pub fn synth_pyramid(seed: u64, base_size: usize, levels: usize, style: PyramidStyle) -> Result<Pyramid> {
    if base_size == 0 || !base_size.is_multiple_of(8) {
        return Err(Error::config(format!("base size {base_size} must be a positive multiple of 8")));
    }
    if levels == 0 || base_size >> (levels - 1) == 0 || (levels > 1 && !(base_size >> (levels - 2)).is_multiple_of(2)) {
        return Err(Error::config(format!("{levels} levels do not fit base size {base_size}")));
    }
    let mut rng = SeededRng::stream(seed, crate::rng::streams::SYNTH);
    let mut out = vec![base_image(&mut rng, base_size)];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let next = match style {
            PyramidStyle::AreaAverage => area_half(prev)?,
            PyramidStyle::Bicubic => resize_bicubic(prev, 0.5)?.map(|v| v.clamp(0.0, 1.0)),
        };
        out.push(next);
    }
    let microns_per_pixel = (0..levels).map(|k| BASE_MICRONS * (1u64 << k) as f64).collect();
    Ok(Pyramid {
        levels: out,
        microns_per_pixel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_area_averaged() {
        let a = synth_pyramid(5, 64, 3, PyramidStyle::AreaAverage).unwrap();
        let b = synth_pyramid(5, 64, 3, PyramidStyle::AreaAverage).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.levels[1].shape(), Shape4::new(1, 3, 32, 32));
        assert_eq!(a.levels[2].shape(), Shape4::new(1, 3, 16, 16));
        assert_eq!(a.microns_per_pixel, vec![0.25, 0.5, 1.0]);
        let (l0, l1) = (&a.levels[0], &a.levels[1]);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let m = 0.25
                        * (l0.at(0, c, 2 * y, 2 * x)
                            + l0.at(0, c, 2 * y, 2 * x + 1)
                            + l0.at(0, c, 2 * y + 1, 2 * x)
                            + l0.at(0, c, 2 * y + 1, 2 * x + 1));
                    assert_eq!(l1.at(0, c, y, x), m);
                }
            }
        }
        let mean = |t: &Tensor| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        assert!((mean(l0) - mean(l1)).abs() < 1e-6);
        assert!(l0.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn means_are_steered() {
        let p = synth_pyramid(1, 128, 1, PyramidStyle::AreaAverage).unwrap();
        let plane = 128 * 128;
        for (c, chunk) in p.levels[0].data().chunks_exact(plane).enumerate() {
            let m = chunk.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            assert!((m - RGB_MEANS[c]).abs() < 0.03, "channel {c} mean {m}");
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(synth_pyramid(0, 60, 2, PyramidStyle::AreaAverage), Err(Error::Config(_))));
        assert!(synth_pyramid(0, 8, 5, PyramidStyle::AreaAverage).is_err());
        assert_eq!(synth_pyramid(0, 32, 2, PyramidStyle::Bicubic).unwrap().levels[1].shape().h, 16);
    }
}
