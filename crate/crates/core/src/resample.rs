//! Separable cubic-convolution resampling and depth error metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Keys cubic convolution kernel with sharpness `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicubicKernel {
    pub a: f64,
}

impl Default for BicubicKernel {
    fn default() -> Self {
        Self { a: -0.5 }
    }
}

impl BicubicKernel {
    pub fn eval(&self, x: f64) -> f64 {
        let a = self.a;
        let x = libm::fabs(x);
        if x <= 1.0 {
            ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
        } else if x < 2.0 {
            ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
        } else {
            0.0
        }
    }

    /// Weights of taps `i0-1, i0, i0+1, i0+2` for a sample at `i0 + phase`.
    pub fn weights(&self, phase: f64) -> [f64; 4] {
        [
            self.eval(phase + 1.0),
            self.eval(phase),
            self.eval(1.0 - phase),
            self.eval(2.0 - phase),
        ]
    }
}

/// Resamples every row to `out_len` samples; output sample `i` reads the
/// source at coordinate `src(i)` with replicate edges.
fn resample_rows(
    grid: &Grid,
    out_len: usize,
    kernel: &BicubicKernel,
    src: impl Fn(usize) -> f64,
) -> Grid {
    let (h, w) = grid.dims();
    let taps: Vec<([usize; 4], [f64; 4])> = (0..out_len)
        .map(|i| {
            let s = src(i);
            let base = libm::floor(s);
            let weights = kernel.weights(s - base);
            let base = base as isize;
            let mut idx = [0usize; 4];
            for (k, slot) in idx.iter_mut().enumerate() {
                *slot = (base - 1 + k as isize).clamp(0, w as isize - 1) as usize;
            }
            (idx, weights)
        })
        .collect();
    let mut out = vec![0.0; h * out_len];
    for y in 0..h {
        let row = grid.row(y);
        for (i, (idx, wts)) in taps.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += wts[k] * row[idx[k]];
            }
            out[y * out_len + i] = acc;
        }
    }
    Grid::raw(h, out_len, out)
}

fn separable(
    grid: &Grid,
    out_h: usize,
    out_w: usize,
    kernel: &BicubicKernel,
    src: impl Fn(usize) -> f64 + Copy,
) -> Result<Grid> {
    let rows = resample_rows(grid, out_w, kernel, src);
    let out = resample_rows(&rows.transpose(), out_h, kernel, src).transpose();
    out.ensure_finite("resampled grid")?;
    Ok(out)
}

/// Downsamples by `factor`, sampling the fine grid at coarse cell centers.
pub fn bicubic_down(gt: &Grid, factor: usize) -> Result<Grid> {
    bicubic_down_with(gt, factor, &BicubicKernel::default())
}

pub fn bicubic_down_with(gt: &Grid, factor: usize, kernel: &BicubicKernel) -> Result<Grid> {
    let (h, w) = gt.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Size {
            height: h,
            width: w,
            reason: "dimensions are not divisible by the scale factor",
        });
    }
    let f = factor as f64;
    separable(gt, h / factor, w / factor, kernel, move |j| {
        (j as f64 + 0.5) * f - 0.5
    })
}

/// Upsamples by `factor` with the same kernel and sampling convention.
pub fn bicubic_up(lr: &Grid, factor: usize) -> Result<Grid> {
    bicubic_up_with(lr, factor, &BicubicKernel::default())
}

pub fn bicubic_up_with(lr: &Grid, factor: usize, kernel: &BicubicKernel) -> Result<Grid> {
    let (h, w) = lr.dims();
    let (out_h, out_w) = match (h.checked_mul(factor), w.checked_mul(factor)) {
        (Some(a), Some(b)) if factor >= 1 && a.checked_mul(b).is_some() => (a, b),
        _ => {
            return Err(Error::Size {
                height: h,
                width: w,
                reason: "upsampled size overflows",
            })
        }
    };
    let f = factor as f64;
    separable(lr, out_h, out_w, kernel, move |i| {
        (i as f64 + 0.5) / f - 0.5
    })
}

/// Root mean square error, in the grids' unit (cm).
pub fn rmse_cm(out: &Grid, gt: &Grid) -> Result<f64> {
    out.ensure_same_dims(gt)?;
    let sum: f64 = out
        .values()
        .iter()
        .zip(gt.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(sum / out.len() as f64))
}

/// Mean absolute difference, in the grids' unit (cm).
pub fn mad_cm(out: &Grid, gt: &Grid) -> Result<f64> {
    out.ensure_same_dims(gt)?;
    let sum: f64 = out
        .values()
        .iter()
        .zip(gt.values())
        .map(|(a, b)| libm::fabs(a - b))
        .sum();
    Ok(sum / out.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_phase_weights() {
        let w = BicubicKernel::default().weights(0.5);
        let expected = [-0.0625, 0.5625, 0.5625, -0.0625];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_phase_interpolates() {
        assert_eq!(BicubicKernel::default().weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn factor_one_is_identity() {
        let g = Grid::from_fn(5, 6, |y, x| (y * 6 + x) as f64 * 1.7 - 3.0).unwrap();
        assert_eq!(bicubic_down(&g, 1).unwrap(), g);
        assert_eq!(bicubic_up(&g, 1).unwrap(), g);
    }

    #[test]
    fn constants_stay_constant() {
        let g = Grid::new(8, 12, 37.25).unwrap();
        for f in [2, 4] {
            for v in bicubic_down(&g, f).unwrap().values() {
                assert!((v - 37.25).abs() < 1e-12);
            }
            let up = bicubic_up(&g, f).unwrap();
            assert_eq!(up.dims(), (8 * f, 12 * f));
            for v in up.values() {
                assert!((v - 37.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_is_size_error() {
        let g = Grid::zeros(50, 50).unwrap();
        assert!(matches!(bicubic_down(&g, 4), Err(Error::Size { .. })));
    }

    #[test]
    fn metrics() {
        let gt = Grid::from_fn(3, 4, |y, x| (y + x) as f64).unwrap();
        assert_eq!(rmse_cm(&gt, &gt).unwrap(), 0.0);
        let off = gt.map(|v| v + 2.0).unwrap();
        assert!((rmse_cm(&off, &gt).unwrap() - 2.0).abs() < 1e-12);
        assert!((mad_cm(&off, &gt).unwrap() - 2.0).abs() < 1e-12);
        let checker = Grid::from_fn(3, 4, |y, x| {
            gt.get(y, x) + if (y + x) % 2 == 0 { 1.0 } else { -1.0 }
        })
        .unwrap();
        assert!((rmse_cm(&checker, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert!(rmse_cm(&gt, &Grid::zeros(4, 3).unwrap()).is_err());
    }
}
