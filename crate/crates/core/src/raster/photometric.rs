//! L1 and SSIM photometric losses with their image gradients.
//!
//! SSIM uses an 11x11 separable Gaussian window (σ = 1.5). Near the border
//! the window is truncated and renormalized, so edge pixels are not pulled
//! toward zero by padding.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use num_traits::Float;

const WINDOW_RADIUS: usize = 5;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricLoss {
    pub loss: f64,
    /// `dL/dI`.
    pub grad: Image,
}

fn check(i: &Image, gt: &Image) -> Result<()> {
    if !i.same_shape(gt) {
        return Err(Error::shape("rendered and target images differ in size"));
    }
    if i.data.is_empty() {
        return Err(Error::shape("empty image"));
    }
    Ok(())
}

/// Mean absolute channel difference.
pub fn l1_loss(i: &Image, gt: &Image) -> Result<PhotometricLoss> {
    check(i, gt)?;
    let n = i.data.len() as f64;
    let mut grad = Image::new(i.width, i.height);
    let mut total = 0.0;
    for ((g, a), b) in grad.data.iter_mut().zip(&i.data).zip(&gt.data) {
        let d = a - b;
        total += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok(PhotometricLoss {
        loss: total / n,
        grad,
    })
}

fn window() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut w = [0.0; 2 * WINDOW_RADIUS + 1];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Single-channel plane with a separable, border-renormalized blur and its
/// adjoint.
struct Blur {
    w: usize,
    h: usize,
    kernel: [f64; 2 * WINDOW_RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Blur {
    fn new(w: usize, h: usize) -> Self {
        let kernel = window();
        let norms = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|i| {
                    let lo = i.saturating_sub(WINDOW_RADIUS);
                    let hi = (i + WINDOW_RADIUS).min(len - 1);
                    (lo..=hi).map(|j| kernel[j + WINDOW_RADIUS - i]).sum()
                })
                .collect()
        };
        Blur {
            w,
            h,
            kernel,
            norm_x: norms(w),
            norm_y: norms(h),
        }
    }

    /// One 1D pass along x or y. The adjoint divides by the norm before
    /// spreading instead of after gathering.
    fn pass(&self, src: &[f64], along_x: bool, adjoint: bool) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let (len, norm) = if along_x {
            (w, &self.norm_x)
        } else {
            (h, &self.norm_y)
        };
        let mut out = vec![0.0; src.len()];
        let idx = |line: usize, i: usize| if along_x { line * w + i } else { i * w + line };
        let lines = if along_x { h } else { w };
        for line in 0..lines {
            for i in 0..len {
                let lo = i.saturating_sub(WINDOW_RADIUS);
                let hi = (i + WINDOW_RADIUS).min(len - 1);
                let mut acc = 0.0;
                for j in lo..=hi {
                    let k = self.kernel[j + WINDOW_RADIUS - i];
                    acc += if adjoint {
                        k * src[idx(line, j)] / norm[j]
                    } else {
                        k * src[idx(line, j)]
                    };
                }
                out[idx(line, i)] = if adjoint { acc } else { acc / norm[i] };
            }
        }
        out
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        self.pass(&self.pass(src, true, false), false, false)
    }

    fn adjoint(&self, src: &[f64]) -> Vec<f64> {
        self.pass(&self.pass(src, false, true), true, true)
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels, with `dSSIM/dI` when requested.
fn ssim_inner(i: &Image, gt: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    check(i, gt)?;
    let (w, h) = (i.width, i.height);
    let npix = w * h;
    let blur = Blur::new(w, h);
    let count = (npix * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));
    for c in 0..3 {
        let x = channel(i, c);
        let y = channel(gt, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = blur.apply(&x);
        let my = blur.apply(&y);
        let exx = blur.apply(&xx);
        let eyy = blur.apply(&yy);
        let exy = blur.apply(&xy);
        let mut g_mu = vec![0.0; npix];
        let mut g_xx = vec![0.0; npix];
        let mut g_xy = vec![0.0; npix];
        for p in 0..npix {
            let sxx = exx[p] - mx[p] * mx[p];
            let syy = eyy[p] - my[p] * my[p];
            let sxy = exy[p] - mx[p] * my[p];
            let a1 = 2.0 * mx[p] * my[p] + C1;
            let a2 = 2.0 * sxy + C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let b2 = sxx + syy + C2;
            let den = b1 * b2;
            let s = a1 * a2 / den;
            total += s;
            if want_grad {
                let da1 = 2.0 * my[p];
                let da2 = -2.0 * my[p];
                let db1 = 2.0 * mx[p];
                let db2 = -2.0 * mx[p];
                let scale = 1.0 / count;
                g_mu[p] = scale * ((da1 * a2 + a1 * da2) / den - s * (db1 * b2 + b1 * db2) / den);
                g_xx[p] = scale * (-s / b2);
                g_xy[p] = scale * (2.0 * a1 / den);
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur.adjoint(&g_mu);
            let t_xx = blur.adjoint(&g_xx);
            let t_xy = blur.adjoint(&g_xy);
            for p in 0..npix {
                g.data[p * 3 + c] = t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p];
            }
        }
    }
    Ok((total / count, grad))
}

pub fn ssim(i: &Image, gt: &Image) -> Result<f64> {
    Ok(ssim_inner(i, gt, false)?.0)
}

/// `1 - SSIM`.
pub fn ssim_loss(i: &Image, gt: &Image) -> Result<PhotometricLoss> {
    let (s, g) = ssim_inner(i, gt, true)?;
    let mut grad = g.expect("gradient requested");
    grad.data.iter_mut().for_each(|v| *v = -*v);
    Ok(PhotometricLoss {
        loss: 1.0 - s,
        grad,
    })
}
