//! Canonical → local logit remapping, `local[a] = Σ_b S[a][b] canonical[b]`
//! over the `K` instance channels. The trailing background channel passes
//! through unpermuted.

use super::matrix::SquareMatrix;
use crate::error::{Error, Result};
use crate::image::FeatureMap;

fn check(s: &SquareMatrix, logits: &FeatureMap) -> Result<usize> {
    let k = s.n;
    if logits.channels != k + 1 {
        return Err(Error::shape("logit channels must equal K + 1"));
    }
    Ok(k)
}

pub fn remap_logits(s: &SquareMatrix, canonical: &FeatureMap) -> Result<FeatureMap> {
    let k = check(s, canonical)?;
    let mut out = FeatureMap::new(canonical.width, canonical.height, k + 1);
    for p in 0..canonical.pixel_count() {
        let src = canonical.pixel(p);
        let dst = out.pixel_mut(p);
        for a in 0..k {
            let row = s.row(a);
            dst[a] = row.iter().zip(&src[..k]).map(|(w, x)| w * x).sum();
        }
        dst[k] = src[k];
    }
    Ok(out)
}

/// Returns `(dL/dcanonical, dL/dS)` given `dL/dlocal`. The canonical
/// gradient is skipped when `want_logit_grad` is false.
pub fn remap_logits_backward(
    s: &SquareMatrix,
    canonical: &FeatureMap,
    grad_local: &FeatureMap,
    want_logit_grad: bool,
) -> Result<(Option<FeatureMap>, SquareMatrix)> {
    let k = check(s, canonical)?;
    if grad_local.channels != k + 1 || grad_local.pixel_count() != canonical.pixel_count() {
        return Err(Error::shape("gradient shape differs from logits"));
    }
    let mut ds = SquareMatrix::zeros(k);
    let mut dcanon =
        want_logit_grad.then(|| FeatureMap::new(canonical.width, canonical.height, k + 1));
    for p in 0..canonical.pixel_count() {
        let x = canonical.pixel(p);
        let g = grad_local.pixel(p);
        for a in 0..k {
            if g[a] == 0.0 {
                continue;
            }
            for b in 0..k {
                ds[(a, b)] += g[a] * x[b];
            }
        }
        if let Some(dc) = dcanon.as_mut() {
            let d = dc.pixel_mut(p);
            for b in 0..k {
                d[b] = (0..k).map(|a| s[(a, b)] * g[a]).sum();
            }
            d[k] = g[k];
        }
    }
    Ok((dcanon, ds))
}
