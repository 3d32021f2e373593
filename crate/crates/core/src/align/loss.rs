//! Softmax cross-entropy against a view's label map.

use crate::error::{Error, Result};
use crate::image::{FeatureMap, LabelMap, SENTINEL_UNLABELED};
use num_traits::Float;

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[derive(Debug, Clone)]
pub struct CeLoss {
    pub loss: f64,
    /// `dL/dlogits`, same layout as the logits.
    pub grad: FeatureMap,
    pub supervised: usize,
    /// Raised when no pixel was supervised.
    pub empty: bool,
}

/// Class index supervised by a label value: instance ids map to their own
/// channel and unlabeled pixels to the background channel `K`.
pub fn target_class(label: u8, k: usize) -> usize {
    if label == SENTINEL_UNLABELED {
        k
    } else {
        label as usize
    }
}

/// Mean of `-ln softmax(logits)[target]` over pixels with `mask` set.
/// Unlabeled pixels are supervised as background.
pub fn instance_ce_loss(logits: &FeatureMap, labels: &LabelMap, mask: &[bool]) -> Result<CeLoss> {
    let n = logits.pixel_count();
    if labels.len() != n || mask.len() != n {
        return Err(Error::shape("logits, labels and mask differ in size"));
    }
    if logits.channels < 2 {
        return Err(Error::shape(
            "need at least one instance and the background channel",
        ));
    }
    let k = logits.channels - 1;
    let mut grad = FeatureMap::new(logits.width, logits.height, logits.channels);
    let supervised = mask.iter().filter(|m| **m).count();
    if supervised == 0 {
        return Ok(CeLoss {
            loss: 0.0,
            grad,
            supervised: 0,
            empty: true,
        });
    }
    let inv = 1.0 / supervised as f64;
    let mut loss = 0.0;
    for p in 0..n {
        if !mask[p] {
            continue;
        }
        let target = target_class(labels.labels[p], k);
        if target > k {
            return Err(Error::shape("label exceeds logit channels"));
        }
        let g = grad.pixel_mut(p);
        g.copy_from_slice(logits.pixel(p));
        softmax_in_place(g);
        loss -= g[target].max(1e-300).ln();
        g[target] -= 1.0;
        for v in g.iter_mut() {
            *v *= inv;
        }
    }
    Ok(CeLoss {
        loss: loss * inv,
        grad,
        supervised,
        empty: false,
    })
}
