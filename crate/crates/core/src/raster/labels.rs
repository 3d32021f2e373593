use alloc::vec::Vec;

use crate::align::{argmax_label, harden, IdentityDecoder, Permutation, SoftPermutation};
use crate::error::{Error, Result};
use crate::image::{FeatureMap, LabelMap, SENTINEL_UNLABELED};

/// Per-pixel argmax over `K + 1` logit channels. The background channel
/// (last) maps to the sentinel; instance ids pass through
/// `canonical_to_local` when given.
pub fn labels_from_logits(
    logits: &FeatureMap,
    canonical_to_local: Option<&Permutation>,
) -> Result<LabelMap> {
    if logits.channels < 1 {
        return Err(Error::shape("logit map has no channels"));
    }
    let k = logits.channels - 1;
    if let Some(p) = canonical_to_local {
        if p.len() != k {
            return Err(Error::shape("permutation size differs from instance count"));
        }
    }
    let labels: Vec<u8> = (0..logits.pixel_count())
        .map(|p| {
            let c = argmax_label(logits.pixel(p));
            if c == k {
                SENTINEL_UNLABELED
            } else {
                canonical_to_local.map_or(c, |perm| perm.apply(c)) as u8
            }
        })
        .collect();
    LabelMap::from_labels(logits.width, logits.height, labels)
}

/// Decodes a rendered feature map to labels, optionally in a video's local
/// label space given its soft permutation.
pub fn render_label_map(
    features: &FeatureMap,
    decoder: &IdentityDecoder,
    soft: Option<&SoftPermutation>,
) -> Result<LabelMap> {
    let (logits, _) = decoder.forward(features)?;
    let perm = soft.map(|s| harden(s).map(|p| p.inverse())).transpose()?;
    labels_from_logits(&logits, perm.as_ref())
}
