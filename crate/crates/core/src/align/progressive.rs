//! Progressive view activation and unseen-object masking.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_assign;
use super::matrix::SquareMatrix;
use super::permutation::Permutation;
use crate::error::{Error, Result};
use crate::image::{LabelMap, SENTINEL_UNLABELED};

/// Views whose segmentation currently supervises the identity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveViewSet {
    pub active: BTreeSet<usize>,
    pub reference_view: usize,
    pub threshold: f64,
}

impl ActiveViewSet {
    pub fn new(reference_view: usize, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::config("activation_threshold", "must lie in (0, 1]"));
        }
        let mut active = BTreeSet::new();
        active.insert(reference_view);
        Ok(ActiveViewSet {
            active,
            reference_view,
            threshold,
        })
    }

    pub fn all(views: usize, reference_view: usize, threshold: f64) -> Result<Self> {
        let mut s = ActiveViewSet::new(reference_view, threshold)?;
        s.active.extend(0..views);
        Ok(s)
    }

    pub fn contains(&self, view: usize) -> bool {
        self.active.contains(&view)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Adds every view scoring strictly above the threshold. Views are never
/// removed. `eligible[v]` can veto a view (used for overlap verification).
pub fn update_active_set(
    state: &ActiveViewSet,
    scores: &[f64],
    eligible: Option<&[bool]>,
) -> ActiveViewSet {
    let mut next = state.clone();
    for (v, &s) in scores.iter().enumerate() {
        let ok = eligible.is_none_or(|e| e.get(v).copied().unwrap_or(false));
        if s > state.threshold && ok {
            next.active.insert(v);
        }
    }
    next
}

fn check_dims(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape("label maps differ in size"));
    }
    Ok(())
}

/// Fraction of jointly labeled pixels where `canonical_to_local` maps the
/// rendered canonical label onto the local label. Zero when no pixel is
/// labeled in both maps.
pub fn permutation_confidence(
    rendered_canonical: &LabelMap,
    local: &LabelMap,
    canonical_to_local: &Permutation,
) -> Result<f64> {
    check_dims(rendered_canonical, local)?;
    let mut joint = 0usize;
    let mut agree = 0usize;
    for (&r, &l) in rendered_canonical.labels.iter().zip(&local.labels) {
        if r == SENTINEL_UNLABELED || l == SENTINEL_UNLABELED {
            continue;
        }
        joint += 1;
        if canonical_to_local.relabel(r) == l {
            agree += 1;
        }
    }
    Ok(if joint == 0 {
        0.0
    } else {
        agree as f64 / joint as f64
    })
}

/// Co-occurrence counts `O[local][canonical]` over jointly labeled pixels.
pub fn overlap_matrix(
    rendered_canonical: &LabelMap,
    local: &LabelMap,
    k: usize,
) -> Result<SquareMatrix> {
    check_dims(rendered_canonical, local)?;
    let mut o = SquareMatrix::zeros(k);
    for (&r, &l) in rendered_canonical.labels.iter().zip(&local.labels) {
        if r == SENTINEL_UNLABELED || l == SENTINEL_UNLABELED {
            continue;
        }
        let (r, l) = (r as usize, l as usize);
        if r < k && l < k {
            o[(l, r)] += 1.0;
        }
    }
    Ok(o)
}

/// Hungarian check: the hardened latent (local → canonical) must equal the
/// overlap-maximizing assignment.
pub fn verify_by_overlap(
    hardened_local_to_canonical: &Permutation,
    overlap: &SquareMatrix,
) -> Result<bool> {
    let best = hungarian_assign(&overlap.scaled(-1.0))?;
    Ok(&best == hardened_local_to_canonical)
}

/// `false` where the permuted rendered label is an instance the local map
/// never shows, `true` elsewhere.
pub fn unseen_mask(
    rendered_canonical: &LabelMap,
    canonical_to_local: &Permutation,
    local: &LabelMap,
) -> Result<Vec<bool>> {
    check_dims(rendered_canonical, local)?;
    let present = local.label_set();
    Ok(rendered_canonical
        .labels
        .iter()
        .map(|&r| {
            if r == SENTINEL_UNLABELED {
                return true;
            }
            present.contains(&canonical_to_local.relabel(r))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn confidence_examples() {
        let a = LabelMap::from_labels(2, 2, vec![0, 1, 1, 0]).unwrap();
        let id = Permutation::identity(2);
        assert_eq!(permutation_confidence(&a, &a, &id).unwrap(), 1.0);

        let r = LabelMap::filled(3, 3, 0);
        let l = LabelMap::filled(3, 3, 1);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(permutation_confidence(&r, &l, &swap).unwrap(), 1.0);

        // 73 of 100 agree
        let r = LabelMap::filled(10, 10, 0);
        let mut l = LabelMap::filled(10, 10, 0);
        for i in 73..100 {
            l.labels[i] = 1;
        }
        assert!((permutation_confidence(&r, &l, &id).unwrap() - 0.73).abs() < 1e-15);

        let none = LabelMap::new(10, 10);
        assert_eq!(permutation_confidence(&none, &l, &id).unwrap(), 0.0);
    }

    #[test]
    fn active_set_threshold_semantics() {
        let s = ActiveViewSet::new(0, 0.9).unwrap();
        assert_eq!(update_active_set(&s, &[0.0; 4], None), s);
        let next = update_active_set(&s, &[0.0, 0.95, 0.9, 0.2], None);
        assert!(next.contains(1));
        assert!(!next.contains(2), "equal to the threshold is not enough");
        assert!(next.contains(0));
        let vetoed =
            update_active_set(&s, &[0.0, 0.95, 0.0, 0.0], Some(&[true, false, true, true]));
        assert!(!vetoed.contains(1));
        // monotone
        let again = update_active_set(&next, &[0.0; 4], None);
        assert!(again.active.is_superset(&next.active));
        assert!(ActiveViewSet::new(0, 0.0).is_err());
    }

    #[test]
    fn unseen_mask_examples() {
        let rendered = LabelMap::from_labels(4, 1, vec![0, 1, 2, SENTINEL_UNLABELED]).unwrap();
        let local = LabelMap::from_labels(4, 1, vec![2, 1, 0, 0]).unwrap();
        let id = Permutation::identity(4);
        assert!(unseen_mask(&rendered, &id, &local)
            .unwrap()
            .iter()
            .all(|m| *m));

        let rendered = LabelMap::from_labels(4, 1, vec![3, 3, 0, 1]).unwrap();
        let local = LabelMap::from_labels(4, 1, vec![0, 1, 2, SENTINEL_UNLABELED]).unwrap();
        let perm = Permutation::new(vec![1, 0, 2, 3]).unwrap();
        let mask = unseen_mask(&rendered, &perm, &local).unwrap();
        assert_eq!(mask, vec![false, false, true, true]);
    }

    #[test]
    fn overlap_verification() {
        let rendered = LabelMap::from_labels(4, 1, vec![0, 0, 1, 1]).unwrap();
        let local = LabelMap::from_labels(4, 1, vec![1, 1, 0, 0]).unwrap();
        let o = overlap_matrix(&rendered, &local, 2).unwrap();
        assert_eq!(o.data, vec![0.0, 2.0, 2.0, 0.0]);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert!(verify_by_overlap(&swap, &o).unwrap());
        assert!(!verify_by_overlap(&Permutation::identity(2), &o).unwrap());
    }
}
