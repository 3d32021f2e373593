//! Cross-view label alignment.
//!
//! Every video `v` owns a latent `Z_v`; `S_v = sinkhorn(Z_v)` maps canonical
//! instance logits to that video's local ids (`local = S_v · canonical`, so
//! `S_v[local][canonical]`). Views join identity-field supervision once
//! their hardened permutation explains the rendered labels well enough.

pub mod decoder;
pub mod hungarian;
pub mod loss;
pub mod matrix;
pub mod permutation;
pub mod progressive;
pub mod remap;
pub mod sinkhorn;

pub use decoder::{
    argmax_label, DecoderCache, DecoderGrads, IdentityDecoder, FEATURE_DIM, HIDDEN_DIM,
};
pub use hungarian::{assignment_cost, hungarian_assign};
pub use loss::{instance_ce_loss, softmax_in_place, CeLoss};
pub use matrix::SquareMatrix;
pub use permutation::Permutation;
pub use progressive::{
    overlap_matrix, permutation_confidence, unseen_mask, update_active_set, verify_by_overlap,
    ActiveViewSet,
};
pub use remap::{remap_logits, remap_logits_backward};
pub use sinkhorn::{
    harden, sinkhorn_backward, sinkhorn_normalize, PermutationLatent, SoftPermutation, LATENT_CLIP,
    SINKHORN_ITERS,
};
