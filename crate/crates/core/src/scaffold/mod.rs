//! Per-instance motion bases that carry Gaussians through time.
//!
//! Bases are sampled from each dynamic instance's Gaussians at `t = 0`.
//! Every dynamic Gaussian attaches to its nearest same-instance bases and
//! follows the dual-quaternion blend of their motion since `t = 0`.

mod bases;
mod blend;
mod rigidity;

pub use bases::{
    attach, base_graph, blend_weights, build_scaffold, check_label_purity, sample_bases,
    Attachment, MotionBase, Scaffold, ScaffoldConfig,
};
pub use blend::{apply_scaffold, dqb, relative_transform, scaffold_backward, BaseGrads};

pub use rigidity::{rigidity_loss, RigidityLoss, RigidityWeights};
