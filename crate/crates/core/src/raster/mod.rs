//! Differentiable splat renderer producing color and identity features.

mod labels;
mod photometric;
mod project;
mod render;

pub use labels::{labels_from_logits, render_label_map};
pub use photometric::{l1_loss, ssim, ssim_loss, PhotometricLoss};
pub use project::{
    covariance3d, normalize_vjp, project, project_backward, quat_matrix_vjp, Projection,
    ProjectionGrads, Splat2D, BLUR_FLOOR, CUTOFF_SIGMA, NEAR_PLANE,
};
pub use render::{
    rasterize, rasterize_backward, Contrib, ContribLists, GaussianGrads, RenderOptions,
    RenderOutput, MAX_ALPHA, MIN_TRANSMITTANCE,
};
