//! Pinhole projection of 3D Gaussians to screen-space splats, with the
//! reverse pass from screen-space gradients back to mean, scale and
//! rotation.

use crate::camera::Camera;
use crate::geometry::{mat3_apply, mat3_mul, mat3_transpose, Mat3, Quat, Vec3};
use num_traits::Float;

/// Splats closer than this to the image plane are culled.
pub const NEAR_PLANE: f64 = 1e-4;
/// Low-pass term added to every 2D covariance, in px².
pub const BLUR_FLOOR: f64 = 0.3;
/// Footprint cutoff in Mahalanobis units.
pub const CUTOFF_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// `[a, b, c]` of the symmetric covariance `[[a, b], [b, c]]`, px².
    pub cov2d: [f64; 3],
    /// Inverse covariance in the same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    pub source: usize,
    /// Inclusive-exclusive pixel window `[x0, x1) x [y0, y1)`.
    pub bbox: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(Splat2D),
    Culled,
}

/// 3D covariance `R diag(s)^2 R^T`, together with `M = R diag(s)`.
pub fn covariance3d(rotation: Quat, scale: [f64; 3]) -> (Mat3, Mat3) {
    let r = rotation.normalized().to_matrix();
    let mut m = r;
    for row in m.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= scale[j];
        }
    }
    (mat3_mul(&m, &mat3_transpose(&m)), m)
}

struct Intermediates {
    p_cam: Vec3,
    /// `J W`, 2x3.
    t: [[f64; 3]; 2],
    sigma: Mat3,
    m: Mat3,
    cov: [f64; 3],
}

fn intermediates(
    mean: Vec3,
    rotation: Quat,
    scale: [f64; 3],
    cam: &Camera,
) -> Option<Intermediates> {
    let p = cam.world_to_camera.apply(mean);
    if p.z <= NEAR_PLANE {
        return None;
    }
    let w = cam.world_to_camera.rotation.to_matrix();
    let (sigma, m) = covariance3d(rotation, scale);
    let iz = 1.0 / p.z;
    let j = [
        [cam.fx * iz, 0.0, -cam.fx * p.x * iz * iz],
        [0.0, cam.fy * iz, -cam.fy * p.y * iz * iz],
    ];
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| t[r][k] * sigma[k][c]).sum();
        }
    }
    let dot = |r: usize, s: usize| -> f64 { (0..3).map(|k| ts[r][k] * t[s][k]).sum() };
    let cov = [dot(0, 0) + BLUR_FLOOR, dot(0, 1), dot(1, 1) + BLUR_FLOOR];
    Some(Intermediates {
        p_cam: p,
        t,
        sigma,
        m,
        cov,
    })
}

pub fn conic_of(cov: [f64; 3]) -> [f64; 3] {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let inv = 1.0 / det;
    [cov[2] * inv, -cov[1] * inv, cov[0] * inv]
}

/// Projects one Gaussian. Culled when behind the near plane or when its
/// 3σ footprint misses the frame.
pub fn project(
    mean: Vec3,
    rotation: Quat,
    scale: [f64; 3],
    source: usize,
    cam: &Camera,
) -> Projection {
    let Some(it) = intermediates(mean, rotation, scale, cam) else {
        return Projection::Culled;
    };
    let p = it.p_cam;
    let u = cam.fx * p.x / p.z + cam.cx;
    let v = cam.fy * p.y / p.z + cam.cy;
    let ex = CUTOFF_SIGMA * it.cov[0].sqrt();
    let ey = CUTOFF_SIGMA * it.cov[2].sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    // pixel centers sit at integer + 0.5
    let x0 = (u - ex - 0.5).ceil().max(0.0);
    let x1 = (u + ex - 0.5).floor().min(w - 1.0);
    let y0 = (v - ey - 0.5).ceil().max(0.0);
    let y1 = (v + ey - 0.5).floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return Projection::Culled;
    }
    Projection::Visible(Splat2D {
        mean2d: [u, v],
        cov2d: it.cov,
        conic: conic_of(it.cov),
        depth: p.z,
        source,
        bbox: [x0 as usize, x1 as usize + 1, y0 as usize, y1 as usize + 1],
    })
}

/// Gradient of `tr(G^T R(q))` with respect to the (unit) quaternion
/// components, through the polynomial form of [`Quat::to_matrix`].
pub fn quat_matrix_vjp(q: Quat, g: &Mat3) -> Quat {
    let Quat { w, x, y, z } = q;
    let dw =
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2]
            + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let dy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
            - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let dz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    Quat::new(dw, dx, dy, dz)
}

/// Gradient through `q -> q / |q|` (no hemisphere flip; the rotation
/// matrix is even in `q`).
pub fn normalize_vjp(q: Quat, g_unit: Quat) -> Quat {
    let n = q.norm();
    let u = q.scale(1.0 / n);
    (g_unit - u.scale(u.dot(g_unit))).scale(1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionGrads {
    pub mean: Vec3,
    /// With respect to the raw (possibly unnormalized) rotation.
    pub rotation: Quat,
    /// With respect to the scale itself, not its log.
    pub scale: [f64; 3],
}

/// Reverse pass of [`project`] given `dL/dmean2d` and `dL/dconic`, where
/// the conic off-diagonal gradient counts both symmetric entries.
pub fn project_backward(
    mean: Vec3,
    rotation: Quat,
    scale: [f64; 3],
    cam: &Camera,
    d_mean2d: [f64; 2],
    d_conic: [f64; 3],
) -> ProjectionGrads {
    let Some(it) = intermediates(mean, rotation, scale, cam) else {
        return ProjectionGrads::default();
    };
    let p = it.p_cam;
    let iz = 1.0 / p.z;
    let (fx, fy) = (cam.fx, cam.fy);

    // conic = cov^{-1}:  G_cov = -A G_A A with per-entry symmetric G_A
    let a = conic_of(it.cov);
    let am = [[a[0], a[1]], [a[1], a[2]]];
    let ga = [
        [d_conic[0], 0.5 * d_conic[1]],
        [0.5 * d_conic[1], d_conic[2]],
    ];
    let mut tmp = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            tmp[r][c] = (0..2).map(|k| am[r][k] * ga[k][c]).sum();
        }
    }
    let mut gcov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            gcov[r][c] = -(0..2).map(|k| tmp[r][k] * am[k][c]).sum::<f64>();
        }
    }

    // cov = T Σ T^T:  G_Σ = T^T G_cov T,  G_T = 2 G_cov T Σ
    let t = it.t;
    let mut gsigma = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += t[i][r] * gcov[i][j] * t[j][c];
                }
            }
            gsigma[r][c] = s;
        }
    }
    let mut gt = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for j in 0..2 {
                for k in 0..3 {
                    s += gcov[i][j] * t[j][k] * it.sigma[k][c];
                }
            }
            gt[i][c] = 2.0 * s;
        }
    }
    // T = J W:  G_J = G_T W^T
    let w = cam.world_to_camera.rotation.to_matrix();
    let mut gj = [[0.0; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            gj[i][k] = (0..3).map(|c| gt[i][c] * w[k][c]).sum();
        }
    }
    let mut dp = Vec3::new(
        -fx * iz * iz * gj[0][2] + d_mean2d[0] * fx * iz,
        -fy * iz * iz * gj[1][2] + d_mean2d[1] * fy * iz,
        -fx * iz * iz * gj[0][0] + 2.0 * fx * p.x * iz * iz * iz * gj[0][2]
            - fy * iz * iz * gj[1][1]
            + 2.0 * fy * p.y * iz * iz * iz * gj[1][2],
    );
    dp.z += -d_mean2d[0] * fx * p.x * iz * iz - d_mean2d[1] * fy * p.y * iz * iz;
    let d_mean = mat3_apply(&mat3_transpose(&w), dp);

    // Σ = M M^T:  G_M = 2 G_Σ M
    let mut gm = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            gm[r][c] = 2.0 * (0..3).map(|k| gsigma[r][k] * it.m[k][c]).sum::<f64>();
        }
    }
    let qn = rotation.normalized();
    let rm = qn.to_matrix();
    let mut gr = [[0.0; 3]; 3];
    let mut d_scale = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            gr[r][c] = gm[r][c] * scale[c];
            d_scale[c] += gm[r][c] * rm[r][c];
        }
    }
    let g_unit = quat_matrix_vjp(qn, &gr);
    // normalized() may flip the hemisphere; R is even in q so undo it
    let sign = if qn.dot(rotation) < 0.0 { -1.0 } else { 1.0 };
    let d_rot = normalize_vjp(rotation, g_unit.scale(sign));
    ProjectionGrads {
        mean: d_mean,
        rotation: d_rot,
        scale: d_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Se3;

    fn cam() -> Camera {
        Camera::new(40.0, 40.0, 16.0, 16.0, 32, 32, Se3::IDENTITY).unwrap()
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let Projection::Visible(s) = project(
            Vec3::new(0.0, 0.0, 3.0),
            Quat::IDENTITY,
            [0.1; 3],
            0,
            &cam(),
        ) else {
            panic!("culled")
        };
        assert!((s.mean2d[0] - 16.0).abs() < 1e-12 && (s.mean2d[1] - 16.0).abs() < 1e-12);
        assert!((s.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_covariance_matches_jacobian_algebra() {
        // on axis J = diag(f/d, f/d) so J s^2 I J^T = (f s / d)^2 I
        let (f, s, d) = (40.0, 0.1, 3.0);
        let Projection::Visible(sp) = project(
            Vec3::new(0.0, 0.0, d),
            Quat::new(0.3, 0.2, -0.5, 0.1),
            [s; 3],
            0,
            &cam(),
        ) else {
            panic!("culled")
        };
        let expected = (f * s / d) * (f * s / d);
        assert!((sp.cov2d[0] - BLUR_FLOOR - expected).abs() < 1e-12);
        assert!((sp.cov2d[2] - BLUR_FLOOR - expected).abs() < 1e-12);
        assert!(sp.cov2d[1].abs() < 1e-12);
    }

    #[test]
    fn behind_camera_and_off_frame_are_culled() {
        assert_eq!(
            project(
                Vec3::new(0.0, 0.0, -1.0),
                Quat::IDENTITY,
                [0.1; 3],
                0,
                &cam()
            ),
            Projection::Culled
        );
        assert_eq!(
            project(
                Vec3::new(0.0, 0.0, 0.0),
                Quat::IDENTITY,
                [0.1; 3],
                0,
                &cam()
            ),
            Projection::Culled
        );
        assert_eq!(
            project(
                Vec3::new(50.0, 0.0, 2.0),
                Quat::IDENTITY,
                [0.1; 3],
                0,
                &cam()
            ),
            Projection::Culled
        );
    }

    #[test]
    fn blur_floor_bounds_eigenvalues() {
        let Projection::Visible(sp) = project(
            Vec3::new(0.1, 0.0, 3.0),
            Quat::IDENTITY,
            [1e-6, 1e-6, 1e-6],
            0,
            &cam(),
        ) else {
            panic!("culled")
        };
        let [a, b, c] = sp.cov2d;
        let tr = a + c;
        let det = a * c - b * b;
        let lmin = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
        assert!(lmin >= BLUR_FLOOR - 1e-12);
    }

    #[test]
    fn quat_matrix_vjp_matches_finite_differences() {
        let q = Quat::new(0.4, -0.3, 0.7, 0.2);
        let g = [[0.3, -1.0, 0.2], [0.5, 0.1, -0.7], [0.9, 0.4, -0.2]];
        let f = |q: Quat| -> f64 {
            let r = q.to_matrix();
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| r[i][j] * g[i][j])
                .sum()
        };
        let an = quat_matrix_vjp(q, &g).to_array();
        for k in 0..4 {
            let mut a = q.to_array();
            let mut b = q.to_array();
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (f(Quat::from_array(a)) - f(Quat::from_array(b))) / 2e-6;
            assert!((fd - an[k]).abs() < 1e-6);
        }
    }
}
