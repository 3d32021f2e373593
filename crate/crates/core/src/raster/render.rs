//! Front-to-back alpha compositing of colors and identity features.
//!
//! Every pixel evaluates all splats whose 3σ ellipse covers its center, in
//! depth order (ties by Gaussian index). Colors and features share the same
//! blend weights `w_k = α_k ∏_{j<k} (1 - α_j)`.

use alloc::vec;
use alloc::vec::Vec;

use super::project::{project, project_backward, Projection, Splat2D, BLUR_FLOOR, CUTOFF_SIGMA};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::geometry::{Quat, Vec3};
use crate::image::{FeatureMap, Image};
use num_traits::Float;

/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Per-splat alpha is clamped here; the clamped region has zero gradient.
pub const MAX_ALPHA: f64 = 0.99;
const FEATURE_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderOptions {
    /// Divide composited features by accumulated alpha.
    pub normalize_features: bool,
    /// Skip the identity feature channels entirely.
    pub skip_features: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrib {
    /// Index into [`RenderOutput::splats`].
    pub splat: u32,
    /// Footprint value `g` at the pixel.
    pub footprint: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

impl Contrib {
    pub fn alpha(&self, opacity: f64) -> f64 {
        (opacity * self.footprint).min(MAX_ALPHA)
    }
}

/// Per-pixel ordered contributor lists in CSR form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContribLists {
    pub offsets: Vec<u32>,
    pub entries: Vec<Contrib>,
}

impl ContribLists {
    pub fn pixel(&self, p: usize) -> &[Contrib] {
        &self.entries[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub features: FeatureMap,
    /// Accumulated opacity `Σ_k w_k` per pixel.
    pub alpha: Vec<f64>,
    pub splats: Vec<Splat2D>,
    pub opacities: Vec<f64>,
    pub contrib: ContribLists,
    pub timestep: usize,
    pub options: RenderOptions,
}

impl RenderOutput {
    /// Per-pixel blend weights of each contributing Gaussian.
    pub fn weights(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.contrib.pixel(p).iter().map(move |c| {
            let s = c.splat as usize;
            (
                self.splats[s].source,
                c.alpha(self.opacities[s]) * c.transmittance,
            )
        })
    }
}

fn footprint_power(s: &Splat2D, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let [a, b, c] = s.conic;
    (
        0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy),
        dx,
        dy,
    )
}

/// Renders the Gaussians' poses at timestep `t`.
pub fn rasterize(
    gaussians: &GaussianSet,
    t: usize,
    camera: &Camera,
    options: RenderOptions,
) -> Result<RenderOutput> {
    if t >= gaussians.timesteps() {
        return Err(Error::Missing(alloc::format!(
            "gaussian means at timestep {t}"
        )));
    }
    let (w, h) = (camera.width, camera.height);
    let npix = w * h;
    let c = if options.skip_features {
        0
    } else {
        gaussians.feature_dim
    };

    let mut splats: Vec<Splat2D> = (0..gaussians.len())
        .filter_map(|i| {
            match project(
                gaussians.mean(t, i),
                gaussians.rotation(t, i),
                gaussians.scale(i),
                i,
                camera,
            ) {
                Projection::Visible(s) => Some(s),
                Projection::Culled => None,
            }
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));
    let opacities: Vec<f64> = splats.iter().map(|s| gaussians.opacity(s.source)).collect();

    // (pixel, splat, footprint) in depth order, then stably bucketed by pixel
    let cutoff = 0.5 * CUTOFF_SIGMA * CUTOFF_SIGMA;
    let mut hits: Vec<(u32, u32, f64)> = Vec::new();
    for (si, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for y in y0..y1 {
            for x in x0..x1 {
                let (power, _, _) = footprint_power(s, x as f64 + 0.5, y as f64 + 0.5);
                if power <= cutoff {
                    hits.push(((y * w + x) as u32, si as u32, (-power).exp()));
                }
            }
        }
    }
    let mut counts = vec![0u32; npix + 1];
    for &(p, _, _) in &hits {
        counts[p as usize + 1] += 1;
    }
    for i in 0..npix {
        counts[i + 1] += counts[i];
    }
    let mut cursor = counts.clone();
    let mut bucketed = vec![(0u32, 0.0f64); hits.len()];
    for &(p, si, g) in &hits {
        let slot = &mut cursor[p as usize];
        bucketed[*slot as usize] = (si, g);
        *slot += 1;
    }
    drop(hits);

    let mut image = Image::new(w, h);
    let mut features = FeatureMap::new(w, h, c);
    let mut alpha = vec![0.0; npix];
    let mut offsets = Vec::with_capacity(npix + 1);
    let mut entries = Vec::with_capacity(bucketed.len());
    offsets.push(0u32);
    for p in 0..npix {
        let mut trans = 1.0;
        let rgb = &mut image.data[p * 3..p * 3 + 3];
        let feat = &mut features.data[p * c..(p + 1) * c];
        for &(si, g) in &bucketed[counts[p] as usize..counts[p + 1] as usize] {
            let src = splats[si as usize].source;
            let a = (opacities[si as usize] * g).min(MAX_ALPHA);
            let wgt = a * trans;
            let col = gaussians.colors[src];
            for k in 0..3 {
                rgb[k] += wgt * col[k];
            }
            if c > 0 {
                for (fv, gv) in feat.iter_mut().zip(gaussians.feature(src)) {
                    *fv += wgt * gv;
                }
            }
            entries.push(Contrib {
                splat: si,
                footprint: g,
                transmittance: trans,
            });
            trans *= 1.0 - a;
            if trans < MIN_TRANSMITTANCE {
                break;
            }
        }
        alpha[p] = 1.0 - trans;
        if options.normalize_features && c > 0 {
            let inv = 1.0 / (alpha[p] + FEATURE_NORM_EPS);
            feat.iter_mut().for_each(|v| *v *= inv);
        }
        offsets.push(entries.len() as u32);
    }
    Ok(RenderOutput {
        image,
        features,
        alpha,
        splats,
        opacities,
        contrib: ContribLists { offsets, entries },
        timestep: t,
        options,
    })
}

/// Gradients for every Gaussian attribute at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub feature_dim: usize,
    pub colors: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<Quat>,
    pub means: Vec<Vec3>,
    pub features: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros(n: usize, feature_dim: usize) -> Self {
        GaussianGrads {
            feature_dim,
            colors: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            log_scales: vec![[0.0; 3]; n],
            rotations: vec![Quat::ZERO; n],
            means: vec![Vec3::ZERO; n],
            features: vec![0.0; n * feature_dim],
        }
    }

    pub fn add(&mut self, o: &GaussianGrads) {
        for (a, b) in self.colors.iter_mut().zip(&o.colors) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&o.opacity_logits) {
            *a += b;
        }
        for (a, b) in self.log_scales.iter_mut().zip(&o.log_scales) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.rotations.iter_mut().zip(&o.rotations) {
            *a += *b;
        }
        for (a, b) in self.means.iter_mut().zip(&o.means) {
            *a += *b;
        }
        for (a, b) in self.features.iter_mut().zip(&o.features) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.colors.iter_mut().flatten().for_each(|v| *v *= s);
        self.opacity_logits.iter_mut().for_each(|v| *v *= s);
        self.log_scales.iter_mut().flatten().for_each(|v| *v *= s);
        self.rotations.iter_mut().for_each(|v| *v = v.scale(s));
        self.means.iter_mut().for_each(|v| *v = v.scale(s));
        self.features.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.colors.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().all(|q| q.is_finite())
            && self.means.iter().all(|m| m.is_finite())
            && self.features.iter().all(|v| v.is_finite())
    }
}

/// Exact reverse pass of [`rasterize`] given `dL/dimage` and, unless
/// features were skipped, `dL/dfeatures`.
pub fn rasterize_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    out: &RenderOutput,
    d_image: &Image,
    d_features: Option<&FeatureMap>,
) -> Result<GaussianGrads> {
    let (w, h) = (camera.width, camera.height);
    let npix = w * h;
    if out.contrib.offsets.len() != npix + 1 {
        return Err(Error::Missing(
            "contributor lists from the forward pass".into(),
        ));
    }
    if d_image.width != w || d_image.height != h {
        return Err(Error::shape("image gradient size differs from render"));
    }
    let c = out.features.channels;
    if let Some(df) = d_features {
        if df.channels != c || df.pixel_count() != npix {
            return Err(Error::shape("feature gradient size differs from render"));
        }
    }
    let t = out.timestep;
    let n = gaussians.len();
    let mut grads = GaussianGrads::zeros(n, gaussians.feature_dim);
    let ns = out.splats.len();
    let mut d_mean2d = vec![[0.0f64; 2]; ns];
    let mut d_conic = vec![[0.0f64; 3]; ns];
    let mut d_opacity = vec![0.0f64; ns];

    let nch = 3 + c;
    let mut upstream = vec![0.0; nch + 1];
    let mut suffix = vec![0.0; nch + 1];
    let mut value = vec![0.0; nch + 1];
    for p in 0..npix {
        let list = out.contrib.pixel(p);
        if list.is_empty() {
            continue;
        }
        upstream[..3].copy_from_slice(&d_image.data[p * 3..p * 3 + 3]);
        let mut with_alpha = false;
        if let Some(df) = d_features {
            let g = df.pixel(p);
            if out.options.normalize_features {
                // F_n = F / (A + eps): route through raw F and the alpha channel
                let inv = 1.0 / (out.alpha[p] + FEATURE_NORM_EPS);
                let fnorm = out.features.pixel(p);
                let mut ga = 0.0;
                for k in 0..c {
                    upstream[3 + k] = g[k] * inv;
                    ga -= g[k] * fnorm[k] * inv;
                }
                upstream[nch] = ga;
                with_alpha = true;
            } else {
                upstream[3..nch].copy_from_slice(g);
            }
        } else {
            upstream[3..nch].iter_mut().for_each(|v| *v = 0.0);
        }
        let m = if with_alpha { nch + 1 } else { nch };
        if upstream[..m].iter().all(|v| *v == 0.0) {
            continue;
        }
        suffix[..m].iter_mut().for_each(|v| *v = 0.0);
        let (px, py) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
        for ct in list.iter().rev() {
            let si = ct.splat as usize;
            let s = &out.splats[si];
            let src = s.source;
            let o = out.opacities[si];
            let a = ct.alpha(o);
            let wgt = a * ct.transmittance;
            value[..3].copy_from_slice(&gaussians.colors[src]);
            if c > 0 {
                value[3..nch].copy_from_slice(gaussians.feature(src));
            }
            value[nch] = 1.0;
            let mut dot_v = 0.0;
            let mut dot_s = 0.0;
            for k in 0..m {
                dot_v += upstream[k] * value[k];
                dot_s += upstream[k] * suffix[k];
            }
            let d_alpha = ct.transmittance * dot_v - dot_s / (1.0 - a);
            let gc = &mut grads.colors[src];
            for k in 0..3 {
                gc[k] += wgt * upstream[k];
            }
            if c > 0 && d_features.is_some() {
                let gf = &mut grads.features[src * c..(src + 1) * c];
                for k in 0..c {
                    gf[k] += wgt * upstream[3 + k];
                }
            }
            for k in 0..m {
                suffix[k] += wgt * value[k];
            }
            if o * ct.footprint < MAX_ALPHA {
                d_opacity[si] += d_alpha * ct.footprint;
                let d_g = d_alpha * o;
                let d_power = -ct.footprint * d_g;
                let (_, dx, dy) = footprint_power(s, px, py);
                let [ca, cb, cc] = s.conic;
                d_mean2d[si][0] += -d_power * (ca * dx + cb * dy);
                d_mean2d[si][1] += -d_power * (cb * dx + cc * dy);
                d_conic[si][0] += d_power * 0.5 * dx * dx;
                d_conic[si][1] += d_power * dx * dy;
                d_conic[si][2] += d_power * 0.5 * dy * dy;
            }
        }
    }

    for (si, s) in out.splats.iter().enumerate() {
        let i = s.source;
        let o = out.opacities[si];
        grads.opacity_logits[i] += d_opacity[si] * o * (1.0 - o);
        let scale = gaussians.scale(i);
        let pg = project_backward(
            gaussians.mean(t, i),
            gaussians.rotation(t, i),
            scale,
            camera,
            d_mean2d[si],
            d_conic[si],
        );
        grads.means[i] += pg.mean;
        grads.rotations[i] += pg.rotation;
        for k in 0..3 {
            grads.log_scales[i][k] += pg.scale[k] * scale[k];
        }
    }
    Ok(grads)
}
