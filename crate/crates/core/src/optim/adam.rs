use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Bias-corrected Adam update at step `t >= 1`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    lr: f64,
    t: u64,
    hyper: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != moments.len() {
        return Err(Error::shape("parameter, gradient and moment sizes differ"));
    }
    if t == 0 {
        return Err(Error::config("t", "adam steps count from 1"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let c1 = 1.0 - hyper.beta1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - hyper.beta2.powi(t.min(i32::MAX as u64) as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + hyper.eps);
    }
    Ok(())
}

pub(crate) fn flatten3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub(crate) fn unflatten3(flat: &[f64], out: &mut [Vec3]) {
    for (p, c) in out.iter_mut().zip(flat.chunks_exact(3)) {
        *p = Vec3::new(c[0], c[1], c[2]);
    }
}

pub(crate) fn flatten4(q: &[Quat]) -> Vec<f64> {
    q.iter().flat_map(|q| [q.w, q.x, q.y, q.z]).collect()
}

pub(crate) fn unflatten4(flat: &[f64], out: &mut [Quat]) {
    for (q, c) in out.iter_mut().zip(flat.chunks_exact(4)) {
        *q = Quat::new(c[0], c[1], c[2], c[3]);
    }
}

pub(crate) fn step_vec3(
    p: &mut [Vec3],
    g: &[Vec3],
    m: &mut Moments,
    lr: f64,
    t: u64,
    h: AdamHyper,
) -> Result<()> {
    let mut flat = flatten3(p);
    adam_step(&mut flat, &flatten3(g), m, lr, t, h)?;
    unflatten3(&flat, p);
    Ok(())
}

pub(crate) fn step_quat(
    p: &mut [Quat],
    g: &[Quat],
    m: &mut Moments,
    lr: f64,
    t: u64,
    h: AdamHyper,
) -> Result<()> {
    let mut flat = flatten4(p);
    adam_step(&mut flat, &flatten4(g), m, lr, t, h)?;
    unflatten4(&flat, p);
    Ok(())
}

pub(crate) fn step_array3(
    p: &mut [[f64; 3]],
    g: &[[f64; 3]],
    m: &mut Moments,
    lr: f64,
    t: u64,
    h: AdamHyper,
) -> Result<()> {
    let mut flat: Vec<f64> = p.iter().flatten().copied().collect();
    let gf: Vec<f64> = g.iter().flatten().copied().collect();
    adam_step(&mut flat, &gf, m, lr, t, h)?;
    for (a, c) in p.iter_mut().zip(flat.chunks_exact(3)) {
        a.copy_from_slice(c);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut m = Moments::zeros(3);
        adam_step(&mut p, &[0.0; 3], &mut m, 0.1, 1, AdamHyper::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.5, -3.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut m = Moments::zeros(3);
        let h = AdamHyper::default();
        adam_step(&mut p, &g, &mut m, 0.01, 1, h).unwrap();
        for (x, g) in p.iter().zip(g) {
            let expected = -0.01 * g / (g.abs() + h.eps);
            assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0; 2];
        let mut m = Moments::zeros(2);
        let h = AdamHyper::default();
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN, 0.0], &mut m, 0.1, 1, h),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(m, Moments::zeros(2));
        assert!(adam_step(&mut p, &[0.0], &mut m, 0.1, 1, h).is_err());
        assert!(adam_step(&mut p, &[0.0; 2], &mut m, 0.1, 0, h).is_err());
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0, -4.0];
        let mut m = Moments::zeros(2);
        for t in 1..=2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut m, 0.05, t, AdamHyper::default()).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
