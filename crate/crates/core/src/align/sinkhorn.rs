use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_assign;
use super::matrix::SquareMatrix;
use super::permutation::Permutation;
use crate::error::{Error, Result};

/// Alternating row/column passes per forward evaluation.
pub const SINKHORN_ITERS: usize = 20;

/// Latent entries are clipped to `[-LATENT_CLIP, LATENT_CLIP]` after every
/// optimizer step so `exp(Z)` stays representable.
pub const LATENT_CLIP: f64 = 30.0;

/// Learnable per-video latent `Z_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationLatent {
    pub video_id: usize,
    pub z: SquareMatrix,
}

impl PermutationLatent {
    pub fn zeros(video_id: usize, k: usize) -> Self {
        PermutationLatent {
            video_id,
            z: SquareMatrix::zeros(k),
        }
    }

    pub fn clip(&mut self) {
        for v in &mut self.z.data {
            *v = v.clamp(-LATENT_CLIP, LATENT_CLIP);
        }
    }

    pub fn soft(&self) -> Result<SoftPermutation> {
        sinkhorn_normalize(&self.z, SINKHORN_ITERS)
    }
}

/// Approximately doubly stochastic `S_v`, indexed `[local][canonical]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation(pub SquareMatrix);

impl SoftPermutation {
    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.n
    }

    pub fn max_marginal_error(&self) -> f64 {
        self.0
            .row_sums()
            .into_iter()
            .chain(self.0.col_sums())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

struct Pass {
    out: SquareMatrix,
    sums: Vec<f64>,
}

fn row_normalize(s: &SquareMatrix) -> Result<Pass> {
    let n = s.n;
    let mut out = s.clone();
    let mut sums = Vec::with_capacity(n);
    for i in 0..n {
        let r: f64 = s.row(i).iter().sum();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Degenerate("sinkhorn row sums to zero".into()));
        }
        for j in 0..n {
            out[(i, j)] /= r;
        }
        sums.push(r);
    }
    Ok(Pass { out, sums })
}

fn col_normalize(s: &SquareMatrix) -> Result<Pass> {
    let n = s.n;
    let mut out = s.clone();
    let sums = s.col_sums();
    for (j, &c) in sums.iter().enumerate() {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Degenerate("sinkhorn column sums to zero".into()));
        }
        for i in 0..n {
            out[(i, j)] /= c;
        }
    }
    Ok(Pass { out, sums })
}

/// Records the `2 * iters` normalization passes applied to `exp(Z)`.
fn forward_trace(z: &SquareMatrix, iters: usize) -> Result<(SquareMatrix, Vec<(Pass, Pass)>)> {
    if z.n == 0 {
        return Err(Error::shape("empty latent"));
    }
    if iters == 0 {
        return Err(Error::shape("sinkhorn needs at least one iteration"));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("permutation latent"));
    }
    let s0 = SquareMatrix {
        n: z.n,
        data: z.data.iter().map(|v| v.exp()).collect(),
    };
    let mut passes = Vec::with_capacity(iters);
    let mut cur = s0.clone();
    for _ in 0..iters {
        let r = row_normalize(&cur)?;
        let c = col_normalize(&r.out)?;
        cur = c.out.clone();
        passes.push((r, c));
    }
    Ok((s0, passes))
}

/// `S = (T_c ∘ T_r)^iters (exp(Z))`.
pub fn sinkhorn_normalize(z: &SquareMatrix, iters: usize) -> Result<SoftPermutation> {
    let (_, passes) = forward_trace(z, iters)?;
    let last = passes.into_iter().last().expect("iters >= 1");
    Ok(SoftPermutation(last.1.out))
}

/// Reverse-mode gradient of a scalar loss through the unrolled iterations,
/// given `dL/dS`.
pub fn sinkhorn_backward(
    z: &SquareMatrix,
    iters: usize,
    upstream: &SquareMatrix,
) -> Result<SquareMatrix> {
    if upstream.n != z.n {
        return Err(Error::shape("upstream gradient does not match latent size"));
    }
    let (s0, passes) = forward_trace(z, iters)?;
    let n = z.n;
    let mut g = upstream.clone();
    for (r, c) in passes.iter().rev() {
        // out_ij = in_ij / c_j  =>  din_ij = (g_ij - sum_k g_kj out_kj) / c_j
        for j in 0..n {
            let dot: f64 = (0..n).map(|k| g[(k, j)] * c.out[(k, j)]).sum();
            for i in 0..n {
                g[(i, j)] = (g[(i, j)] - dot) / c.sums[j];
            }
        }
        for i in 0..n {
            let dot: f64 = (0..n).map(|k| g[(i, k)] * r.out[(i, k)]).sum();
            for j in 0..n {
                g[(i, j)] = (g[(i, j)] - dot) / r.sums[i];
            }
        }
    }
    for (gv, sv) in g.data.iter_mut().zip(&s0.data) {
        *gv *= sv;
    }
    Ok(g)
}

/// Discrete match implied by `S`: for each local id (row) the canonical id
/// (column) it takes. Use [`Permutation::inverse`] for canonical→local.
pub fn harden(s: &SoftPermutation) -> Result<Permutation> {
    hungarian_assign(&s.0.scaled(-1.0))
}

/// Hard permutation matrix with the same orientation as `S`.
pub fn permutation_matrix(row_to_col: &Permutation) -> SquareMatrix {
    let mut m = SquareMatrix::zeros(row_to_col.len());
    for (i, &j) in row_to_col.as_slice().iter().enumerate() {
        m[(i, j)] = 1.0;
    }
    m
}
