//! Per-pixel identity decoder: `logits = W2 · relu(W1 · f + b1) + b2`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::rng::{uniform, DetRng};

/// Identity feature width used by the trainer.
pub const FEATURE_DIM: usize = 16;
pub const HIDDEN_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDecoder {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DecoderGrads {
    pub fn zeros_like(d: &IdentityDecoder) -> Self {
        DecoderGrads {
            w1: vec![0.0; d.w1.len()],
            b1: vec![0.0; d.b1.len()],
            w2: vec![0.0; d.w2.len()],
            b2: vec![0.0; d.b2.len()],
        }
    }

    pub fn add(&mut self, o: &DecoderGrads) {
        for (a, b) in [
            (&mut self.w1, &o.w1),
            (&mut self.b1, &o.b1),
            (&mut self.w2, &o.w2),
            (&mut self.b2, &o.b2),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl IdentityDecoder {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        IdentityDecoder {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn random(input: usize, hidden: usize, output: usize, rng: &mut DetRng) -> Self {
        let mut d = IdentityDecoder::zeros(input, hidden, output);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        for w in &mut d.w1 {
            *w = uniform(rng, -a1, a1);
        }
        for w in &mut d.w2 {
            *w = uniform(rng, -a2, a2);
        }
        d
    }

    pub fn decode_one(&self, f: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        for (h, (row, b)) in hidden
            .iter_mut()
            .zip(self.w1.chunks_exact(self.input).zip(&self.b1))
        {
            let z: f64 = row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + b;
            *h = z.max(0.0);
        }
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.w2.chunks_exact(self.hidden).zip(&self.b2))
        {
            *o = row
                .iter()
                .zip(hidden.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + b;
        }
    }

    /// Logits for every pixel, plus the cache needed by [`Self::backward`].
    pub fn forward(&self, features: &FeatureMap) -> Result<(FeatureMap, DecoderCache)> {
        if features.channels != self.input {
            return Err(Error::shape("feature width differs from decoder input"));
        }
        let n = features.pixel_count();
        let mut logits = FeatureMap::new(features.width, features.height, self.output);
        let mut hidden = vec![0.0; n * self.hidden];
        for p in 0..n {
            let h = &mut hidden[p * self.hidden..(p + 1) * self.hidden];
            self.decode_one(features.pixel(p), h, logits.pixel_mut(p));
        }
        Ok((logits, DecoderCache { hidden }))
    }

    /// Accumulates weight gradients into `grads` and returns `dL/dfeatures`.
    pub fn backward(
        &self,
        features: &FeatureMap,
        cache: &DecoderCache,
        grad_logits: &FeatureMap,
        grads: &mut DecoderGrads,
    ) -> Result<FeatureMap> {
        if grad_logits.channels != self.output || features.channels != self.input {
            return Err(Error::shape("decoder gradient shape mismatch"));
        }
        let n = features.pixel_count();
        let mut dfeat = FeatureMap::new(features.width, features.height, self.input);
        let mut dh = vec![0.0; self.hidden];
        for p in 0..n {
            let g = grad_logits.pixel(p);
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let h = &cache.hidden[p * self.hidden..(p + 1) * self.hidden];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grads.b2[o] += go;
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                let grow = &mut grads.w2[o * self.hidden..(o + 1) * self.hidden];
                for j in 0..self.hidden {
                    grow[j] += go * h[j];
                    dh[j] += go * row[j];
                }
            }
            let f = features.pixel(p);
            let df = dfeat.pixel_mut(p);
            for j in 0..self.hidden {
                if h[j] <= 0.0 {
                    continue;
                }
                let dz = dh[j];
                grads.b1[j] += dz;
                let row = &self.w1[j * self.input..(j + 1) * self.input];
                let grow = &mut grads.w1[j * self.input..(j + 1) * self.input];
                for i in 0..self.input {
                    grow[i] += dz * f[i];
                    df[i] += dz * row[i];
                }
            }
        }
        Ok(dfeat)
    }

    /// Argmax class of a single feature vector, see [`argmax_label`].
    pub fn classify(&self, f: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.output];
        self.decode_one(f, &mut hidden, &mut out);
        argmax_label(&out)
    }
}

/// Argmax over `K` instance channels followed by the background channel.
/// Ties among instances go to the lowest id; the background channel (last)
/// wins any tie it takes part in.
pub fn argmax_label(logits: &[f64]) -> usize {
    let k = logits.len() - 1;
    let mut best = 0;
    for i in 1..k {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    if k == 0 || logits[k] >= logits[best] {
        k
    } else {
        best
    }
}
