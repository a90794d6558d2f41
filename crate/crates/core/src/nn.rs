//! Feed-forward network over sum-pooled sparse embeddings plus dense
//! features, shared by the trigger classifier and the bag-of-words ranking
//! baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optim::AdaGrad;

/// Shape of a network: one embedding table of `buckets` rows per sparse
/// family, then ReLU hidden layers, then `outputs` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub families: usize,
    pub buckets: usize,
    pub embed_dim: usize,
    pub dense_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl MlpShape {
    fn input_dim(&self) -> usize {
        self.families * self.embed_dim + self.dense_dim
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim();
        for &h in self.hidden.iter().chain(std::iter::once(&self.outputs)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }

    pub fn embedding_params(&self) -> usize {
        self.families * self.buckets * self.embed_dim
    }

    pub fn param_count(&self) -> usize {
        self.embedding_params() + self.layer_dims().iter().map(|(i, o)| i * o + o).sum::<usize>()
    }
}

/// One example: bucket ids per family (repeats count twice) and dense values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseInput {
    pub sparse: Vec<Vec<u32>>,
    pub dense: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Logistic loss on a single logit.
    Binary(bool),
    /// Softmax cross-entropy over all logits.
    Class(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            dropout: 0.2,
            rng_seed: 1,
        }
    }
}

/// Gradient with the embedding part kept sparse.
#[derive(Clone, Debug, Default)]
pub struct Gradient {
    pub embedding: BTreeMap<usize, f64>,
    /// Indexed from the first non-embedding parameter.
    pub dense: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub shape: MlpShape,
    pub params: Vec<f64>,
}

struct Forward {
    /// Post-activation (and post-dropout) values per layer, input first.
    acts: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden layer (empty when inactive).
    masks: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn logsumexp(xs: &[f64]) -> f64 {
    crate::scoring::logsumexp(xs)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// All-zero parameters: every logit is 0.
    pub fn zeros(shape: MlpShape) -> Self {
        let n = shape.param_count();
        Mlp {
            shape,
            params: vec![0.0; n],
        }
    }

    /// Embeddings uniform in ±0.1, layers uniform in the Glorot range.
    pub fn init(shape: MlpShape, rng_seed: u64) -> Self {
        let mut m = Mlp::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let emb = m.shape.embedding_params();
        for p in &mut m.params[..emb] {
            *p = rng.gen_range(-0.1..=0.1);
        }
        let mut off = emb;
        for (fan_in, fan_out) in m.shape.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-limit..=limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        m
    }

    fn input(&self, x: &SparseInput) -> Vec<f64> {
        let s = &self.shape;
        let mut v = vec![0.0; s.input_dim()];
        for (f, ids) in x.sparse.iter().enumerate().take(s.families) {
            let out = &mut v[f * s.embed_dim..(f + 1) * s.embed_dim];
            for &id in ids {
                let row = (f * s.buckets + id as usize % s.buckets) * s.embed_dim;
                for (o, w) in out.iter_mut().zip(&self.params[row..row + s.embed_dim]) {
                    *o += w;
                }
            }
        }
        let dense_at = s.families * s.embed_dim;
        for (o, &d) in v[dense_at..].iter_mut().zip(&x.dense) {
            *o = d;
        }
        v
    }

    fn forward(&self, x: &SparseInput, dropout: Option<(f64, &mut ChaCha8Rng)>) -> Forward {
        let dims = self.shape.layer_dims();
        let mut acts = vec![self.input(x)];
        let mut masks = Vec::new();
        let mut off = self.shape.embedding_params();
        let mut drop = dropout;
        let mut logits = Vec::new();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let a = acts.last().unwrap();
            let z: Vec<f64> = (0..fan_out)
                .map(|k| b[k] + w[k * fan_in..(k + 1) * fan_in].iter().zip(a).map(|(p, x)| p * x).sum::<f64>())
                .collect();
            off += fan_in * fan_out + fan_out;
            if l + 1 == dims.len() {
                logits = z;
                break;
            }
            let mut h: Vec<f64> = z.into_iter().map(|v| v.max(0.0)).collect();
            if let Some((rate, rng)) = drop.as_mut() {
                if *rate > 0.0 {
                    let keep = 1.0 - *rate;
                    let mask: Vec<f64> = (0..fan_out)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    h.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.push(mask);
                }
            }
            acts.push(h);
        }
        Forward { acts, masks, logits }
    }

    /// Inference logits (no dropout).
    pub fn logits(&self, x: &SparseInput) -> Vec<f64> {
        self.forward(x, None).logits
    }

    pub fn loss(&self, x: &SparseInput, target: Target) -> f64 {
        loss_and_dlogits(&self.logits(x), target).0
    }

    /// Loss of one example; accumulates its gradient into `grad`. Dropout is
    /// applied when `dropout` is given.
    pub fn loss_and_grad(
        &self,
        x: &SparseInput,
        target: Target,
        grad: &mut Gradient,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> f64 {
        let s = &self.shape;
        let emb = s.embedding_params();
        if grad.dense.len() != self.params.len() - emb {
            grad.dense = vec![0.0; self.params.len() - emb];
        }
        let fwd = self.forward(x, dropout);
        let (loss, mut delta) = loss_and_dlogits(&fwd.logits, target);
        let dims = s.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = emb;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let w0 = offsets[l];
            let a = &fwd.acts[l];
            let mut da = vec![0.0; fan_in];
            for k in 0..fan_out {
                let dk = delta[k];
                if dk == 0.0 {
                    continue;
                }
                let row = w0 + k * fan_in;
                for j in 0..fan_in {
                    grad.dense[row - emb + j] += dk * a[j];
                    da[j] += dk * self.params[row + j];
                }
                grad.dense[w0 + fan_in * fan_out + k - emb] += dk;
            }
            if l == 0 {
                delta = da;
                break;
            }
            // Back through dropout and ReLU of hidden layer l - 1.
            let mask = fwd.masks.get(l - 1);
            for j in 0..fan_in {
                if a[j] <= 0.0 {
                    da[j] = 0.0;
                } else if let Some(m) = mask {
                    da[j] *= m[j];
                }
            }
            delta = da;
        }
        for (f, ids) in x.sparse.iter().enumerate().take(s.families) {
            let d = &delta[f * s.embed_dim..(f + 1) * s.embed_dim];
            for &id in ids {
                let row = (f * s.buckets + id as usize % s.buckets) * s.embed_dim;
                for (j, &dj) in d.iter().enumerate() {
                    *grad.embedding.entry(row + j).or_insert(0.0) += dj;
                }
            }
        }
        loss
    }
}

/// Loss and its derivative with respect to the logits.
pub fn loss_and_dlogits(logits: &[f64], target: Target) -> (f64, Vec<f64>) {
    match target {
        Target::Binary(y) => {
            let z = logits[0];
            let y = if y { 1.0 } else { 0.0 };
            // log(1 + e^z) - y z, computed stably.
            let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            (loss, vec![sigmoid(z) - y])
        }
        Target::Class(c) => {
            let lse = logsumexp(logits);
            let d = logits
                .iter()
                .enumerate()
                .map(|(k, &z)| (z - lse).exp() - if k == c { 1.0 } else { 0.0 })
                .collect();
            (lse - logits[c], d)
        }
    }
}

/// Mini-batch AdaGrad on the mean loss, in a seeded shuffled order each
/// epoch. Returns the mean training loss of each epoch, or `None` if the
/// loss stopped being finite.
pub fn train(mlp: &mut Mlp, data: &[(SparseInput, Target)], config: &TrainConfig) -> Option<Vec<f64>> {
    let emb = mlp.shape.embedding_params();
    let mut opt = AdaGrad::new(mlp.params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut grad = Gradient::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            grad.embedding.clear();
            grad.dense.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (x, t) = &data[i];
                total += mlp.loss_and_grad(x, *t, &mut grad, Some((config.dropout, &mut rng)));
            }
            let scale = 1.0 / batch.len() as f64;
            opt.step_sparse(&mut mlp.params, grad.embedding.iter().map(|(&i, &g)| (i, g * scale)));
            opt.step_sparse(
                &mut mlp.params,
                grad.dense.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(i, &g)| (emb + i, g * scale)),
            );
        }
        let mean = total / data.len().max(1) as f64;
        if !mean.is_finite() {
            return None;
        }
        losses.push(mean);
    }
    Some(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(outputs: usize) -> MlpShape {
        MlpShape {
            families: 2,
            buckets: 16,
            embed_dim: 8,
            dense_dim: 3,
            hidden: vec![8, 8, 8],
            outputs,
        }
    }

    fn example(seed: u64) -> SparseInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SparseInput {
            sparse: vec![(0..4).map(|_| rng.gen_range(0..16)).collect(), vec![rng.gen_range(0..16)]],
            dense: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn zero_model_gives_even_odds() {
        let m = Mlp::zeros(shape(1));
        assert_eq!(sigmoid(m.logits(&example(1))[0]), 0.5);
        let m = Mlp::zeros(shape(4));
        assert_eq!(m.logits(&example(2)), vec![0.0; 4]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (outputs, target) in [(1, Target::Binary(true)), (5, Target::Class(3))] {
            let mut m = Mlp::init(shape(outputs), 7);
            let batch = [example(3), example(4)];
            let mut g = Gradient::default();
            for x in &batch {
                m.loss_and_grad(x, target, &mut g, None);
            }
            let emb = m.shape.embedding_params();
            let analytic = |i: usize| if i < emb { g.embedding.get(&i).copied().unwrap_or(0.0) } else { g.dense[i - emb] };
            let eps = 1e-4;
            let mut worst: f64 = 0.0;
            for i in 0..m.params.len() {
                let orig = m.params[i];
                m.params[i] = orig + eps;
                let up: f64 = batch.iter().map(|x| m.loss(x, target)).sum();
                m.params[i] = orig - eps;
                let down: f64 = batch.iter().map(|x| m.loss(x, target)).sum();
                m.params[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic(i);
                let scale = a.abs().max(numeric.abs());
                if scale > 1e-7 {
                    worst = worst.max((a - numeric).abs() / scale);
                }
            }
            assert!(worst < 1e-3, "{worst}");
        }
    }
}
