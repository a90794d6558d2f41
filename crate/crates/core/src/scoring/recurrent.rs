use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scorer, ScoringError};
use crate::container::{ModelFile, Tensor};
use crate::corpus::{MessagePair, TokenId, Vocabulary};
use crate::optim::{clip_global_norm, AdaGrad};

pub(super) const KIND: &str = "recurrent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub projection_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_value: f64,
    pub batch_size: usize,
    /// Original-message tokens beyond this many (from the end) are dropped.
    pub max_original_len: usize,
    pub init_scale: f64,
    /// Initial forget-gate bias; positive values let memory survive the
    /// early updates.
    pub forget_bias: f64,
    pub rng_seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        RecurrentConfig {
            embed_dim: 32,
            hidden_dim: 64,
            projection_dim: 32,
            epochs: 10,
            learning_rate: 0.1,
            clip_value: 1.0,
            batch_size: 8,
            max_original_len: 60,
            init_scale: 0.08,
            forget_bias: 1.0,
            rng_seed: 1,
        }
    }
}

impl RecurrentConfig {
    fn validate(&self) -> Result<(), ScoringError> {
        let dims = [self.embed_dim, self.hidden_dim, self.projection_dim, self.batch_size];
        if dims.contains(&0) || !(self.clip_value > 0.0) || !(self.learning_rate > 0.0) {
            return Err(ScoringError::InvalidConfig(format!(
                "dims and batch size must be >= 1, clip_value and learning_rate > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    v: usize,
    e: usize,
    h: usize,
    p: usize,
    emb: usize,
    w_gates: usize,
    b_gates: usize,
    w_proj: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, e: usize, h: usize, p: usize) -> Self {
        let emb = 0;
        let w_gates = emb + v * e;
        let b_gates = w_gates + 4 * h * (e + p);
        let w_proj = b_gates + 4 * h;
        let w_out = w_proj + p * h;
        let b_out = w_out + v * p;
        Layout {
            v,
            e,
            h,
            p,
            emb,
            w_gates,
            b_gates,
            w_proj,
            w_out,
            b_out,
            total: b_out + v,
        }
    }

    fn input_dim(&self) -> usize {
        self.e + self.p
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached activations of one cell step, kept for backpropagation.
struct StepCache {
    token: TokenId,
    input: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
}

/// Single-layer gated recurrent cell with a linear recurrent projection:
///
/// ```text
/// [i f o g] = [σ σ σ tanh](W [x_t; r_{t-1}] + b)
/// c_t = f ⊙ c_{t-1} + i ⊙ g      h_t = o ⊙ tanh(c_t)      r_t = W_p h_t
/// P(· | …) = softmax(W_o r_t + b_o)
/// ```
///
/// The same cell reads the original message (ending in EOM) and then the
/// response.
#[derive(Clone, Debug)]
pub struct RecurrentModel {
    vocab: Vocabulary,
    config: RecurrentConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RecurrentState {
    c: Vec<f64>,
    r: Vec<f64>,
    log_probs: Arc<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    /// Mean per-token loss on the training pairs before the first update.
    pub initial_loss: f64,
    /// Mean per-token training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Global gradient norm of every update, before and after clipping.
    pub pre_clip_norms: Vec<f64>,
    pub post_clip_norms: Vec<f64>,
}

impl RecurrentModel {
    /// Fresh model with parameters drawn uniformly from `±init_scale`, plus
    /// `forget_bias` on the forget gate.
    pub fn init(vocab: Vocabulary, config: RecurrentConfig) -> Result<Self, ScoringError> {
        config.validate()?;
        let layout = Layout::new(vocab.len(), config.embed_dim, config.hidden_dim, config.projection_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let s = config.init_scale;
        let params = (0..layout.total)
            .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
            .collect::<Vec<f64>>();
        let mut model = RecurrentModel {
            vocab,
            config,
            layout,
            params,
        };
        let (h, fb) = (layout.h, model.config.forget_bias);
        model.params[layout.b_gates + h..layout.b_gates + 2 * h]
            .iter_mut()
            .for_each(|b| *b += fb);
        Ok(model)
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn cell(&self, token: TokenId, c_prev: &[f64], r_prev: &[f64]) -> StepCache {
        let l = &self.layout;
        let (e, h, p) = (l.e, l.h, l.p);
        let d = l.input_dim();
        let mut input = Vec::with_capacity(d);
        let row = l.emb + token as usize * e;
        input.extend_from_slice(&self.params[row..row + e]);
        input.extend_from_slice(r_prev);
        let w = &self.params[l.w_gates..l.b_gates];
        let b = &self.params[l.b_gates..l.w_proj];
        let mut gates = vec![0.0; 4 * h];
        for (k, z) in gates.iter_mut().enumerate() {
            let wr = &w[k * d..(k + 1) * d];
            let pre = b[k] + wr.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>();
            *z = if k < 3 * h { sigmoid(pre) } else { pre.tanh() };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hv = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            hv[j] = o * tanh_c[j];
        }
        let wp = &self.params[l.w_proj..l.w_out];
        let r = (0..p)
            .map(|k| wp[k * h..(k + 1) * h].iter().zip(&hv).map(|(a, x)| a * x).sum())
            .collect();
        StepCache {
            token,
            input,
            gates,
            c_prev: c_prev.to_vec(),
            c,
            tanh_c,
            h: hv,
            r,
        }
    }

    fn output_log_probs(&self, r: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let wo = &self.params[l.w_out..l.b_out];
        let bo = &self.params[l.b_out..l.total];
        let mut logits: Vec<f64> = (0..l.v)
            .map(|k| bo[k] + wo[k * l.p..(k + 1) * l.p].iter().zip(r).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        let lse = super::logsumexp(&logits);
        logits.iter_mut().for_each(|x| *x -= lse);
        logits
    }

    fn truncate<'a>(&self, original: &'a [TokenId]) -> &'a [TokenId] {
        let keep = self.config.max_original_len;
        &original[original.len().saturating_sub(keep)..]
    }

    /// Input and target sequences for one pair: inputs are
    /// `original ++ [EOM] ++ response` and predictions start at the EOM
    /// input, so the targets are `response ++ [EOM]`.
    fn sequence(&self, original: &[TokenId], response: &[TokenId]) -> (Vec<TokenId>, usize, Vec<TokenId>) {
        let eom = self.vocab.eom();
        let original = self.truncate(original);
        let mut inputs = original.to_vec();
        inputs.push(eom);
        inputs.extend_from_slice(response);
        let mut targets = response.to_vec();
        targets.push(eom);
        (inputs, original.len(), targets)
    }

    /// Negative log-likelihood of `response` (plus EOM) given `original`,
    /// accumulating its gradient into `grad` when given.
    pub fn loss_and_grad(&self, original: &[TokenId], response: &[TokenId], grad: Option<&mut [f64]>) -> f64 {
        let l = self.layout;
        let (e, h, p, v) = (l.e, l.h, l.p, l.v);
        let d = l.input_dim();
        let (inputs, first_pred, targets) = self.sequence(original, response);

        let mut caches = Vec::with_capacity(inputs.len());
        let mut c = vec![0.0; h];
        let mut r = vec![0.0; p];
        let mut loss = 0.0;
        let mut probs = Vec::new();
        for (t, &tok) in inputs.iter().enumerate() {
            let cache = self.cell(tok, &c, &r);
            c.clone_from(&cache.c);
            r.clone_from(&cache.r);
            if t >= first_pred {
                let lp = self.output_log_probs(&cache.r);
                loss -= lp[targets[t - first_pred] as usize];
                probs.push(lp);
            }
            caches.push(cache);
        }
        let Some(grad) = grad else {
            return loss;
        };

        let mut dr_next = vec![0.0; p];
        let mut dc_next = vec![0.0; h];
        for t in (0..inputs.len()).rev() {
            let cache = &caches[t];
            let mut dr = dr_next.clone();
            if t >= first_pred {
                let lp = &probs[t - first_pred];
                let target = targets[t - first_pred] as usize;
                for k in 0..v {
                    let dl = lp[k].exp() - if k == target { 1.0 } else { 0.0 };
                    let wrow = l.w_out + k * p;
                    for j in 0..p {
                        grad[wrow + j] += dl * cache.r[j];
                        dr[j] += dl * self.params[wrow + j];
                    }
                    grad[l.b_out + k] += dl;
                }
            }
            let mut dh = vec![0.0; h];
            for k in 0..p {
                let row = l.w_proj + k * h;
                for j in 0..h {
                    grad[row + j] += dr[k] * cache.h[j];
                    dh[j] += dr[k] * self.params[row + j];
                }
            }
            let mut dz = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for j in 0..h {
                let (i, f, o, g) = (
                    cache.gates[j],
                    cache.gates[h + j],
                    cache.gates[2 * h + j],
                    cache.gates[3 * h + j],
                );
                let tc = cache.tanh_c[j];
                let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
                let d_o = dh[j] * tc;
                let di = dc * g;
                let dg = dc * i;
                let df = dc * cache.c_prev[j];
                dc_prev[j] = dc * f;
                dz[j] = di * i * (1.0 - i);
                dz[h + j] = df * f * (1.0 - f);
                dz[2 * h + j] = d_o * o * (1.0 - o);
                dz[3 * h + j] = dg * (1.0 - g * g);
            }
            let mut dinput = vec![0.0; d];
            for (k, &dzk) in dz.iter().enumerate() {
                if dzk == 0.0 {
                    continue;
                }
                let row = l.w_gates + k * d;
                for j in 0..d {
                    grad[row + j] += dzk * cache.input[j];
                    dinput[j] += dzk * self.params[row + j];
                }
                grad[l.b_gates + k] += dzk;
            }
            let erow = l.emb + cache.token as usize * e;
            for j in 0..e {
                grad[erow + j] += dinput[j];
            }
            dr_next.copy_from_slice(&dinput[e..]);
            dc_next = dc_prev;
        }
        loss
    }

    fn snap_to_f32(&mut self) {
        self.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
    }

    pub fn to_file(&self) -> ModelFile {
        let l = &self.layout;
        let mut f = ModelFile::new(KIND, self.vocab.fingerprint());
        let c = &self.config;
        f.set_meta("embed_dim", c.embed_dim);
        f.set_meta("hidden_dim", c.hidden_dim);
        f.set_meta("projection_dim", c.projection_dim);
        f.set_meta("max_original_len", c.max_original_len);
        f.set_meta("epochs", c.epochs);
        f.set_meta("learning_rate", c.learning_rate);
        f.set_meta("clip_value", c.clip_value);
        f.set_meta("batch_size", c.batch_size);
        f.set_meta("init_scale", c.init_scale);
        f.set_meta("forget_bias", c.forget_bias);
        f.set_meta("rng_seed", c.rng_seed);
        let blocks = [
            ("embedding", l.emb, l.w_gates, vec![l.v, l.e]),
            ("gates.weight", l.w_gates, l.b_gates, vec![4 * l.h, l.input_dim()]),
            ("gates.bias", l.b_gates, l.w_proj, vec![4 * l.h]),
            ("projection.weight", l.w_proj, l.w_out, vec![l.p, l.h]),
            ("output.weight", l.w_out, l.b_out, vec![l.v, l.p]),
            ("output.bias", l.b_out, l.total, vec![l.v]),
        ];
        for (name, a, b, shape) in blocks {
            f.insert(name, Tensor::from_f64(shape, &self.params[a..b]));
        }
        f
    }

    pub fn from_file(file: &ModelFile, vocab: Vocabulary) -> Result<Self, ScoringError> {
        file.expect(KIND, vocab.fingerprint())?;
        let config = RecurrentConfig {
            embed_dim: file.meta("embed_dim")?,
            hidden_dim: file.meta("hidden_dim")?,
            projection_dim: file.meta("projection_dim")?,
            max_original_len: file.meta("max_original_len")?,
            epochs: file.meta("epochs")?,
            learning_rate: file.meta("learning_rate")?,
            clip_value: file.meta("clip_value")?,
            batch_size: file.meta("batch_size")?,
            init_scale: file.meta("init_scale")?,
            forget_bias: file.meta("forget_bias")?,
            rng_seed: file.meta("rng_seed")?,
        };
        config.validate()?;
        let layout = Layout::new(vocab.len(), config.embed_dim, config.hidden_dim, config.projection_dim);
        let mut params = Vec::with_capacity(layout.total);
        for (name, len) in [
            ("embedding", layout.w_gates - layout.emb),
            ("gates.weight", layout.b_gates - layout.w_gates),
            ("gates.bias", layout.w_proj - layout.b_gates),
            ("projection.weight", layout.w_out - layout.w_proj),
            ("output.weight", layout.b_out - layout.w_out),
            ("output.bias", layout.total - layout.b_out),
        ] {
            let t = file.f32s(name)?;
            if t.len() != len {
                return Err(crate::container::ContainerError::Corrupt(format!(
                    "{name:?} has {} values, expected {len}",
                    t.len()
                ))
                .into());
            }
            params.extend(t.iter().map(|&x| x as f64));
        }
        Ok(RecurrentModel {
            vocab,
            config,
            layout,
            params,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScoringError> {
        Ok(self.to_file().save(path)?)
    }
}

impl Scorer for RecurrentModel {
    type State = RecurrentState;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn start(&self, original: &[TokenId]) -> RecurrentState {
        let mut c = vec![0.0; self.layout.h];
        let mut r = vec![0.0; self.layout.p];
        let eom = self.vocab.eom();
        for &t in self.truncate(original).iter().chain(std::iter::once(&eom)) {
            let s = self.cell(t, &c, &r);
            c = s.c;
            r = s.r;
        }
        let log_probs = Arc::new(self.output_log_probs(&r));
        RecurrentState { c, r, log_probs }
    }

    fn advance(&self, state: &RecurrentState, token: TokenId) -> RecurrentState {
        let s = self.cell(token, &state.c, &state.r);
        let log_probs = Arc::new(self.output_log_probs(&s.r));
        RecurrentState {
            c: s.c,
            r: s.r,
            log_probs,
        }
    }

    fn log_prob(&self, state: &RecurrentState, token: TokenId) -> f64 {
        state.log_probs[token as usize]
    }

    fn log_probs(&self, state: &RecurrentState) -> Vec<f64> {
        state.log_probs.to_vec()
    }
}

/// Trains on `(original, response)` pairs to maximize the response
/// log-likelihood: mini-batch gradients, global-norm clipping, AdaGrad,
/// `epochs` passes in a seeded shuffled order. Parameters are kept
/// f32-representable at the end so the saved model is exact.
pub fn train_recurrent(
    pairs: &[MessagePair],
    vocab: &Vocabulary,
    config: &RecurrentConfig,
) -> Result<(RecurrentModel, TrainingLog), ScoringError> {
    let data: Vec<(Vec<TokenId>, Vec<TokenId>)> = pairs
        .iter()
        .filter(|p| !p.response.is_empty())
        .map(|p| (vocab.encode(&p.original), vocab.encode(&p.response)))
        .collect();
    if data.is_empty() {
        return Err(ScoringError::EmptyCorpus);
    }
    let mut model = RecurrentModel::init(vocab.clone(), config.clone())?;
    let n_tokens: usize = data.iter().map(|(_, r)| r.len() + 1).sum();
    let mut log = TrainingLog {
        initial_loss: data.iter().map(|(o, r)| model.loss_and_grad(o, r, None)).sum::<f64>() / n_tokens as f64,
        ..Default::default()
    };
    let mut opt = AdaGrad::new(model.layout.total, config.learning_rate);
    let mut grad = vec![0.0; model.layout.total];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5eed);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (o, r) = &data[i];
                total += model.loss_and_grad(o, r, Some(&mut grad));
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let (pre, post) = clip_global_norm(&mut grad, config.clip_value);
            if !pre.is_finite() {
                return Err(ScoringError::DivergedLoss { epoch });
            }
            log.pre_clip_norms.push(pre);
            log.post_clip_norms.push(post);
            opt.step(&mut model.params, &grad);
        }
        let mean = total / n_tokens as f64;
        if !mean.is_finite() {
            return Err(ScoringError::DivergedLoss { epoch });
        }
        log::info!("recurrent epoch {}: loss {mean:.4}", epoch + 1);
        log.epoch_loss.push(mean);
    }
    model.snap_to_f32();
    Ok((model, log))
}
