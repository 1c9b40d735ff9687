//! Transformer-embedding dialogue policy.
//!
//! Each decision point is a sparse binary state vector. Vectors are embedded
//! (`W_in x + b + P[pos]`, dropout on the embedding while training), passed
//! through one causal self-attention layer restricted to the last `history`
//! decision points, a residual connection and a ReLU, then projected to the
//! similarity space. An action is scored by the dot product of that vector
//! with the action's embedding. Training minimizes, per decision point,
//!
//! ```text
//! L = -( S+ - ln( e^{S+} + Σ_{Ω-} e^{S-} ) )
//! ```
//!
//! averaged over the decision points of a dialogue, with negatives drawn
//! uniformly from the other actions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actions::{action_inventory, SystemAction};
use super::features::{featurize_state, FeatureVocab, StateFeatures};
use super::replay::{replay_session, ReplayError};
use super::rule::is_legal;
use super::state::{DialogueState, World};
use crate::corpusio::DialogueRecord;
use crate::scalar::{dot, log_sum_exp, Scalar};
use crate::taxonomy::SlotSchema;

pub const TED_MAGIC: &str = "RXTED1";

#[derive(Debug, Error)]
pub enum TedError {
    #[error("no training sessions")]
    EmptyDataset,
    #[error("history is empty")]
    EmptyHistory,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not a policy model (missing {TED_MAGIC} header)")]
    BadMagic,
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TedConfig {
    pub d_model: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub history: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// Batch size grows linearly from `batch_start` to `batch_end` over the epochs.
    pub batch_start: usize,
    pub batch_end: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub optimizer: Optimizer,
    pub n_negatives: usize,
    pub seed: u64,
}

impl Default for TedConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            embed_dim: 20,
            history: 10,
            dropout: 0.1,
            epochs: 20,
            batch_start: 32,
            batch_end: 64,
            lr: 0.001,
            clip_norm: 5.0,
            optimizer: Optimizer::Adam,
            n_negatives: 10,
            seed: 3,
        }
    }
}

impl TedConfig {
    /// Plain gradient descent at lr 0.01.
    pub fn sgd() -> Self {
        Self { lr: 0.01, optimizer: Optimizer::Sgd, ..Self::default() }
    }

    fn batch_size(&self, epoch: usize) -> usize {
        if self.epochs <= 1 {
            return self.batch_start.max(1);
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        let b = self.batch_start as f64 + f * (self.batch_end as f64 - self.batch_start as f64);
        (b.round() as usize).max(1)
    }
}

/// Offsets of the parameter blocks in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    d: usize,
    h: usize,
    e: usize,
    a: usize,
    w_in: usize,
    b_in: usize,
    pos: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w_d: usize,
    b_d: usize,
    act: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, cfg: &TedConfig, a: usize) -> Self {
        let (d, h, e) = (cfg.d_model, cfg.history.max(1), cfg.embed_dim);
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let w_in = take(v * d);
        let b_in = take(d);
        let pos = take(h * d);
        let wq = take(d * d);
        let wk = take(d * d);
        let wv = take(d * d);
        let wo = take(d * d);
        let w_d = take(d * e);
        let b_d = take(e);
        let act = take(a * e);
        Self { v, d, h, e, a, w_in, b_in, pos, wq, wk, wv, wo, w_d, b_d, act, total: off }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TedModel<S: Scalar> {
    pub config: TedConfig,
    pub vocab: FeatureVocab,
    pub actions: Vec<String>,
    pub params: Vec<S>,
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

struct Cache<S> {
    t: usize,
    e: Vec<S>,
    mask: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    att: Vec<Vec<S>>,
    o: Vec<S>,
    r: Vec<S>,
    u: Vec<S>,
    h: Vec<S>,
}

/// `a (n×k) · b (k×m)`.
fn matmul<S: Scalar>(a: &[S], n: usize, k: usize, b: &[S], m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == S::zero() {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `out (k×m) += aᵀ (k×n) · g (n×m)`.
fn acc_at_b<S: Scalar>(a: &[S], n: usize, k: usize, g: &[S], m: usize, out: &mut [S]) {
    for i in 0..n {
        for p in 0..k {
            let x = a[i * k + p];
            if x == S::zero() {
                continue;
            }
            for (o, &y) in out[p * m..(p + 1) * m].iter_mut().zip(&g[i * m..(i + 1) * m]) {
                *o += x * y;
            }
        }
    }
}

/// `out (n×k) += g (n×m) · bᵀ (m×k)` for `b` stored `k×m`.
fn acc_a_bt<S: Scalar>(g: &[S], n: usize, m: usize, b: &[S], k: usize, out: &mut [S]) {
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] += dot(gi, &b[p * m..(p + 1) * m]);
        }
    }
}

impl<S: Scalar> TedModel<S> {
    /// Randomly initialized model (uniform Glorot bounds, zero biases).
    pub fn new(vocab: FeatureVocab, actions: Vec<String>, config: TedConfig) -> Self {
        assert!(config.heads > 0 && config.d_model % config.heads == 0, "d_model must divide into heads");
        let lay = Layout::new(vocab.len(), &config, actions.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![S::zero(); lay.total];
        let mut fill = |off: usize, n: usize, fan_in: usize, fan_out: usize| {
            let lim = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            for p in &mut params[off..off + n] {
                *p = S::of(rng.gen_range(-lim..lim));
            }
        };
        let (d, e) = (lay.d, lay.e);
        fill(lay.w_in, lay.v * d, lay.v, d);
        fill(lay.pos, lay.h * d, lay.h, d);
        for off in [lay.wq, lay.wk, lay.wv, lay.wo] {
            fill(off, d * d, d, d);
        }
        fill(lay.w_d, d * e, d, e);
        fill(lay.act, lay.a * e, lay.a, e);
        Self { config, vocab, actions, params }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), &self.config, self.actions.len())
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn to_text(&self) -> Result<String, TedError> {
        Ok(format!("{TED_MAGIC}\n{}", serde_json::to_string(self)?))
    }

    pub fn from_text(text: &str) -> Result<Self, TedError> {
        let body = text.strip_prefix(TED_MAGIC).ok_or(TedError::BadMagic)?;
        Ok(serde_json::from_str(body.trim_start())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TedError> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TedError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    fn forward<R: Rng>(&self, seq: &[StateFeatures], mut rng: Option<&mut R>) -> Cache<S> {
        let lay = self.layout();
        let (d, nh, e_dim, hw) = (lay.d, self.config.heads, lay.e, lay.h);
        let dk = d / nh;
        let scale = S::of(1.0 / (dk as f64).sqrt());
        let p = &self.params;
        let t = seq.len();
        let mut e = vec![S::zero(); t * d];
        for (j, x) in seq.iter().enumerate() {
            let row = &mut e[j * d..(j + 1) * d];
            let pos = x.position.min(hw - 1);
            for c in 0..d {
                row[c] = p[lay.b_in + c] + p[lay.pos + pos * d + c];
            }
            for &f in &x.indices {
                if f < lay.v {
                    for c in 0..d {
                        row[c] += p[lay.w_in + f * d + c];
                    }
                }
            }
        }
        let mut mask = Vec::new();
        if let Some(r) = rng.as_deref_mut() {
            let keep = 1.0 - self.config.dropout;
            if self.config.dropout > 0.0 {
                mask = (0..t * d).map(|_| if r.gen::<f64>() < keep { S::of(1.0 / keep) } else { S::zero() }).collect();
                for (x, m) in e.iter_mut().zip(&mask) {
                    *x *= *m;
                }
            }
        }
        let q = matmul(&e, t, d, &p[lay.wq..lay.wq + d * d], d);
        let k = matmul(&e, t, d, &p[lay.wk..lay.wk + d * d], d);
        let v = matmul(&e, t, d, &p[lay.wv..lay.wv + d * d], d);
        let mut att = Vec::with_capacity(t * nh);
        let mut o = vec![S::zero(); t * d];
        for j in 0..t {
            let lo = (j + 1).saturating_sub(hw);
            for hd in 0..nh {
                let c0 = hd * dk;
                let qj = &q[j * d + c0..j * d + c0 + dk];
                let mut w: Vec<S> = (lo..=j).map(|i| dot(qj, &k[i * d + c0..i * d + c0 + dk]) * scale).collect();
                let lse = log_sum_exp(&w);
                for x in w.iter_mut() {
                    *x = (*x - lse).exp();
                }
                for (n, i) in (lo..=j).enumerate() {
                    for c in 0..dk {
                        o[j * d + c0 + c] += w[n] * v[i * d + c0 + c];
                    }
                }
                att.push(w);
            }
        }
        let out = matmul(&o, t, d, &p[lay.wo..lay.wo + d * d], d);
        let r: Vec<S> = e.iter().zip(&out).map(|(a, b)| *a + *b).collect();
        let u: Vec<S> = r.iter().map(|x| x.max(S::zero())).collect();
        let mut h = matmul(&u, t, d, &p[lay.w_d..lay.w_d + d * e_dim], e_dim);
        for j in 0..t {
            for c in 0..e_dim {
                h[j * e_dim + c] += p[lay.b_d + c];
            }
        }
        Cache { t, e, mask, q, k, v, att, o, r, u, h }
    }

    fn backward(&self, seq: &[StateFeatures], cache: &Cache<S>, dh: &[S], grad: &mut [S]) {
        let lay = self.layout();
        let (d, nh, e_dim, hw) = (lay.d, self.config.heads, lay.e, lay.h);
        let dk = d / nh;
        let scale = S::of(1.0 / (dk as f64).sqrt());
        let p = &self.params;
        let t = cache.t;
        for j in 0..t {
            for c in 0..e_dim {
                grad[lay.b_d + c] += dh[j * e_dim + c];
            }
        }
        acc_at_b(&cache.u, t, d, dh, e_dim, &mut grad[lay.w_d..lay.w_d + d * e_dim]);
        let mut du = vec![S::zero(); t * d];
        acc_a_bt(dh, t, e_dim, &p[lay.w_d..lay.w_d + d * e_dim], d, &mut du);
        let dr: Vec<S> = du.iter().zip(&cache.r).map(|(g, r)| if *r > S::zero() { *g } else { S::zero() }).collect();
        let mut de = dr.clone();
        acc_at_b(&cache.o, t, d, &dr, d, &mut grad[lay.wo..lay.wo + d * d]);
        let mut d_o = vec![S::zero(); t * d];
        acc_a_bt(&dr, t, d, &p[lay.wo..lay.wo + d * d], d, &mut d_o);
        let mut dq = vec![S::zero(); t * d];
        let mut dkk = vec![S::zero(); t * d];
        let mut dv = vec![S::zero(); t * d];
        for j in 0..t {
            let lo = (j + 1).saturating_sub(hw);
            for hd in 0..nh {
                let c0 = hd * dk;
                let a = &cache.att[j * nh + hd];
                let doj = &d_o[j * d + c0..j * d + c0 + dk];
                let da: Vec<S> = (lo..=j).map(|i| dot(doj, &cache.v[i * d + c0..i * d + c0 + dk])).collect();
                let mean: S = a.iter().zip(&da).map(|(x, y)| *x * *y).sum();
                for (n, i) in (lo..=j).enumerate() {
                    for c in 0..dk {
                        dv[i * d + c0 + c] += a[n] * doj[c];
                    }
                    let ds = a[n] * (da[n] - mean) * scale;
                    for c in 0..dk {
                        dq[j * d + c0 + c] += ds * cache.k[i * d + c0 + c];
                        dkk[i * d + c0 + c] += ds * cache.q[j * d + c0 + c];
                    }
                }
            }
        }
        for (off, g) in [(lay.wq, &dq), (lay.wk, &dkk), (lay.wv, &dv)] {
            acc_at_b(&cache.e, t, d, g, d, &mut grad[off..off + d * d]);
            acc_a_bt(g, t, d, &p[off..off + d * d], d, &mut de);
        }
        if !cache.mask.is_empty() {
            for (g, m) in de.iter_mut().zip(&cache.mask) {
                *g *= *m;
            }
        }
        for (j, x) in seq.iter().enumerate() {
            let row = &de[j * d..(j + 1) * d];
            let pos = x.position.min(hw - 1);
            for c in 0..d {
                grad[lay.b_in + c] += row[c];
                grad[lay.pos + pos * d + c] += row[c];
            }
            for &f in &x.indices {
                if f < lay.v {
                    for c in 0..d {
                        grad[lay.w_in + f * d + c] += row[c];
                    }
                }
            }
        }
    }

    /// Scores of every action at every decision point of `seq` (eval mode).
    pub fn score_sequence(&self, seq: &[StateFeatures]) -> Vec<Vec<S>> {
        let cache = self.forward::<ChaCha8Rng>(seq, None);
        let lay = self.layout();
        (0..cache.t).map(|j| self.scores_for(&cache.h[j * lay.e..(j + 1) * lay.e])).collect()
    }

    fn scores_for(&self, h: &[S]) -> Vec<S> {
        let lay = self.layout();
        (0..lay.a).map(|a| dot(h, &self.params[lay.act + a * lay.e..lay.act + (a + 1) * lay.e])).collect()
    }

    /// Dialogue loss of `seq` with the given negatives per step, adding
    /// `weight · ∇loss` into `grad` when one is given.
    fn loss_grad<R: Rng>(
        &self,
        seq: &[StateFeatures],
        targets: &[usize],
        negatives: &[Vec<usize>],
        rng: Option<&mut R>,
        grad: Option<&mut [S]>,
        weight: S,
    ) -> S {
        let lay = self.layout();
        let e_dim = lay.e;
        let cache = self.forward(seq, rng);
        let t = cache.t;
        let inv_t = S::of(1.0 / t.max(1) as f64);
        let mut total = S::zero();
        let mut dh = vec![S::zero(); t * e_dim];
        let mut dact: Vec<(usize, usize, S)> = Vec::new();
        for j in 0..t {
            let h = &cache.h[j * e_dim..(j + 1) * e_dim];
            let mut cands = vec![targets[j]];
            cands.extend(&negatives[j]);
            let s: Vec<S> = cands.iter().map(|&a| dot(h, &self.params[lay.act + a * e_dim..lay.act + (a + 1) * e_dim])).collect();
            let lse = log_sum_exp(&s);
            total += lse - s[0];
            for (n, &a) in cands.iter().enumerate() {
                let g = ((s[n] - lse).exp() - if n == 0 { S::one() } else { S::zero() }) * inv_t * weight;
                for c in 0..e_dim {
                    dh[j * e_dim + c] += g * self.params[lay.act + a * e_dim + c];
                }
                dact.push((a, j, g));
            }
        }
        if let Some(grad) = grad {
            for (a, j, g) in dact {
                for c in 0..e_dim {
                    grad[lay.act + a * e_dim + c] += g * cache.h[j * e_dim + c];
                }
            }
            self.backward(seq, &cache, &dh, grad);
        }
        total * inv_t
    }

    /// Loss and exact gradient with every other action as a negative, no dropout.
    pub fn full_loss_grad(&self, seq: &[StateFeatures], targets: &[usize]) -> (S, Vec<S>) {
        let negs: Vec<Vec<usize>> =
            targets.iter().map(|&y| (0..self.actions.len()).filter(|&a| a != y).collect()).collect();
        let mut grad = vec![S::zero(); self.params.len()];
        let l = self.loss_grad::<ChaCha8Rng>(seq, targets, &negs, None, Some(&mut grad), S::one());
        (l, grad)
    }

    /// Loss with every other action as a negative, no dropout.
    pub fn full_loss(&self, seq: &[StateFeatures], targets: &[usize]) -> S {
        let negs: Vec<Vec<usize>> =
            targets.iter().map(|&y| (0..self.actions.len()).filter(|&a| a != y).collect()).collect();
        self.loss_grad::<ChaCha8Rng>(seq, targets, &negs, None, None, S::one())
    }
}

/// Ranking loss at one decision point, shift-stabilized:
/// `-(S+ - ln(e^{S+} + Σ e^{S-}))`. Zero without negatives.
pub fn ted_loss<S: Scalar>(s_plus: S, s_negatives: &[S]) -> S {
    if s_negatives.is_empty() {
        return S::zero();
    }
    let mut all = Vec::with_capacity(s_negatives.len() + 1);
    all.push(s_plus);
    all.extend_from_slice(s_negatives);
    (log_sum_exp(&all) - s_plus).max(S::zero())
}

/// Embedded dialogue vector of the last history entry and the score of
/// every action.
pub fn ted_similarity<S: Scalar>(
    model: &TedModel<S>,
    history: &[StateFeatures],
) -> Result<(Vec<S>, BTreeMap<String, S>), TedError> {
    if history.is_empty() {
        return Err(TedError::EmptyHistory);
    }
    let window = &history[history.len().saturating_sub(model.config.history.max(1))..];
    let cache = model.forward::<ChaCha8Rng>(window, None);
    let e = model.layout().e;
    let h = cache.h[(cache.t - 1) * e..cache.t * e].to_vec();
    let scores = model.scores_for(&h);
    Ok((h, model.actions.iter().cloned().zip(scores).collect()))
}

/// The history window of `state` followed by its current features.
pub fn state_history<S: Scalar>(model: &TedModel<S>, state: &DialogueState, schema: &SlotSchema) -> Vec<StateFeatures> {
    let mut seq: Vec<StateFeatures> =
        state.history.iter().map(|h| model.vocab.encode(&h.features, h.position)).collect();
    seq.push(featurize_state(state, schema, &model.vocab));
    let keep = model.config.history.max(1);
    if seq.len() > keep {
        seq.drain(..seq.len() - keep);
    }
    seq
}

/// All actions ranked by descending score (ties in inventory order).
pub fn ted_select<S: Scalar>(model: &TedModel<S>, state: &DialogueState, schema: &SlotSchema) -> Vec<SystemAction> {
    let seq = state_history(model, state, schema);
    let (_, scores) = ted_similarity(model, &seq).expect("history holds the current state");
    let mut ranked: Vec<(usize, S)> =
        model.actions.iter().enumerate().map(|(i, a)| (i, scores[a])).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(i, _)| SystemAction::new(model.actions[i].clone())).collect()
}

/// Highest-ranked action that passes the legality mask.
pub fn ted_select_legal<S: Scalar>(model: &TedModel<S>, state: &DialogueState, schema: &SlotSchema) -> SystemAction {
    ted_select(model, state, schema)
        .into_iter()
        .find(|a| is_legal(state, &a.name, schema))
        .unwrap_or_else(|| SystemAction::new(super::actions::UTTER_ASK_REPHRASE))
}

/// Decision points of replayed sessions: feature names, positions and gold actions.
pub struct EncodedSession {
    pub features: Vec<StateFeatures>,
    pub targets: Vec<usize>,
}

fn encode_sessions<S: Scalar>(
    model: &TedModel<S>,
    replays: &[Vec<(Vec<String>, usize, String)>],
) -> Result<Vec<EncodedSession>, TedError> {
    replays
        .iter()
        .map(|steps| {
            let mut features = Vec::with_capacity(steps.len());
            let mut targets = Vec::with_capacity(steps.len());
            for (names, pos, action) in steps {
                features.push(model.vocab.encode(names, *pos));
                targets.push(model.action_index(action).ok_or_else(|| TedError::UnknownAction(action.clone()))?);
            }
            Ok(EncodedSession { features, targets })
        })
        .collect()
}

/// Trains a policy on sessions replayed through the tracker.
pub fn ted_train<S: Scalar>(
    sessions: &[DialogueRecord],
    world: &World,
    config: &TedConfig,
) -> Result<(TedModel<S>, TrainingLog), TedError> {
    if sessions.is_empty() {
        return Err(TedError::EmptyDataset);
    }
    let inventory = action_inventory();
    let mut replays = Vec::with_capacity(sessions.len());
    for s in sessions {
        let steps = replay_session(s, world, config.history)?;
        if let Some((_, _, a)) = steps.iter().find(|(_, _, a)| !inventory.contains(a)) {
            return Err(TedError::UnknownAction(a.clone()));
        }
        replays.push(steps);
    }
    let vocab = FeatureVocab::new(replays.iter().flatten().flat_map(|(n, _, _)| n.iter().cloned()));
    let mut model = TedModel::<S>::new(vocab, inventory, config.clone());
    let data: Vec<EncodedSession> =
        encode_sessions(&model, &replays)?.into_iter().filter(|s| !s.targets.is_empty()).collect();
    if data.is_empty() {
        return Err(TedError::EmptyDataset);
    }
    let log = fit(&mut model, &data, config);
    Ok((model, log))
}

/// Mini-batch optimisation of an initialized model on encoded sessions.
pub fn fit<S: Scalar>(model: &mut TedModel<S>, data: &[EncodedSession], config: &TedConfig) -> TrainingLog {
    let n_actions = model.actions.len();
    let n_neg = config.n_negatives.min(n_actions.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let n = model.params.len();
    let mut grad = vec![S::zero(); n];
    let (mut m1, mut m2) = (vec![0.0f64; n], vec![0.0f64; n]);
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let bs = config.batch_size(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(bs) {
            let w = S::of(1.0 / batch.len() as f64);
            for &i in batch {
                let ex = &data[i];
                let negs: Vec<Vec<usize>> = ex
                    .targets
                    .iter()
                    .map(|&y| {
                        sample(&mut rng, n_actions - 1, n_neg)
                            .into_iter()
                            .map(|k| if k >= y { k + 1 } else { k })
                            .collect()
                    })
                    .collect();
                let l = model.loss_grad(&ex.features, &ex.targets, &negs, Some(&mut rng), Some(&mut grad), w);
                epoch_loss += l.as_f64();
            }
            let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
            let clip = if config.clip_norm > 0.0 && norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
            step += 1;
            match config.optimizer {
                Optimizer::Sgd => {
                    let lr = S::of(config.lr * clip);
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p -= lr * *g;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for i in 0..n {
                        let g = grad[i].as_f64() * clip;
                        m1[i] = b1 * m1[i] + (1.0 - b1) * g;
                        m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
                        let upd = config.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                        model.params[i] -= S::of(upd);
                    }
                }
            }
            grad.iter_mut().for_each(|g| *g = S::zero());
        }
        log.epoch_losses.push(epoch_loss / data.len() as f64);
    }
    log
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub n_sessions: usize,
    pub n_steps: usize,
    /// Top-ranked action equals the logged action.
    pub accuracy: f64,
    /// Same, after the legality mask.
    pub masked_accuracy: f64,
    pub per_action_errors: BTreeMap<String, usize>,
}

/// Next-action accuracy of `model` on logged sessions.
pub fn evaluate_policy<S: Scalar>(
    model: &TedModel<S>,
    sessions: &[DialogueRecord],
    world: &World,
) -> Result<PolicyReport, TedError> {
    let mut rep = PolicyReport { n_sessions: sessions.len(), ..Default::default() };
    let (mut ok, mut ok_masked) = (0usize, 0usize);
    for s in sessions {
        let states = super::replay::replay_states(s, world, model.config.history)?;
        for (state, gold) in states {
            let ranked = ted_select(model, &state, world.schema);
            let top = &ranked[0].name;
            let masked = ranked.iter().find(|a| is_legal(&state, &a.name, world.schema)).map(|a| &a.name);
            rep.n_steps += 1;
            if *top == gold {
                ok += 1;
            } else {
                *rep.per_action_errors.entry(gold.clone()).or_default() += 1;
            }
            if masked == Some(&gold) {
                ok_masked += 1;
            }
        }
    }
    if rep.n_steps > 0 {
        rep.accuracy = ok as f64 / rep.n_steps as f64;
        rep.masked_accuracy = ok_masked as f64 / rep.n_steps as f64;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(actions: usize, seed: u64) -> TedModel<f64> {
        let cfg = TedConfig { d_model: 8, heads: 2, embed_dim: 4, history: 3, dropout: 0.0, seed, ..TedConfig::default() };
        let vocab = FeatureVocab::new((0..5).map(|i| format!("f{i}")));
        TedModel::new(vocab, (0..actions).map(|i| format!("a{i}")).collect(), cfg)
    }

    fn seq() -> Vec<StateFeatures> {
        [vec![0, 2], vec![1], vec![2, 3, 4], vec![0, 4]]
            .into_iter()
            .enumerate()
            .map(|(p, indices)| StateFeatures { indices, dim: 5, position: p, unknown: 0 })
            .collect()
    }

    #[test]
    fn closed_form_losses() {
        assert!((ted_loss(0.7_f64, &[0.7]) - 2f64.ln()).abs() < 1e-12);
        assert!((ted_loss(1.0_f64, &[-1.0]) - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert_eq!(ted_loss(3.0_f64, &[]), 0.0);
    }

    #[test]
    fn zero_action_table_scores_zero() {
        let mut m = toy(3, 1);
        let lay = m.layout();
        m.params[lay.act..].iter_mut().for_each(|p| *p = 0.0);
        let (_, scores) = ted_similarity(&m, &seq()).unwrap();
        assert!(scores.values().all(|&s| s == 0.0));
        assert!(matches!(ted_similarity(&m, &[]), Err(TedError::EmptyHistory)));
    }

    #[test]
    fn attention_is_causal() {
        let m = toy(3, 2);
        let full = m.score_sequence(&seq());
        let prefix = m.score_sequence(&seq()[..2]);
        for j in 0..2 {
            for (a, b) in full[j].iter().zip(&prefix[j]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_case_memorizes() {
        let mut m = toy(3, 4);
        let data = vec![EncodedSession { features: seq()[..1].to_vec(), targets: vec![2] }];
        let cfg = TedConfig { epochs: 300, batch_start: 1, batch_end: 1, lr: 0.05, ..m.config.clone() };
        let log = fit(&mut m, &data, &cfg);
        assert!(log.epoch_losses.last().unwrap() < &0.01);
        assert!(log.epoch_losses.last().unwrap() < &log.epoch_losses[0]);
    }

    #[test]
    fn text_round_trip() {
        let m = toy(2, 5);
        let back = TedModel::<f64>::from_text(&m.to_text().unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.score_sequence(&seq()), m.score_sequence(&seq()));
        assert!(matches!(TedModel::<f64>::from_text("{}"), Err(TedError::BadMagic)));
    }
}
