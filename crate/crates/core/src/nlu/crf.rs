//! Linear-chain CRF over sparse binary token features.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bio_transition_ok, AnnotatedUtterance, NluError, Token};
use crate::drugdb::{normalize_text, DrugDatabase};
use crate::scalar::{log_sum_exp, Scalar};
use crate::taxonomy::values::{canonical_intake_unit, canonical_measure_unit, canonical_rhythm};

pub const FEATURE_EXTRACTOR_VERSION: &str = "crf-features/1";

/// Word lists whose hits become token features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gazetteer {
    pub brand_words: BTreeSet<String>,
    pub inn_words: BTreeSet<String>,
}

impl Gazetteer {
    pub fn from_db(db: &DrugDatabase) -> Self {
        let mut g = Gazetteer::default();
        for r in db.records() {
            g.brand_words.extend(normalize_text(&r.brand_name).split(' ').map(str::to_string));
            g.inn_words.extend(normalize_text(&r.inn).split(' ').map(str::to_string));
        }
        g
    }

    /// Gazetteer classes of a normalized token.
    pub fn classes(&self, w: &str) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.brand_words.contains(w) {
            out.push("brand");
        }
        if self.inn_words.contains(w) {
            out.push("inn");
        }
        if canonical_measure_unit(w).is_some() {
            out.push("unit");
        }
        if canonical_intake_unit(w).is_some() {
            out.push("intake");
        }
        if canonical_rhythm(w).is_some() {
            out.push("rhythm");
        }
        out
    }
}

fn shape(t: &Token) -> String {
    if t.is_numeric {
        "<num>".to_string()
    } else {
        t.normalized.clone()
    }
}

/// Feature strings for every position of a token sequence.
pub fn extract_features(tokens: &[Token], gaz: &Gazetteer) -> Vec<Vec<String>> {
    let words: Vec<String> = tokens.iter().map(shape).collect();
    let gazes: Vec<Vec<&'static str>> = tokens.iter().map(|t| gaz.classes(&t.normalized)).collect();
    let n = tokens.len();
    (0..n)
        .map(|i| {
            let w = &words[i];
            let mut f = vec!["bias".to_string(), format!("w={w}")];
            if tokens[i].is_numeric {
                f.push("num".into());
            } else {
                let chars: Vec<char> = w.chars().collect();
                if chars.len() > 2 {
                    f.push(format!("p2={}", chars[..2].iter().collect::<String>()));
                    f.push(format!("s2={}", chars[chars.len() - 2..].iter().collect::<String>()));
                }
            }
            for off in [-2i64, -1, 1, 2] {
                let j = i as i64 + off;
                let name = if j < 0 {
                    "<s>"
                } else if j as usize >= n {
                    "</s>"
                } else {
                    words[j as usize].as_str()
                };
                f.push(format!("w{off:+}={name}"));
            }
            if i + 1 < n {
                f.push(format!("w0+1={w}|{}", words[i + 1]));
            }
            for g in &gazes[i] {
                f.push(format!("gaz={g}"));
            }
            if i > 0 {
                for g in &gazes[i - 1] {
                    f.push(format!("gaz-1={g}"));
                }
            }
            if i + 1 < n {
                for g in &gazes[i + 1] {
                    f.push(format!("gaz+1={g}"));
                }
            }
            f
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CrfModel<S: Scalar> {
    pub labels: Vec<String>,
    pub features: Vec<String>,
    /// Row-major `features × labels`.
    pub emission: Vec<S>,
    /// Row-major `labels × labels`, indexed `[prev][next]`.
    pub transition: Vec<S>,
    pub gazetteer: Gazetteer,
    pub feature_extractor_version: String,
    #[serde(skip)]
    index: OnceLock<HashMap<String, usize>>,
}

impl<S: Scalar> CrfModel<S> {
    pub fn new(labels: Vec<String>, features: Vec<String>, gazetteer: Gazetteer) -> Self {
        let (f, l) = (features.len(), labels.len());
        Self {
            labels,
            features,
            emission: vec![S::zero(); f * l],
            transition: vec![S::zero(); l * l],
            gazetteer,
            feature_extractor_version: FEATURE_EXTRACTOR_VERSION.to_string(),
            index: OnceLock::new(),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    fn index(&self) -> &HashMap<String, usize> {
        self.index
            .get_or_init(|| self.features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Known feature ids per position; unknown features are dropped.
    pub fn feature_ids(&self, tokens: &[Token]) -> Vec<Vec<usize>> {
        let idx = self.index();
        extract_features(tokens, &self.gazetteer)
            .into_iter()
            .map(|fs| fs.iter().filter_map(|f| idx.get(f).copied()).collect())
            .collect()
    }

    /// Row-major `T × L` emission scores.
    pub fn emissions(&self, ids: &[Vec<usize>]) -> Vec<S> {
        let l = self.n_labels();
        let mut out = vec![S::zero(); ids.len() * l];
        for (t, fs) in ids.iter().enumerate() {
            let row = &mut out[t * l..(t + 1) * l];
            for &f in fs {
                for (y, r) in row.iter_mut().enumerate() {
                    *r += self.emission[f * l + y];
                }
            }
        }
        out
    }

    /// All weights, emission first.
    pub fn params(&self) -> Vec<S> {
        self.emission.iter().chain(&self.transition).copied().collect()
    }

    pub fn set_params(&mut self, p: &[S]) {
        let e = self.emission.len();
        self.emission.copy_from_slice(&p[..e]);
        self.transition.copy_from_slice(&p[e..]);
    }

    /// Start scores and transitions with `-inf` on moves that break BIO.
    pub fn bio_constraints(&self) -> (Vec<S>, Vec<S>) {
        let l = self.n_labels();
        let start = self
            .labels
            .iter()
            .map(|y| if bio_transition_ok(None, y) { S::zero() } else { S::neg_infinity() })
            .collect();
        let mut trans = self.transition.clone();
        for a in 0..l {
            for b in 0..l {
                if !bio_transition_ok(Some(&self.labels[a]), &self.labels[b]) {
                    trans[a * l + b] = S::neg_infinity();
                }
            }
        }
        (start, trans)
    }

    fn label_ids(&self, ex: &AnnotatedUtterance) -> Result<Vec<usize>, NluError> {
        ex.bio_labels
            .iter()
            .map(|y| {
                self.label_index(y).ok_or_else(|| NluError::UnknownLabel {
                    utterance: ex.utterance_id.clone(),
                    label: y.clone(),
                })
            })
            .collect()
    }
}

/// Highest-scoring label path. Ties go to the lower label index.
///
/// `emit` is `T × L`, `trans` is `L × L`, `start` has one score per label.
pub fn viterbi<S: Scalar>(emit: &[S], n_labels: usize, trans: &[S], start: &[S]) -> (Vec<usize>, S) {
    let l = n_labels;
    let t_len = emit.len() / l.max(1);
    if t_len == 0 || l == 0 {
        return (Vec::new(), S::zero());
    }
    let mut delta: Vec<S> = (0..l).map(|y| start[y] + emit[y]).collect();
    let mut back = vec![0usize; t_len * l];
    for t in 1..t_len {
        let mut next = vec![S::neg_infinity(); l];
        for y in 0..l {
            let mut best = S::neg_infinity();
            let mut arg = 0;
            for p in 0..l {
                let s = delta[p] + trans[p * l + y];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            next[y] = best + emit[t * l + y];
            back[t * l + y] = arg;
        }
        delta = next;
    }
    let mut last = 0;
    for y in 1..l {
        if delta[y] > delta[last] {
            last = y;
        }
    }
    let score = delta[last];
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    (path, score)
}

/// Unnormalized score of one label path.
pub fn path_score<S: Scalar>(emit: &[S], n_labels: usize, trans: &[S], start: &[S], path: &[usize]) -> S {
    let l = n_labels;
    let mut s = S::zero();
    for (t, &y) in path.iter().enumerate() {
        s += emit[t * l + y];
        s += if t == 0 { start[y] } else { trans[path[t - 1] * l + y] };
    }
    s
}

/// Log-space forward and backward tables (`T × L` each) and `ln Z`.
pub fn forward_backward<S: Scalar>(emit: &[S], n_labels: usize, trans: &[S]) -> (Vec<S>, Vec<S>, S) {
    let exp_trans: Vec<S> = trans.iter().map(|w| w.exp()).collect();
    forward_backward_with(emit, n_labels, &exp_trans)
}

/// `ln Σ_i w_i · exp(x_i)` for nonnegative weights, shifted by `max x`.
fn weighted_lse<S: Scalar>(shifted: &[S], shift: S, weights: impl Iterator<Item = S>) -> S {
    if shift == S::neg_infinity() {
        return shift;
    }
    let s: S = shifted.iter().zip(weights).map(|(&a, w)| a * w).sum();
    shift + s.ln()
}

/// Exponentiates `xs - max` into `out` and returns the max.
fn shift_exp<S: Scalar>(xs: impl Iterator<Item = S> + Clone, out: &mut [S]) -> S {
    let m = xs.clone().fold(S::neg_infinity(), S::max);
    for (o, x) in out.iter_mut().zip(xs) {
        *o = if m == S::neg_infinity() { S::zero() } else { (x - m).exp() };
    }
    m
}

/// The recursions run in probability space, rescaled at every position, with
/// `exp_trans` the element-wise exponential of the transition matrix. This
/// keeps the `L²` inner loop free of `exp` calls.
fn forward_backward_with<S: Scalar>(emit: &[S], n_labels: usize, exp_trans: &[S]) -> (Vec<S>, Vec<S>, S) {
    let l = n_labels;
    let t_len = emit.len() / l.max(1);
    let mut alpha = vec![S::zero(); t_len * l];
    let mut beta = vec![S::zero(); t_len * l];
    if t_len == 0 {
        return (alpha, beta, S::zero());
    }
    alpha[..l].copy_from_slice(&emit[..l]);
    let mut buf = vec![S::zero(); l];
    for t in 1..t_len {
        let m = shift_exp(alpha[(t - 1) * l..t * l].iter().copied(), &mut buf);
        for y in 0..l {
            alpha[t * l + y] = weighted_lse(&buf, m, (0..l).map(|p| exp_trans[p * l + y])) + emit[t * l + y];
        }
    }
    for t in (0..t_len - 1).rev() {
        let next = (0..l).map(|n| emit[(t + 1) * l + n] + beta[(t + 1) * l + n]);
        let m = shift_exp(next, &mut buf);
        for y in 0..l {
            beta[t * l + y] = weighted_lse(&buf, m, exp_trans[y * l..(y + 1) * l].iter().copied());
        }
    }
    let log_z = log_sum_exp(&alpha[(t_len - 1) * l..]);
    (alpha, beta, log_z)
}

/// Per-position label marginals, `T × L`.
pub fn marginals<S: Scalar>(alpha: &[S], beta: &[S], log_z: S) -> Vec<S> {
    alpha.iter().zip(beta).map(|(&a, &b)| (a + b - log_z).exp()).collect()
}

/// Viterbi decoding restricted to valid BIO sequences.
///
/// Returns the labels and the path score; `([], 0)` for no tokens.
pub fn crf_decode<S: Scalar>(model: &CrfModel<S>, tokens: &[Token]) -> (Vec<String>, S) {
    if tokens.is_empty() || model.n_labels() == 0 {
        return (Vec::new(), S::zero());
    }
    let emit = model.emissions(&model.feature_ids(tokens));
    let (start, trans) = model.bio_constraints();
    let (path, score) = viterbi(&emit, model.n_labels(), &trans, &start);
    (path.into_iter().map(|y| model.labels[y].clone()).collect(), score)
}

/// Log-likelihood of the gold labels and its gradient (layout of [`CrfModel::params`]).
pub fn crf_loglik_grad<S: Scalar>(
    model: &CrfModel<S>,
    example: &AnnotatedUtterance,
) -> Result<(S, Vec<S>), NluError> {
    let ids = model.feature_ids(&example.tokens);
    let gold = model.label_ids(example)?;
    let mut grad = vec![S::zero(); model.emission.len() + model.transition.len()];
    let exp_trans: Vec<S> = model.transition.iter().map(|w| w.exp()).collect();
    let ll = accumulate_grad(model, &ids, &gold, &mut grad, S::one(), &exp_trans, None);
    Ok((ll, grad))
}

/// Adds `scale · ∇ loglik` into `grad`, returning the log-likelihood.
/// Touched emission rows are recorded in `touched` when given.
fn accumulate_grad<S: Scalar>(
    model: &CrfModel<S>,
    ids: &[Vec<usize>],
    gold: &[usize],
    grad: &mut [S],
    scale: S,
    exp_trans: &[S],
    mut touched: Option<&mut Vec<usize>>,
) -> S {
    let l = model.n_labels();
    let t_len = gold.len();
    if t_len == 0 {
        return S::zero();
    }
    let emit = model.emissions(ids);
    let (alpha, beta, log_z) = forward_backward_with(&emit, l, exp_trans);
    let zero_start = vec![S::zero(); l];
    let ll = path_score(&emit, l, &model.transition, &zero_start, gold) - log_z;
    let marg = marginals(&alpha, &beta, log_z);
    let e_len = model.emission.len();
    for t in 0..t_len {
        for &f in &ids[t] {
            if let Some(tv) = touched.as_deref_mut() {
                tv.push(f);
            }
            let row = &mut grad[f * l..(f + 1) * l];
            for y in 0..l {
                row[y] -= scale * marg[t * l + y];
            }
            row[gold[t]] += scale;
        }
    }
    let tg = &mut grad[e_len..];
    // Pair marginals p(a, b) = exp(α[t-1,a] - ln Z) · exp(trans[a,b]) · exp(emit[t,b] + β[t,b]),
    // the last factor shifted by its maximum m and the first by +m.
    let mut right = vec![S::zero(); l];
    for t in 1..t_len {
        tg[gold[t - 1] * l + gold[t]] += scale;
        let m = shift_exp((0..l).map(|b| emit[t * l + b] + beta[t * l + b]), &mut right);
        if m == S::neg_infinity() {
            continue;
        }
        for a in 0..l {
            let left = scale * (alpha[(t - 1) * l + a] - log_z + m).exp();
            let row = &exp_trans[a * l..(a + 1) * l];
            for b in 0..l {
                tg[a * l + b] -= left * row[b] * right[b];
            }
        }
    }
    ll
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfTrainConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        Self { l2: 0.1, epochs: 30, lr: 0.1, batch_size: 16, seed: 7 }
    }
}

/// Mini-batch gradient ascent on `Σ loglik − (l2/2)·‖w‖²`.
///
/// Returns the model and the per-epoch regularized negative log-likelihood,
/// averaged over examples. The feature vocabulary is taken from `data`.
pub fn crf_train<S: Scalar>(
    data: &[AnnotatedUtterance],
    labels: &[String],
    gazetteer: Gazetteer,
    cfg: &CrfTrainConfig,
) -> Result<(CrfModel<S>, Vec<f64>), NluError> {
    if data.is_empty() {
        return Err(NluError::EmptyDataset);
    }
    let mut vocab = BTreeSet::new();
    let mut feats = Vec::with_capacity(data.len());
    for ex in data {
        let f = extract_features(&ex.tokens, &gazetteer);
        vocab.extend(f.iter().flatten().cloned());
        feats.push(f);
    }
    let mut model = CrfModel::<S>::new(labels.to_vec(), vocab.into_iter().collect(), gazetteer);
    let idx = model.index().clone();
    let mut encoded = Vec::with_capacity(data.len());
    for (ex, f) in data.iter().zip(feats) {
        let gold = model.label_ids(ex)?;
        let ids: Vec<Vec<usize>> = f.iter().map(|fs| fs.iter().map(|x| idx[x]).collect()).collect();
        encoded.push((ids, gold));
    }

    let n = data.len() as f64;
    let l = model.n_labels();
    let e_len = model.emission.len();
    let mut grad = vec![S::zero(); e_len + model.transition.len()];
    let mut touched = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    let decay = 1.0 - cfg.lr * cfg.l2 / n;
    let lr = S::of(cfg.lr);
    // Weight decay is applied lazily: row f has seen `applied[f]` of the
    // `step` decays so far and catches up before it is read or updated.
    let mut applied = vec![0usize; model.features.len()];
    let mut step = 0usize;
    let catch_up = |model: &mut CrfModel<S>, applied: &mut [usize], f: usize, step: usize| {
        if applied[f] < step {
            let k = S::of(decay.powi((step - applied[f]) as i32));
            for w in &mut model.emission[f * l..(f + 1) * l] {
                *w *= k;
            }
            applied[f] = step;
        }
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let b = batch.len() as f64;
            let scale = S::of(1.0 / b);
            for &i in batch {
                for &f in encoded[i].0.iter().flatten() {
                    catch_up(&mut model, &mut applied, f, step);
                }
            }
            let exp_trans: Vec<S> = model.transition.iter().map(|w| w.exp()).collect();
            for &i in batch {
                let (ids, gold) = &encoded[i];
                accumulate_grad(&model, ids, gold, &mut grad, scale, &exp_trans, Some(&mut touched));
            }
            step += 1;
            touched.sort_unstable();
            touched.dedup();
            for &f in &touched {
                catch_up(&mut model, &mut applied, f, step);
                for y in 0..l {
                    let k = f * l + y;
                    model.emission[k] += lr * grad[k];
                    grad[k] = S::zero();
                }
            }
            touched.clear();
            let d = S::of(decay);
            for (w, g) in model.transition.iter_mut().zip(grad[e_len..].iter_mut()) {
                *w = *w * d + lr * *g;
                *g = S::zero();
            }
        }
        for f in 0..applied.len() {
            catch_up(&mut model, &mut applied, f, step);
        }
        log.push(regularized_nll(&model, &encoded, cfg.l2));
    }
    Ok((model, log))
}

fn regularized_nll<S: Scalar>(model: &CrfModel<S>, encoded: &[(Vec<Vec<usize>>, Vec<usize>)], l2: f64) -> f64 {
    let l = model.n_labels();
    let zero_start = vec![S::zero(); l];
    let mut ll = 0.0;
    for (ids, gold) in encoded {
        if gold.is_empty() {
            continue;
        }
        let emit = model.emissions(ids);
        let (_, _, log_z) = forward_backward(&emit, l, &model.transition);
        ll += (path_score(&emit, l, &model.transition, &zero_start, gold) - log_z).as_f64();
    }
    let sq: f64 = model.emission.iter().chain(&model.transition).map(|w| w.as_f64().powi(2)).sum();
    (-ll + 0.5 * l2 * sq) / encoded.len() as f64
}
