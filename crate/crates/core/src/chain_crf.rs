//! Linear-chain CRF inference.
//!
//! The parameter vector is stored as `theta = scale * weights` so that the
//! trainer can apply L2 shrinkage by touching a single scalar. Every routine
//! here reads the effective parameters through that product.
//!
//! All forward-backward quantities are kept in the log domain.

use std::sync::Arc;

use crate::corpus::{LabelAlphabet, Sentence};
use crate::error::{Error, Result};
use crate::features::{FeatureIndex, Instance, SparseVector};

#[inline]
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct ChainModel {
    index: Arc<FeatureIndex>,
    weights: Vec<f64>,
    scale: f64,
}

impl ChainModel {
    /// Zero weights, unit scale.
    pub fn new(index: Arc<FeatureIndex>) -> Self {
        let d = index.dim();
        ChainModel {
            index,
            weights: vec![0.0; d],
            scale: 1.0,
        }
    }

    pub fn from_weights(index: Arc<FeatureIndex>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != index.dim() {
            return Err(Error::LengthMismatch {
                left: index.dim(),
                right: weights.len(),
            });
        }
        Ok(ChainModel {
            index,
            weights,
            scale: 1.0,
        })
    }

    pub fn index(&self) -> &Arc<FeatureIndex> {
        &self.index
    }

    pub fn labels(&self) -> &LabelAlphabet {
        self.index.labels()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Scaled weights (`theta / scale`).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) {
        debug_assert!(scale > 0.0);
        self.scale = scale;
    }

    #[inline]
    pub fn effective_weight(&self, id: u32) -> f64 {
        self.scale * self.weights[id as usize]
    }

    /// `theta = scale * weights` as a dense vector.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| self.scale * w).collect()
    }

    /// Folds the scale into the weights and resets it to one.
    pub fn unscale(&mut self) {
        if self.scale != 1.0 {
            let z = self.scale;
            self.weights.iter_mut().for_each(|w| *w *= z);
            self.scale = 1.0;
        }
    }

    /// Sum of squared effective weights.
    pub fn squared_norm(&self) -> f64 {
        self.scale * self.scale * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn compile(&self, sentence: &Sentence) -> Instance {
        self.index.compile(sentence)
    }

    pub fn lattice(&self, inst: &Instance) -> Lattice {
        let l = self.index.num_labels();
        let t_len = inst.len();
        let mut unary = vec![0.0; t_len * l];
        for t in 0..t_len {
            let row = &mut unary[t * l..(t + 1) * l];
            for &a in inst.attributes(t) {
                for &(y, fid) in self.index.state_features(a) {
                    row[y as usize] += self.weights[fid as usize];
                }
            }
            row.iter_mut().for_each(|v| *v *= self.scale);
        }
        let mut transition = vec![0.0; l * l];
        for prev in 0..l {
            for cur in 0..l {
                transition[prev * l + cur] = self.effective_weight(self.index.transition_id(prev, cur));
            }
        }
        Lattice {
            len: t_len,
            num_labels: l,
            unary,
            transition,
        }
    }

    pub fn build_lattice(&self, sentence: &Sentence) -> Lattice {
        self.lattice(&self.compile(sentence))
    }

    /// Expected feature counts under the posteriors `post` of `inst`.
    pub fn expected_features(&self, inst: &Instance, post: &Posteriors) -> SparseVector {
        let l = post.num_labels;
        let mut pairs = Vec::new();
        for t in 0..inst.len() {
            let marg = post.unary_marginals(t);
            for &a in inst.attributes(t) {
                for &(y, fid) in self.index.state_features(a) {
                    pairs.push((fid, marg[y as usize]));
                }
            }
        }
        let mut trans = vec![0.0; l * l];
        for t in 0..inst.len().saturating_sub(1) {
            for (acc, p) in trans.iter_mut().zip(post.pairwise_marginals(t)) {
                *acc += p;
            }
        }
        for prev in 0..l {
            for cur in 0..l {
                pairs.push((self.index.transition_id(prev, cur), trans[prev * l + cur]));
            }
        }
        SparseVector::from_pairs(pairs)
    }

    /// `theta . Phi(x, y) - log Z(x)` for label ids.
    pub fn log_likelihood_ids(&self, inst: &Instance, labels: &[usize]) -> f64 {
        let lattice = self.lattice(inst);
        lattice.score(labels) - lattice.log_partition()
    }

    pub fn log_likelihood<S: AsRef<str>>(&self, sentence: &Sentence, labels: &[S]) -> Result<f64> {
        let ids = self.encode(sentence, labels)?;
        Ok(self.log_likelihood_ids(&self.compile(sentence), &ids))
    }

    /// Gradient of the negative log-likelihood, `E[Phi] - Phi(x, y)`, together
    /// with the negative log-likelihood itself.
    pub fn gradient_ids(&self, inst: &Instance, labels: &[usize]) -> (SparseVector, f64) {
        let lattice = self.lattice(inst);
        let post = forward_backward(&lattice);
        let expected = self.expected_features(inst, &post);
        let empirical = self.index.global_features(inst, labels);
        let nll = post.log_z - lattice.score(labels);
        (expected.sub(&empirical), nll)
    }

    pub fn stochastic_gradient<S: AsRef<str>>(&self, sentence: &Sentence, labels: &[S]) -> Result<SparseVector> {
        let ids = self.encode(sentence, labels)?;
        Ok(self.gradient_ids(&self.compile(sentence), &ids).0)
    }

    pub fn viterbi_ids(&self, inst: &Instance) -> Vec<usize> {
        viterbi(&self.lattice(inst)).0
    }

    pub fn viterbi(&self, sentence: &Sentence) -> Vec<String> {
        self.viterbi_ids(&self.compile(sentence))
            .into_iter()
            .map(|y| self.labels().name(y).to_string())
            .collect()
    }

    fn encode<S: AsRef<str>>(&self, sentence: &Sentence, labels: &[S]) -> Result<Vec<usize>> {
        if labels.len() != sentence.len() {
            return Err(Error::LengthMismatch {
                left: sentence.len(),
                right: labels.len(),
            });
        }
        self.labels().encode(labels)
    }
}

/// Log-potentials of one sentence: `T x L` unary scores and a
/// position-independent `L x L` transition matrix (row = previous label).
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    len: usize,
    num_labels: usize,
    unary: Vec<f64>,
    transition: Vec<f64>,
}

impl Lattice {
    pub fn new(len: usize, num_labels: usize, unary: Vec<f64>, transition: Vec<f64>) -> Result<Self> {
        if unary.len() != len * num_labels {
            return Err(Error::LengthMismatch {
                left: len * num_labels,
                right: unary.len(),
            });
        }
        if transition.len() != num_labels * num_labels {
            return Err(Error::LengthMismatch {
                left: num_labels * num_labels,
                right: transition.len(),
            });
        }
        if let Some(&v) = unary.iter().chain(&transition).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(v));
        }
        Ok(Lattice {
            len,
            num_labels,
            unary,
            transition,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn unary(&self, t: usize, y: usize) -> f64 {
        self.unary[t * self.num_labels + y]
    }

    #[inline]
    pub fn transition(&self, prev: usize, cur: usize) -> f64 {
        self.transition[prev * self.num_labels + cur]
    }

    /// Unnormalized log-score of a labeling.
    pub fn score(&self, labels: &[usize]) -> f64 {
        labels
            .iter()
            .enumerate()
            .map(|(t, &y)| self.unary(t, y) + if t > 0 { self.transition(labels[t - 1], y) } else { 0.0 })
            .sum()
    }

    pub fn log_partition(&self) -> f64 {
        let l = self.num_labels;
        let mut alpha: Vec<f64> = (0..l).map(|y| self.unary(0, y)).collect();
        let mut next = vec![0.0; l];
        for t in 1..self.len {
            for (cur, slot) in next.iter_mut().enumerate() {
                *slot = self.unary(t, cur) + log_sum_exp((0..l).map(|prev| alpha[prev] + self.transition(prev, cur)));
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        log_sum_exp(alpha.iter().copied())
    }
}

/// Forward-backward output for one lattice.
///
/// `pairwise_marginals(t)` is the joint of positions `t` and `t + 1`, laid out
/// row-major as `[prev * L + cur]`, so summing over `prev` gives
/// `unary_marginals(t + 1)`.
#[derive(Debug, Clone)]
pub struct Posteriors {
    len: usize,
    num_labels: usize,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    log_z: f64,
    unary: Vec<f64>,
    pairwise: Vec<f64>,
}

impl Posteriors {
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn log_alpha(&self, t: usize) -> &[f64] {
        &self.log_alpha[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn log_beta(&self, t: usize) -> &[f64] {
        &self.log_beta[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn unary_marginals(&self, t: usize) -> &[f64] {
        &self.unary[t * self.num_labels..(t + 1) * self.num_labels]
    }

    pub fn pairwise_marginals(&self, t: usize) -> &[f64] {
        let ll = self.num_labels * self.num_labels;
        &self.pairwise[t * ll..(t + 1) * ll]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn forward_backward(lattice: &Lattice) -> Posteriors {
    let (t_len, l) = (lattice.len, lattice.num_labels);
    let mut log_alpha = vec![0.0; t_len * l];
    let mut log_beta = vec![0.0; t_len * l];

    for (y, a) in log_alpha[..l].iter_mut().enumerate() {
        *a = lattice.unary(0, y);
    }
    for t in 1..t_len {
        let (done, rest) = log_alpha.split_at_mut(t * l);
        let prev_row = &done[(t - 1) * l..];
        for (cur, slot) in rest[..l].iter_mut().enumerate() {
            *slot =
                lattice.unary(t, cur) + log_sum_exp((0..l).map(|prev| prev_row[prev] + lattice.transition(prev, cur)));
        }
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        let (head, tail) = log_beta.split_at_mut((t + 1) * l);
        let next_row = &tail[..l];
        for (prev, slot) in head[t * l..].iter_mut().enumerate() {
            *slot = log_sum_exp(
                (0..l).map(|cur| lattice.transition(prev, cur) + lattice.unary(t + 1, cur) + next_row[cur]),
            );
        }
    }
    let log_z = log_sum_exp(log_alpha[(t_len - 1) * l..].iter().copied());

    let unary = log_alpha
        .iter()
        .zip(&log_beta)
        .map(|(a, b)| (a + b - log_z).exp())
        .collect();

    let mut pairwise = vec![0.0; t_len.saturating_sub(1) * l * l];
    for t in 0..t_len.saturating_sub(1) {
        let slice = &mut pairwise[t * l * l..(t + 1) * l * l];
        for prev in 0..l {
            let a = log_alpha[t * l + prev];
            for cur in 0..l {
                slice[prev * l + cur] =
                    (a + lattice.transition(prev, cur) + lattice.unary(t + 1, cur) + log_beta[(t + 1) * l + cur]
                        - log_z)
                        .exp();
            }
        }
    }

    Posteriors {
        len: t_len,
        num_labels: l,
        log_alpha,
        log_beta,
        log_z,
        unary,
        pairwise,
    }
}

/// Highest-scoring labeling and its score. Ties go to the smallest label id.
pub fn viterbi(lattice: &Lattice) -> (Vec<usize>, f64) {
    let (t_len, l) = (lattice.len, lattice.num_labels);
    let mut score: Vec<f64> = (0..l).map(|y| lattice.unary(0, y)).collect();
    let mut next = vec![0.0; l];
    let mut back = vec![0usize; t_len * l];
    for t in 1..t_len {
        for cur in 0..l {
            let mut best = 0;
            let mut best_score = score[0] + lattice.transition(0, cur);
            for (prev, &sp) in score.iter().enumerate().skip(1) {
                let s = sp + lattice.transition(prev, cur);
                if s > best_score {
                    best = prev;
                    best_score = s;
                }
            }
            back[t * l + cur] = best;
            next[cur] = best_score + lattice.unary(t, cur);
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    for y in 1..l {
        if score[y] > score[last] {
            last = y;
        }
    }
    let best_score = score[last];
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    (path, best_score)
}
