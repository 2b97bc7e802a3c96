//! One-hidden-layer ReLU classifier trained with softmax cross-entropy.
//!
//! Parameter layout (flat, in this order):
//! `W1` (H × P, row-major), `b1` (H), `W2` (C × H, row-major), `b2` (C),
//! where P is the input size, H the hidden width and C the number of
//! classes in the digit subset.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::idx::LabelledImages;
use super::ObjectiveError;
use crate::linalg::Vector;
use crate::oracle::Objective;
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct ClassifierSpec {
    pub data: LabelledImages,
    pub digit_subset: BTreeSet<u8>,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(data: LabelledImages, digit_subset: impl IntoIterator<Item = u8>) -> Self {
        Self { data, digit_subset: digit_subset.into_iter().collect(), hidden_units: 10, batch_size: 8192, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier<S> {
    // shared so task instances can be cloned cheaply
    inputs: Arc<Vec<S>>,
    targets: Arc<Vec<usize>>,
    input_dim: usize,
    hidden: usize,
    classes: usize,
    batch_size: usize,
    batch: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    batch_clamped: bool,
}

/// Filters the data to `digit_subset` (labels remapped to 0..C in ascending
/// digit order) and selects an initial minibatch. A batch larger than the
/// data is clamped to the full set; see [`Classifier::batch_was_clamped`].
pub fn make_classifier_objective<S: Scalar>(spec: &ClassifierSpec) -> Result<Classifier<S>, ObjectiveError> {
    if spec.digit_subset.is_empty() {
        return Err(ObjectiveError::EmptyDigitSubset);
    }
    let classes: Vec<u8> = spec.digit_subset.iter().copied().collect();
    let input_dim = spec.data.rows * spec.data.cols;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for i in 0..spec.data.len() {
        if let Ok(c) = classes.binary_search(&spec.data.labels[i]) {
            inputs.extend(spec.data.image(i).iter().map(|&p| S::lit(f64::from(p))));
            targets.push(c);
        }
    }
    if targets.is_empty() || input_dim == 0 || spec.hidden_units == 0 || spec.batch_size == 0 {
        return Err(ObjectiveError::EmptyDataset);
    }
    let n = targets.len();
    let batch_clamped = spec.batch_size > n;
    let mut obj = Classifier {
        inputs: Arc::new(inputs),
        targets: Arc::new(targets),
        input_dim,
        hidden: spec.hidden_units,
        classes: classes.len(),
        batch_size: spec.batch_size.min(n),
        batch: Vec::new(),
        order: (0..n).collect(),
        cursor: n,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        batch_clamped,
    };
    obj.next_batch();
    Ok(obj)
}

impl<S: Scalar> Classifier<S> {
    pub fn num_params(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> usize {
        self.targets.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn current_batch(&self) -> &[usize] {
        &self.batch
    }

    pub fn batch_was_clamped(&self) -> bool {
        self.batch_clamped
    }

    /// Minibatches per pass over the data.
    pub fn batches_per_epoch(&self) -> usize {
        self.samples().div_ceil(self.batch_size)
    }

    /// Restarts the minibatch stream from a new seed.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.order = (0..self.targets.len()).collect();
        self.cursor = self.targets.len();
        self.next_batch();
    }

    /// Weights drawn from N(0, 0.1²), biases zero.
    pub fn initial_parameters(&self, seed: u64) -> Vector<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vector::zeros(self.num_params());
        let (w1, rest) = theta.as_mut_slice().split_at_mut(self.hidden * self.input_dim);
        let (_b1, rest) = rest.split_at_mut(self.hidden);
        let (w2, _b2) = rest.split_at_mut(self.classes * self.hidden);
        for w in w1.iter_mut().chain(w2.iter_mut()) {
            *w = S::lit(0.1 * rng.sample::<f64, _>(StandardNormal));
        }
        theta
    }

    // Epoch-wise shuffling: batches walk a permutation, reshuffled when
    // exhausted, so every sample is seen once per epoch.
    fn next_batch(&mut self) {
        let n = self.targets.len();
        self.batch.clear();
        while self.batch.len() < self.batch_size {
            if self.cursor >= n {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (self.batch_size - self.batch.len()).min(n - self.cursor);
            self.batch.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
    }

    fn split<'a>(&self, theta: &'a [S]) -> (&'a [S], &'a [S], &'a [S], &'a [S]) {
        let (w1, rest) = theta.split_at(self.hidden * self.input_dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.classes * self.hidden);
        (w1, b1, w2, b2)
    }

    /// Mean cross-entropy over `samples`; accumulates the gradient when given.
    fn loss_over(&self, theta: &[S], samples: &[usize], mut grad: Option<&mut [S]>) -> S {
        let (w1, b1, w2, b2) = self.split(theta);
        let (h, c, p) = (self.hidden, self.classes, self.input_dim);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
        let inv_n = S::one() / S::from_usize_lossy(samples.len());
        let mut pre = vec![S::zero(); h];
        let mut act = vec![S::zero(); h];
        let mut logits = vec![S::zero(); c];
        let mut dhid = vec![S::zero(); h];
        let mut total = S::zero();
        for &s in samples {
            let x = &self.inputs[s * p..(s + 1) * p];
            for j in 0..h {
                pre[j] = b1[j] + crate::linalg::dot(&w1[j * p..(j + 1) * p], x);
                act[j] = pre[j].max(S::zero());
            }
            for k in 0..c {
                logits[k] = b2[k] + crate::linalg::dot(&w2[k * h..(k + 1) * h], &act);
            }
            let m = logits.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
            let z: S = logits.iter().map(|&l| (l - m).exp()).sum();
            let lse = m + z.ln();
            let target = self.targets[s];
            total += lse - logits[target];

            if let Some(g) = grad.as_deref_mut() {
                let (gw1, rest) = g.split_at_mut(h * p);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dhid.iter_mut().for_each(|v| *v = S::zero());
                for k in 0..c {
                    let mut dl = (logits[k] - lse).exp();
                    if k == target {
                        dl -= S::one();
                    }
                    dl *= inv_n;
                    gb2[k] += dl;
                    for j in 0..h {
                        gw2[k * h + j] += dl * act[j];
                        dhid[j] += dl * w2[k * h + j];
                    }
                }
                for j in 0..h {
                    if pre[j] > S::zero() {
                        gb1[j] += dhid[j];
                        crate::linalg::axpy(dhid[j], x, &mut gw1[j * p..(j + 1) * p]);
                    }
                }
            }
        }
        total * inv_n
    }
}

impl<S: Scalar> Objective<S> for Classifier<S> {
    fn dim(&self) -> usize {
        self.num_params()
    }

    fn value(&self, x: &[S]) -> S {
        self.loss_over(x, &self.batch, None)
    }

    fn gradient(&self, x: &[S], grad: &mut [S]) {
        self.loss_over(x, &self.batch, Some(grad));
    }

    fn is_stochastic(&self) -> bool {
        self.batch_size < self.targets.len()
    }

    fn resample(&mut self) {
        self.next_batch();
    }

    fn full_value(&self, x: &[S]) -> S {
        let all: Vec<usize> = (0..self.targets.len()).collect();
        self.loss_over(x, &all, None)
    }
}
