use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PolicyError;
use crate::linalg::dot;
use crate::Scalar;

pub const HIDDEN_WIDTH: usize = 128;

/// Two tanh hidden layers and a softmax output over eviction slots.
///
/// Parameters live in one flat vector: `W1, b1, W2, b2, W3, b3`, each weight
/// matrix row-major with shape `[fan_out][fan_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaPolicy<S> {
    sizes: [usize; 4],
    theta: Vec<S>,
}

struct Activations<S> {
    a1: Vec<S>,
    a2: Vec<S>,
    probs: Vec<S>,
}

impl<S: Scalar> MetaPolicy<S> {
    /// Zero parameters: the uniform policy.
    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        let sizes = [input, hidden, hidden, actions];
        let n = Self::count(&sizes);
        Self { sizes, theta: vec![S::zero(); n] }
    }

    /// Hidden weights uniform in `±1/√fan_in`, biases zero, output layer
    /// zero so training starts from the uniform policy.
    pub fn init(input: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input, hidden, actions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..2 {
            let (fan_in, fan_out) = (p.sizes[layer], p.sizes[layer + 1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let off = p.offset(layer);
            for w in &mut p.theta[off..off + fan_in * fan_out] {
                *w = S::lit(rng.random_range(-bound..bound));
            }
        }
        p
    }

    /// Standard shape for subspace dimension `d` and history depth `h`.
    pub fn for_subspace(d: usize, h: usize, include_gradient: bool, seed: u64) -> Self {
        let cols = d - 1 + usize::from(include_gradient);
        Self::init(h * cols, HIDDEN_WIDTH, d - 1, seed)
    }

    pub fn from_parts(sizes: [usize; 4], theta: Vec<S>) -> Result<Self, PolicyError> {
        if theta.len() != Self::count(&sizes) {
            return Err(PolicyError::Checkpoint(format!(
                "parameter count {} does not match layer sizes {:?}",
                theta.len(),
                sizes
            )));
        }
        Ok(Self { sizes, theta })
    }

    fn count(sizes: &[usize; 4]) -> usize {
        (0..3).map(|l| sizes[l] * sizes[l + 1] + sizes[l + 1]).sum()
    }

    /// Offset of layer `l`'s weight block; its bias follows immediately.
    fn offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]).sum()
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn actions(&self) -> usize {
        self.sizes[3]
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[S] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.theta
    }

    fn layer(&self, l: usize) -> (&[S], &[S]) {
        let off = self.offset(l);
        let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
        (&self.theta[off..off + fi * fo], &self.theta[off + fi * fo..off + fi * fo + fo])
    }

    fn dense(&self, l: usize, x: &[S], tanh: bool) -> Vec<S> {
        let (w, b) = self.layer(l);
        let fi = self.sizes[l];
        (0..self.sizes[l + 1])
            .map(|o| {
                let z = b[o] + dot(&w[o * fi..(o + 1) * fi], x);
                if tanh {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    fn activations(&self, input: &[S]) -> Result<Activations<S>, PolicyError> {
        if input.len() != self.sizes[0] {
            return Err(PolicyError::InputSize { expected: self.sizes[0], got: input.len() });
        }
        let a1 = self.dense(0, input, true);
        let a2 = self.dense(1, &a1, true);
        let logits = self.dense(2, &a2, false);
        let probs = softmax(&logits);
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(Activations { a1, a2, probs })
    }

    pub fn logits(&self, input: &[S]) -> Result<Vec<S>, PolicyError> {
        let a = self.activations(input)?;
        Ok(self.dense(2, &a.a2, false))
    }

    /// Action probabilities π(·|input).
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>, PolicyError> {
        Ok(self.activations(input)?.probs)
    }

    /// `∇_θ log π(action | input)`.
    pub fn logprob_grad(&self, input: &[S], action: usize) -> Result<Vec<S>, PolicyError> {
        let mut g = vec![S::zero(); self.theta.len()];
        self.accumulate_logprob_grad(input, action, S::one(), &mut g)?;
        Ok(g)
    }

    /// `out += scale · ∇_θ log π(action | input)`.
    pub fn accumulate_logprob_grad(&self, input: &[S], action: usize, scale: S, out: &mut [S]) -> Result<(), PolicyError> {
        let actions = self.sizes[3];
        if action >= actions {
            return Err(PolicyError::ActionOutOfRange { action, slots: actions });
        }
        assert_eq!(out.len(), self.theta.len());
        let act = self.activations(input)?;

        // d log softmax / d logits = e_a − π
        let delta3: Vec<S> = act
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| scale * (if k == action { S::one() } else { S::zero() } - p))
            .collect();
        let delta2 = self.backprop_layer(2, &delta3, &act.a2, out);
        let delta2: Vec<S> = delta2.iter().zip(&act.a2).map(|(&g, &a)| g * (S::one() - a * a)).collect();
        let delta1 = self.backprop_layer(1, &delta2, &act.a1, out);
        let delta1: Vec<S> = delta1.iter().zip(&act.a1).map(|(&g, &a)| g * (S::one() - a * a)).collect();
        self.backprop_layer(0, &delta1, input, out);

        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(PolicyError::NonFinite)
        }
    }

    /// Adds layer `l`'s weight/bias gradients for output error `delta` and
    /// returns the error propagated to its input (before the activation
    /// derivative).
    fn backprop_layer(&self, l: usize, delta: &[S], input: &[S], out: &mut [S]) -> Vec<S> {
        let off = self.offset(l);
        let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
        let (w, _) = self.layer(l);
        let mut back = vec![S::zero(); fi];
        for o in 0..fo {
            let d = delta[o];
            let row = &mut out[off + o * fi..off + (o + 1) * fi];
            for ((g, &x), (b, &wv)) in row.iter_mut().zip(input).zip(back.iter_mut().zip(&w[o * fi..(o + 1) * fi])) {
                *g += d * x;
                *b += d * wv;
            }
            out[off + fi * fo + o] += d;
        }
        back
    }
}

pub(crate) fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<S> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_distribution<S: Scalar>(probs: &[S]) -> Result<(), PolicyError> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < S::zero()) {
        return Err(PolicyError::InvalidDistribution);
    }
    let total: S = probs.iter().copied().sum();
    if (total - S::one()).abs() > S::lit(1e-6) {
        return Err(PolicyError::InvalidDistribution);
    }
    Ok(())
}

/// Inverse-CDF sample.
pub fn policy_sample<S: Scalar>(probs: &[S], rng: &mut dyn RngCore) -> Result<usize, PolicyError> {
    check_distribution(probs)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.to_f64_lossy();
        if u < acc {
            return Ok(i);
        }
    }
    // u landed in the rounding gap above the last partial sum
    Ok(probs.iter().rposition(|p| *p > S::zero()).unwrap_or(probs.len() - 1))
}

/// Argmax, lowest index on ties.
pub fn greedy_action<S: Scalar>(probs: &[S]) -> Result<usize, PolicyError> {
    check_distribution(probs)?;
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}
