//! Two-armed bandit with a constant state, used to check the policy-gradient
//! machinery against quantities that can be enumerated exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{reinforce_step, Adam, EmaBaselines, TrainConfig, TrainError, Trajectory};
use crate::policy::{policy_sample, MetaPolicy, PolicyError, PolicyInput};
use crate::Scalar;

/// One-step episodes; action `a` pays `rewards[a]`.
#[derive(Clone, Copy, Debug)]
pub struct Bandit<S> {
    pub rewards: [S; 2],
}

impl<S: Scalar> Default for Bandit<S> {
    fn default() -> Self {
        Self { rewards: [S::zero(), S::one()] }
    }
}

impl<S: Scalar> Bandit<S> {
    pub fn state() -> PolicyInput<S> {
        PolicyInput::from_rows(&[vec![S::one(), S::lit(-0.5)]], 2)
    }

    /// A policy with two actions over the bandit's state.
    pub fn policy(hidden: usize, seed: u64) -> MetaPolicy<S> {
        MetaPolicy::init(2, hidden, 2, seed)
    }

    pub fn episode(&self, net: &MetaPolicy<S>, rng: &mut ChaCha8Rng) -> Result<Trajectory<S>, PolicyError> {
        let state = Self::state();
        let probs = net.forward(state.flat())?;
        let a = policy_sample(&probs, rng)?;
        Ok(Trajectory {
            states: vec![state],
            actions: vec![a],
            rewards: vec![self.rewards[a]],
            initial_value: S::zero(),
            final_value: S::zero(),
        })
    }

    /// `∇_θ E[r] = Σ_a π(a) r(a) ∇log π(a)`.
    pub fn exact_gradient(&self, net: &MetaPolicy<S>) -> Result<Vec<S>, PolicyError> {
        let state = Self::state();
        let probs = net.forward(state.flat())?;
        let mut g = vec![S::zero(); net.num_params()];
        for a in 0..2 {
            net.accumulate_logprob_grad(state.flat(), a, probs[a] * self.rewards[a], &mut g)?;
        }
        Ok(g)
    }

    /// Mean of `r(a) ∇log π(a)` over `samples` sampled episodes.
    pub fn estimated_gradient(&self, net: &MetaPolicy<S>, samples: usize, seed: u64) -> Result<Vec<S>, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = S::one() / S::from_usize_lossy(samples);
        let mut g = vec![S::zero(); net.num_params()];
        for _ in 0..samples {
            let t = self.episode(net, &mut rng)?;
            net.accumulate_logprob_grad(t.states[0].flat(), t.actions[0], t.rewards[0] * scale, &mut g)?;
        }
        Ok(g)
    }

    /// Trains with `reinforce_step` and returns `π(1)` after every update.
    pub fn train(&self, net: &mut MetaPolicy<S>, cfg: &TrainConfig<S>) -> Result<Vec<S>, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(net.num_params(), cfg.adam);
        let mut baselines = EmaBaselines::new(cfg.ema_decay);
        let mut history = Vec::with_capacity(cfg.episodes);
        let state = Self::state();
        let mut done = 0;
        while done < cfg.episodes {
            let count = cfg.batch.min(cfg.episodes - done);
            let batch = (0..count).map(|_| self.episode(net, &mut rng)).collect::<Result<Vec<_>, _>>()?;
            reinforce_step(net, &mut adam, &batch, &mut baselines, cfg)?;
            done += count;
            history.push(net.forward(state.flat())?[1]);
        }
        Ok(history)
    }
}

pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<S>();
    let na = a.iter().map(|&x| x * x).sum::<S>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<S>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_raises_the_paying_arm() {
        let b = Bandit::<f64>::default();
        let net = Bandit::<f64>::policy(4, 1);
        let g = b.exact_gradient(&net).unwrap();
        let p = net.forward(Bandit::<f64>::state().flat()).unwrap()[1];
        let mut moved = net.clone();
        for (t, gi) in moved.params_mut().iter_mut().zip(&g) {
            *t += 1e-3 * gi;
        }
        assert!(moved.forward(Bandit::<f64>::state().flat()).unwrap()[1] > p);
    }
}
