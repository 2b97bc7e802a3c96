//! Eviction policies: which stored step leaves the subspace.

mod checkpoint;
mod mlp;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use mlp::{greedy_action, policy_sample, MetaPolicy, HIDDEN_WIDTH};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no filled slots to choose from")]
    NoFilledSlots,
    #[error("action {action} out of range for {slots} slots")]
    ActionOutOfRange { action: usize, slots: usize },
    #[error("input has length {got}, network expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("non-finite parameters or activations")]
    NonFinite,
    #[error("invalid probability vector")]
    InvalidDistribution,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The step-size history Ω: `lags × cols`, row 0 the most recent inner
/// solve, column `j < slots` the coefficient of stored step `j`. When the
/// gradient coefficient is included it occupies the last column. Entries
/// with no data are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput<S> {
    history: Vec<S>,
    lags: usize,
    cols: usize,
    slots: usize,
    slots_filled: usize,
}

impl<S: Scalar> PolicyInput<S> {
    pub fn zeros(lags: usize, slots: usize, include_gradient: bool) -> Self {
        let cols = slots + usize::from(include_gradient);
        Self { history: vec![S::zero(); lags * cols], lags, cols, slots, slots_filled: 0 }
    }

    /// Builds an input from rows given most recent first.
    pub fn from_rows(rows: &[Vec<S>], slots_filled: usize) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { history: rows.concat(), lags: rows.len(), cols, slots: cols, slots_filled }
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn slots_filled(&self) -> usize {
        self.slots_filled
    }

    pub fn get(&self, lag: usize, col: usize) -> S {
        self.history[lag * self.cols + col]
    }

    pub fn row(&self, lag: usize) -> &[S] {
        &self.history[lag * self.cols..(lag + 1) * self.cols]
    }

    /// Lag-major flattening fed to the network.
    pub fn flat(&self) -> &[S] {
        &self.history
    }

    /// Shifts every column one lag older and writes `latest` into row 0.
    pub(crate) fn push_row(&mut self, latest: &[S]) {
        assert_eq!(latest.len(), self.cols);
        if self.lags == 0 {
            return;
        }
        self.history.copy_within(0..(self.lags - 1) * self.cols, self.cols);
        self.history[..self.cols].copy_from_slice(latest);
    }

    /// Removes step column `slot`, shifting later step columns left and
    /// zeroing the freed last step column.
    pub(crate) fn evict_slot(&mut self, slot: usize) {
        assert!(slot < self.slots);
        for lag in 0..self.lags {
            let row = &mut self.history[lag * self.cols..lag * self.cols + self.slots];
            row.copy_within(slot + 1.., slot);
            row[self.slots - 1] = S::zero();
        }
        self.slots_filled = self.slots_filled.saturating_sub(1);
    }

    pub(crate) fn set_filled(&mut self, filled: usize) {
        self.slots_filled = filled.min(self.slots);
    }
}

/// Outcome of one eviction query.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision<S> {
    pub action: usize,
    /// Action distribution, for stochastic policies.
    pub probs: Option<Vec<S>>,
}

impl<S> Decision<S> {
    pub fn deterministic(action: usize) -> Self {
        Self { action, probs: None }
    }
}

pub trait EvictionPolicy<S: Scalar> {
    fn name(&self) -> String;

    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError>;
}

impl<S: Scalar, P: EvictionPolicy<S> + ?Sized> EvictionPolicy<S> for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError> {
        (**self).select(input)
    }
}

/// Oldest stored step.
pub fn fifo_select<S: Scalar>(_input: &PolicyInput<S>) -> usize {
    0
}

/// Slot whose most recent coefficient has the smallest magnitude; ties go
/// to the lowest index.
pub fn rb_select<S: Scalar>(input: &PolicyInput<S>) -> Result<usize, PolicyError> {
    let filled = input.slots_filled().min(input.slots());
    if filled == 0 || input.lags() == 0 {
        return Err(PolicyError::NoFilledSlots);
    }
    let row = input.row(0);
    let mut best = 0;
    for j in 1..filled {
        if row[j].abs() < row[best].abs() {
            best = j;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Fifo;

impl<S: Scalar> EvictionPolicy<S> for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }
    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError> {
        Ok(Decision::deterministic(fifo_select(input)))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBased;

impl<S: Scalar> EvictionPolicy<S> for RuleBased {
    fn name(&self) -> String {
        "rb".into()
    }
    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError> {
        Ok(Decision::deterministic(rb_select(input)?))
    }
}

/// The singular policy δ(a, i): always evict slot `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delta {
    slot: usize,
}

impl Delta {
    pub fn slot(&self) -> usize {
        self.slot
    }
}

/// δ(a, i) for a subspace of dimension `d` (valid for `i ≤ d − 2`).
pub fn delta_select(i: usize, d: usize) -> Result<Delta, PolicyError> {
    let slots = d.saturating_sub(1);
    if i >= slots {
        return Err(PolicyError::ActionOutOfRange { action: i, slots });
    }
    Ok(Delta { slot: i })
}

impl<S: Scalar> EvictionPolicy<S> for Delta {
    fn name(&self) -> String {
        format!("delta-{}", self.slot)
    }
    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError> {
        if self.slot >= input.slots() {
            return Err(PolicyError::ActionOutOfRange { action: self.slot, slots: input.slots() });
        }
        Ok(Decision::deterministic(self.slot))
    }
}

#[derive(Clone, Debug)]
pub enum SelectionMode {
    /// Sample from π with a seeded generator.
    Sample(ChaCha8Rng),
    /// Most probable action, lowest index on ties.
    Greedy,
}

/// A [`MetaPolicy`] network used as an eviction policy.
#[derive(Clone, Debug)]
pub struct Learned<S> {
    pub net: MetaPolicy<S>,
    pub mode: SelectionMode,
}

impl<S: Scalar> Learned<S> {
    pub fn sampling(net: MetaPolicy<S>, seed: u64) -> Self {
        Self { net, mode: SelectionMode::Sample(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn greedy(net: MetaPolicy<S>) -> Self {
        Self { net, mode: SelectionMode::Greedy }
    }
}

impl<S: Scalar> EvictionPolicy<S> for Learned<S> {
    fn name(&self) -> String {
        match self.mode {
            SelectionMode::Sample(_) => "learned".into(),
            SelectionMode::Greedy => "learned-greedy".into(),
        }
    }

    fn select(&mut self, input: &PolicyInput<S>) -> Result<Decision<S>, PolicyError> {
        let probs = self.net.forward(input.flat())?;
        let action = match &mut self.mode {
            SelectionMode::Sample(rng) => policy_sample(&probs, rng as &mut dyn RngCore)?,
            SelectionMode::Greedy => greedy_action(&probs)?,
        };
        Ok(Decision { action, probs: Some(probs) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn latest(row: &[f64]) -> PolicyInput<f64> {
        PolicyInput::from_rows(&[row.to_vec(), vec![0.0; row.len()]], row.len())
    }

    #[test]
    fn fifo_always_oldest() {
        let mut p = Fifo;
        for row in [[0.5, -0.01, 2.0], [9.0, 9.0, 9.0]] {
            for _ in 0..3 {
                assert_eq!(EvictionPolicy::<f64>::select(&mut p, &latest(&row)).unwrap().action, 0);
            }
        }
    }

    #[test]
    fn rule_based_examples() {
        assert_eq!(rb_select(&latest(&[0.5, -0.01, 2.0])).unwrap(), 1);
        assert_eq!(rb_select(&latest(&[0.3, -0.3, 0.7])).unwrap(), 0);
        assert_eq!(rb_select(&latest(&[0.0, 0.0, 0.0])).unwrap(), 0);
        let empty = PolicyInput::<f64>::zeros(2, 3, false);
        assert!(matches!(rb_select(&empty), Err(PolicyError::NoFilledSlots)));
    }

    #[test]
    fn rule_based_ignores_unfilled_slots() {
        let input = PolicyInput::from_rows(&[vec![0.4, 0.2, 0.0]], 2);
        assert_eq!(rb_select(&input).unwrap(), 1);
    }

    #[test]
    fn delta_policies() {
        let input = latest(&[1.0; 9]);
        let mut newest = delta_select(8, 10).unwrap();
        assert_eq!(EvictionPolicy::<f64>::select(&mut newest, &input).unwrap().action, 8);
        let mut five = delta_select(5, 10).unwrap();
        assert_eq!(EvictionPolicy::<f64>::select(&mut five, &input).unwrap().action, 5);
        assert!(delta_select(9, 10).is_err());
    }

    #[test]
    fn history_shift_and_evict() {
        let mut h = PolicyInput::<f64>::zeros(3, 3, false);
        h.push_row(&[1.0, 2.0, 3.0]);
        h.push_row(&[4.0, 5.0, 6.0]);
        assert_eq!(h.row(0), &[4.0, 5.0, 6.0]);
        assert_eq!(h.row(1), &[1.0, 2.0, 3.0]);
        assert_eq!(h.row(2), &[0.0, 0.0, 0.0]);
        h.set_filled(3);
        h.evict_slot(1);
        assert_eq!(h.row(0), &[4.0, 6.0, 0.0]);
        assert_eq!(h.row(1), &[1.0, 3.0, 0.0]);
        assert_eq!(h.slots_filled(), 2);
    }

    #[test]
    fn history_with_gradient_column_keeps_it_in_place() {
        let mut h = PolicyInput::<f64>::zeros(1, 2, true);
        h.push_row(&[1.0, 2.0, 9.0]);
        h.evict_slot(0);
        assert_eq!(h.row(0), &[2.0, 0.0, 9.0]);
    }

    proptest! {
        #[test]
        fn rb_invariant_to_sign_and_scale(
            row in prop::collection::vec(-10.0f64..10.0, 1..12),
            signs in prop::collection::vec(any::<bool>(), 12),
            scale in 1e-3f64..1e3,
        ) {
            let flipped: Vec<f64> = row.iter().zip(&signs).map(|(v, &s)| if s { -v * scale } else { v * scale }).collect();
            prop_assert_eq!(rb_select(&latest(&row)).unwrap(), rb_select(&latest(&flipped)).unwrap());
        }

        #[test]
        fn fifo_matches_delta_zero(row in prop::collection::vec(-5.0f64..5.0, 2..10)) {
            let input = latest(&row);
            let mut d0 = delta_select(0, row.len() + 1).unwrap();
            prop_assert_eq!(fifo_select(&input), EvictionPolicy::<f64>::select(&mut d0, &input).unwrap().action);
        }
    }
}
