//! Task families sampled by the trainer and the evaluation harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Vector;
use crate::objectives::{
    make_quadratic, make_regression_dataset_with, Classifier, ObjectiveError, QuadraticSpec, RegressionConfig,
    RobustRegression, Rosenbrock,
};
use crate::oracle::Objective;
use crate::Scalar;

pub type BoxedObjective<S> = Box<dyn Objective<S> + Send>;

#[derive(Clone, Debug)]
pub enum TaskFamily<S> {
    Quadratic { dim: usize, condition_number: f64 },
    Rosenbrock { dim: usize, a: f64, b: f64 },
    RobustRegression { config: RegressionConfig, c: f64 },
    /// Instances share the data; each gets its own batch stream and
    /// initial weights.
    Classifier { template: Classifier<S> },
}

impl<S> TaskFamily<S> {
    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Quadratic { .. } => "quadratic",
            TaskFamily::Rosenbrock { .. } => "rosenbrock",
            TaskFamily::RobustRegression { .. } => "robust-regression",
            TaskFamily::Classifier { .. } => "classifier",
        }
    }
}

/// A family plus the generator seeds of its instances. Initial points are
/// Gaussian with standard deviation `x0_scale`, except for the classifier,
/// which uses its own weight initialisation.
#[derive(Clone, Debug)]
pub struct TaskDistribution<S> {
    pub family: TaskFamily<S>,
    pub seeds: Vec<u64>,
    pub x0_scale: f64,
}

pub struct Task<S> {
    pub objective: BoxedObjective<S>,
    pub x0: Vector<S>,
    pub task_seed: u64,
    pub x0_seed: u64,
}

impl<S: Scalar> TaskDistribution<S> {
    pub fn new(family: TaskFamily<S>, seeds: impl IntoIterator<Item = u64>) -> Self {
        Self { family, seeds: seeds.into_iter().collect(), x0_scale: 1.0 }
    }

    /// Same family with different instance seeds (e.g. held-out tasks).
    pub fn with_seeds(&self, seeds: impl IntoIterator<Item = u64>) -> Self {
        Self { family: self.family.clone(), seeds: seeds.into_iter().collect(), x0_scale: self.x0_scale }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Builds the instance for `task_seed` starting from the point drawn
    /// with `x0_seed`. Pure in both seeds.
    pub fn instance(&self, task_seed: u64, x0_seed: u64) -> Result<Task<S>, ObjectiveError> {
        let gaussian = |n: usize| -> Vector<S> {
            let mut rng = ChaCha8Rng::seed_from_u64(x0_seed);
            (0..n).map(|_| S::lit(self.x0_scale * rng.sample::<f64, _>(StandardNormal))).collect()
        };
        let (objective, x0): (BoxedObjective<S>, Vector<S>) = match &self.family {
            TaskFamily::Quadratic { dim, condition_number } => {
                let spec = QuadraticSpec { dim: *dim, condition_number: *condition_number, seed: task_seed };
                (Box::new(make_quadratic::<S>(&spec)?), gaussian(*dim))
            }
            TaskFamily::Rosenbrock { dim, a, b } => {
                // the instance is fixed; tasks differ by starting point
                (Box::new(Rosenbrock::<S>::new(*dim, S::lit(*a), S::lit(*b))?), gaussian(*dim))
            }
            TaskFamily::RobustRegression { config, c } => {
                let ds = make_regression_dataset_with::<S>(config, task_seed);
                let obj = RobustRegression::new(ds, S::lit(*c))?;
                let n = obj.dim();
                (Box::new(obj), gaussian(n))
            }
            TaskFamily::Classifier { template } => {
                let mut obj = template.clone();
                obj.reseed(task_seed);
                let x0 = obj.initial_parameters(x0_seed);
                (Box::new(obj), x0)
            }
        };
        Ok(Task { objective, x0, task_seed, x0_seed })
    }

    /// Picks a generator seed uniformly and draws a fresh starting point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Task<S>, ObjectiveError> {
        if self.seeds.is_empty() {
            return Err(ObjectiveError::EmptyDataset);
        }
        let task_seed = self.seeds[rng.random_range(0..self.seeds.len())];
        let x0_seed = rng.random::<u64>();
        self.instance(task_seed, x0_seed)
    }
}
