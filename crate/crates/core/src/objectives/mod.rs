//! Benchmark objective families.

mod classifier;
pub mod idx;
mod quadratic;
mod regression;
mod rosenbrock;

use thiserror::Error;

pub use classifier::{make_classifier_objective, Classifier, ClassifierSpec};
pub use idx::{load_idx, load_mnist_train, IdxData, IdxError, LabelledImages};
pub use quadratic::{make_quadratic, Quadratic, QuadraticSpec};
pub use regression::{
    make_regression_dataset, make_regression_dataset_with, robust_loss, robust_loss_grad, RegressionConfig,
    RegressionDataset, RobustRegression,
};
pub use rosenbrock::{rosenbrock, rosenbrock_grad, Rosenbrock};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("condition number must be >= 1, got {0}")]
    ConditionNumber(f64),
    #[error("dimension must be at least {min}, got {got}")]
    DimensionTooSmall { min: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("loss shape constant must be positive, got {0}")]
    InvalidShape(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("digit subset is empty")]
    EmptyDigitSubset,
    #[error("cannot parse {0:?} as a number")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Idx(#[from] IdxError),
}
