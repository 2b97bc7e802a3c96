use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ObjectiveError;
use crate::linalg::{dot, Matrix, Vector};
use crate::oracle::Objective;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub condition_number: f64,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self { dim: 100, condition_number: 1e3, seed: 0 }
    }
}

/// `f(x) = ½ xᵀAx − bᵀx` with A symmetric positive definite.
#[derive(Clone, Debug)]
pub struct Quadratic<S> {
    a: Matrix<S>,
    b: Vec<S>,
    eigenvalues: Vec<f64>,
}

/// Builds a random SPD quadratic: `A = Q diag(λ) Qᵀ` with Q a Haar-ish random
/// orthogonal matrix (QR of a Gaussian matrix) and λ log-uniform on
/// `[1, cond]` with both endpoints present. `b` is standard Gaussian.
pub fn make_quadratic<S: Scalar>(spec: &QuadraticSpec) -> Result<Quadratic<S>, ObjectiveError> {
    if spec.dim < 2 {
        return Err(ObjectiveError::DimensionTooSmall { min: 2, got: spec.dim });
    }
    if !(spec.condition_number >= 1.0) || !spec.condition_number.is_finite() {
        return Err(ObjectiveError::ConditionNumber(spec.condition_number));
    }
    let n = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let log_cond = spec.condition_number.ln();
    let mut eigenvalues: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => 1.0,
            i if i == n - 1 => spec.condition_number,
            _ => (rng.random::<f64>() * log_cond).exp(),
        })
        .collect();
    eigenvalues.sort_by(f64::total_cmp);

    let b: Vec<S> = (0..n).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect();

    let a = if spec.condition_number == 1.0 {
        Matrix::identity(n)
    } else {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
        let dense = &q * lambda * q.transpose();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                // exact symmetry
                a[(i, j)] = S::lit(0.5 * (dense[(i, j)] + dense[(j, i)]));
            }
        }
        a
    };
    Ok(Quadratic { a, b, eigenvalues })
}

impl<S: Scalar> Quadratic<S> {
    pub fn from_parts(a: Matrix<S>, b: Vec<S>) -> Self {
        assert_eq!(a.rows(), a.cols());
        assert_eq!(a.rows(), b.len());
        Self { a, b, eigenvalues: Vec::new() }
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.a
    }

    pub fn linear_term(&self) -> &[S] {
        &self.b
    }

    /// Spectrum the matrix was built from (empty for `from_parts`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `A⁻¹b` via Cholesky in f64.
    pub fn minimizer(&self) -> Vector<S> {
        let n = self.b.len();
        let a = DMatrix::from_fn(n, n, |i, j| self.a[(i, j)].to_f64_lossy());
        let b = DVector::from_iterator(n, self.b.iter().map(|v| v.to_f64_lossy()));
        let x = a.cholesky().expect("SPD matrix").solve(&b);
        x.iter().map(|&v| S::lit(v)).collect()
    }

    pub fn min_value(&self) -> S {
        self.value(self.minimizer().as_slice())
    }
}

impl<S: Scalar> Objective<S> for Quadratic<S> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[S]) -> S {
        let ax = self.a.mul_vec(x);
        S::lit(0.5) * dot(x, &ax) - dot(&self.b, x)
    }

    fn gradient(&self, x: &[S], grad: &mut [S]) {
        for (i, g) in grad.iter_mut().enumerate() {
            *g = dot(self.a.row(i), x) - self.b[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Oracle;

    #[test]
    fn rejects_bad_specs() {
        let bad = QuadraticSpec { dim: 5, condition_number: 0.5, seed: 1 };
        assert!(matches!(make_quadratic::<f64>(&bad), Err(ObjectiveError::ConditionNumber(_))));
        let tiny = QuadraticSpec { dim: 1, condition_number: 10.0, seed: 1 };
        assert!(make_quadratic::<f64>(&tiny).is_err());
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let q = make_quadratic::<f64>(&QuadraticSpec { dim: 20, condition_number: 100.0, seed: 3 }).unwrap();
        let o = Oracle::new(q);
        let xs = o.objective().minimizer();
        assert!(o.eval_grad(&xs).unwrap().norm_inf() < 1e-9);
    }

    #[test]
    fn unit_condition_gives_identity() {
        let q = make_quadratic::<f64>(&QuadraticSpec { dim: 6, condition_number: 1.0, seed: 9 }).unwrap();
        assert_eq!(q.matrix(), &Matrix::identity(6));
        let x = [1.0, 2.0, 0.0, -1.0, 0.5, 0.0];
        let expected = 0.5 * dot(&x, &x) - dot(q.linear_term(), &x);
        assert!((q.value(&x) - expected).abs() < 1e-15);
    }

    #[test]
    fn spectrum_spans_requested_range() {
        // oracle: symmetric eigendecomposition of the emitted matrix
        let spec = QuadraticSpec { dim: 30, condition_number: 1e3, seed: 11 };
        let q = make_quadratic::<f64>(&spec).unwrap();
        let a = DMatrix::from_fn(30, 30, |i, j| q.matrix()[(i, j)]);
        let eig = a.symmetric_eigen().eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 1.0).abs() < 1e-8, "min eigenvalue {lo}");
        assert!((hi - 1e3).abs() / 1e3 < 1e-8, "max eigenvalue {hi}");
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = QuadraticSpec { dim: 8, condition_number: 50.0, seed: 4 };
        let a = make_quadratic::<f64>(&spec).unwrap();
        let b = make_quadratic::<f64>(&spec).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.linear_term(), b.linear_term());
    }
}
