use super::ObjectiveError;
use crate::oracle::Objective;
use crate::Scalar;

/// `Σ_{i<n-1} b(x_{i+1} − x_i²)² + (a − x_i)²`.
pub fn rosenbrock<S: Scalar>(x: &[S], a: S, b: S) -> Result<S, ObjectiveError> {
    if x.len() < 2 {
        return Err(ObjectiveError::DimensionTooSmall { min: 2, got: x.len() });
    }
    Ok(rosenbrock_unchecked(x, a, b))
}

pub fn rosenbrock_grad<S: Scalar>(x: &[S], a: S, b: S) -> Result<Vec<S>, ObjectiveError> {
    if x.len() < 2 {
        return Err(ObjectiveError::DimensionTooSmall { min: 2, got: x.len() });
    }
    let mut g = vec![S::zero(); x.len()];
    rosenbrock_grad_into(x, a, b, &mut g);
    Ok(g)
}

fn rosenbrock_unchecked<S: Scalar>(x: &[S], a: S, b: S) -> S {
    x.windows(2)
        .map(|w| {
            let t = w[1] - w[0] * w[0];
            let u = a - w[0];
            // each term is non-negative for b > 0, so |·| is the identity
            (b * t * t + u * u).abs()
        })
        .sum()
}

fn rosenbrock_grad_into<S: Scalar>(x: &[S], a: S, b: S, g: &mut [S]) {
    let two = S::lit(2.0);
    let four = S::lit(4.0);
    g.iter_mut().for_each(|v| *v = S::zero());
    for i in 0..x.len() - 1 {
        let t = x[i + 1] - x[i] * x[i];
        g[i] += -four * b * t * x[i] - two * (a - x[i]);
        g[i + 1] += two * b * t;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rosenbrock<S> {
    pub dim: usize,
    pub a: S,
    pub b: S,
}

impl<S: Scalar> Rosenbrock<S> {
    pub fn new(dim: usize, a: S, b: S) -> Result<Self, ObjectiveError> {
        if dim < 2 {
            return Err(ObjectiveError::DimensionTooSmall { min: 2, got: dim });
        }
        Ok(Self { dim, a, b })
    }

    /// Classical constants a = 1, b = 100.
    pub fn classic(dim: usize) -> Result<Self, ObjectiveError> {
        Self::new(dim, S::one(), S::lit(100.0))
    }
}

impl<S: Scalar> Objective<S> for Rosenbrock<S> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[S]) -> S {
        rosenbrock_unchecked(x, self.a, self.b)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        rosenbrock_grad_into(x, self.a, self.b, grad)
    }
}
