use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ObjectiveError;
use crate::linalg::{dot, Matrix};
use crate::oracle::Objective;
use crate::Scalar;

/// Parameters of the clustered regression-data generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub features: usize,
    /// Standard deviation of the cluster means.
    pub mean_spread: f64,
    pub noise_std: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self { clusters: 4, per_cluster: 25, features: 100, mean_spread: 3.0, noise_std: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset<S> {
    /// n × D, one sample per row.
    pub features: Matrix<S>,
    pub labels: Vec<S>,
    /// Projection vector and bias the labels were generated from.
    pub true_weights: Vec<S>,
    pub true_bias: S,
}

impl<S: Scalar> RegressionDataset<S> {
    pub fn samples(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Writes `x_0,…,x_{D-1},y` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ObjectiveError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.feature_dim()).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        for i in 0..self.samples() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format!("{:e}", v.to_f64_lossy())).collect();
            rec.push(format!("{:e}", self.labels[i].to_f64_lossy()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a dataset written by [`RegressionDataset::write_csv`]. The
    /// generating parameters are not stored and come back zeroed.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, ObjectiveError> {
        let mut rd = csv::Reader::from_reader(r);
        let cols = rd.headers()?.len();
        if cols < 2 {
            return Err(ObjectiveError::EmptyDataset);
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| ObjectiveError::Parse(s.to_string())))
                .collect::<Result<_, _>>()?;
            data.extend(vals[..cols - 1].iter().map(|&v| S::lit(v)));
            labels.push(S::lit(vals[cols - 1]));
        }
        if labels.is_empty() {
            return Err(ObjectiveError::EmptyDataset);
        }
        Ok(Self {
            features: Matrix::from_row_major(labels.len(), cols - 1, data),
            labels,
            true_weights: vec![S::zero(); cols - 1],
            true_bias: S::zero(),
        })
    }
}

/// Clustered Gaussian features with labels from a shared random projection,
/// a random bias and Gaussian label noise. Pure function of `seed`.
pub fn make_regression_dataset<S: Scalar>(seed: u64) -> RegressionDataset<S> {
    make_regression_dataset_with(&RegressionConfig::default(), seed)
}

pub fn make_regression_dataset_with<S: Scalar>(cfg: &RegressionConfig, seed: u64) -> RegressionDataset<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.features;
    let mut normal = move || rng.sample::<f64, _>(StandardNormal);
    let means: Vec<Vec<f64>> =
        (0..cfg.clusters).map(|_| (0..d).map(|_| cfg.mean_spread * normal()).collect()).collect();
    let v: Vec<f64> = (0..d).map(|_| normal()).collect();
    let b0 = normal();
    let n = cfg.clusters * cfg.per_cluster;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for mean in &means {
        for _ in 0..cfg.per_cluster {
            let x: Vec<f64> = mean.iter().map(|m| m + normal()).collect();
            let y = dot(&v, &x) + b0 + cfg.noise_std * normal();
            data.extend(x.iter().map(|&xi| S::lit(xi)));
            labels.push(S::lit(y));
        }
    }
    RegressionDataset {
        features: Matrix::from_row_major(n, d, data),
        labels,
        true_weights: v.into_iter().map(S::lit).collect(),
        true_bias: S::lit(b0),
    }
}

/// Mean of `r²/(c + r²)` over the dataset, `r = y − wᵀx − b`.
pub fn robust_loss<S: Scalar>(w: &[S], b: S, ds: &RegressionDataset<S>, c: S) -> Result<S, ObjectiveError> {
    check_args(w, ds, c)?;
    Ok(loss_unchecked(w, b, ds, c))
}

/// Gradient with respect to `(w, b)`, concatenated into a `D + 1` vector.
pub fn robust_loss_grad<S: Scalar>(w: &[S], b: S, ds: &RegressionDataset<S>, c: S) -> Result<Vec<S>, ObjectiveError> {
    check_args(w, ds, c)?;
    let mut g = vec![S::zero(); w.len() + 1];
    grad_unchecked(w, b, ds, c, &mut g);
    Ok(g)
}

fn check_args<S: Scalar>(w: &[S], ds: &RegressionDataset<S>, c: S) -> Result<(), ObjectiveError> {
    if !(c > S::zero()) {
        return Err(ObjectiveError::InvalidShape(c.to_f64_lossy()));
    }
    if w.len() != ds.feature_dim() {
        return Err(ObjectiveError::DimensionMismatch { expected: ds.feature_dim(), got: w.len() });
    }
    if ds.samples() == 0 {
        return Err(ObjectiveError::EmptyDataset);
    }
    Ok(())
}

fn loss_unchecked<S: Scalar>(w: &[S], b: S, ds: &RegressionDataset<S>, c: S) -> S {
    let total: S = (0..ds.samples())
        .map(|i| {
            let r = ds.labels[i] - dot(w, ds.features.row(i)) - b;
            let r2 = r * r;
            r2 / (c + r2)
        })
        .sum();
    total / S::from_usize_lossy(ds.samples())
}

fn grad_unchecked<S: Scalar>(w: &[S], b: S, ds: &RegressionDataset<S>, c: S, g: &mut [S]) {
    let dim = w.len();
    g.iter_mut().for_each(|v| *v = S::zero());
    let scale = S::lit(-2.0) / S::from_usize_lossy(ds.samples());
    for i in 0..ds.samples() {
        let row = ds.features.row(i);
        let r = ds.labels[i] - dot(w, row) - b;
        let denom = c + r * r;
        // d/dr [r²/(c+r²)] = 2rc/(c+r²)², and dr/d(w,b) = −(x, 1)
        let coef = scale * r * c / (denom * denom);
        for (gj, &xj) in g[..dim].iter_mut().zip(row) {
            *gj += coef * xj;
        }
        g[dim] += coef;
    }
}

/// Robust regression as an objective over `x = (w, b)`.
#[derive(Clone, Debug)]
pub struct RobustRegression<S> {
    pub dataset: RegressionDataset<S>,
    pub c: S,
}

impl<S: Scalar> RobustRegression<S> {
    pub fn new(dataset: RegressionDataset<S>, c: S) -> Result<Self, ObjectiveError> {
        if !(c > S::zero()) {
            return Err(ObjectiveError::InvalidShape(c.to_f64_lossy()));
        }
        if dataset.samples() == 0 {
            return Err(ObjectiveError::EmptyDataset);
        }
        Ok(Self { dataset, c })
    }

    /// Default task: generated dataset with c = 1.
    pub fn from_seed(seed: u64) -> Self {
        Self { dataset: make_regression_dataset(seed), c: S::one() }
    }
}

impl<S: Scalar> Objective<S> for RobustRegression<S> {
    fn dim(&self) -> usize {
        self.dataset.feature_dim() + 1
    }
    fn value(&self, x: &[S]) -> S {
        let d = self.dataset.feature_dim();
        loss_unchecked(&x[..d], x[d], &self.dataset, self.c)
    }
    fn gradient(&self, x: &[S], grad: &mut [S]) {
        let d = self.dataset.feature_dim();
        grad_unchecked(&x[..d], x[d], &self.dataset, self.c, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let ds = make_regression_dataset::<f64>(5);
        assert_eq!(ds.samples(), 100);
        assert_eq!(ds.feature_dim(), 100);
        assert!(ds.labels.iter().all(|y| y.is_finite()));
    }

    #[test]
    fn same_seed_same_data() {
        let a = make_regression_dataset::<f64>(17);
        let b = make_regression_dataset::<f64>(17);
        assert_eq!(a, b);
        assert_ne!(a, make_regression_dataset::<f64>(18));
    }

    #[test]
    fn noiseless_truth_has_zero_loss() {
        let cfg = RegressionConfig { noise_std: 0.0, ..Default::default() };
        let ds = make_regression_dataset_with::<f64>(&cfg, 2);
        let loss = robust_loss(&ds.true_weights, ds.true_bias, &ds, 1.0).unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn single_point_unit_residual() {
        let ds = RegressionDataset {
            features: Matrix::from_row_major(1, 2, vec![0.0, 0.0]),
            labels: vec![1.0],
            true_weights: vec![0.0; 2],
            true_bias: 0.0,
        };
        assert_eq!(robust_loss(&[0.0, 0.0], 0.0, &ds, 1.0).unwrap(), 0.5);
        assert!(matches!(robust_loss(&[0.0, 0.0], 0.0, &ds, 0.0), Err(ObjectiveError::InvalidShape(_))));
        assert!(robust_loss(&[0.0], 0.0, &ds, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_samples() {
        let cfg = RegressionConfig { features: 3, per_cluster: 2, ..Default::default() };
        let ds = make_regression_dataset_with::<f64>(&cfg, 1);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = RegressionDataset::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
    }
}
