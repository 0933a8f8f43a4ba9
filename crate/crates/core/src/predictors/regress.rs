//! Reference regressors: k-nearest-neighbour averaging and ridge regression.

use nalgebra::DMatrix;

use super::PredictorError;

/// Common contract of every learned head.
pub trait Regressor {
    fn fit(&mut self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(), PredictorError>;
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError>;
    fn is_fitted(&self) -> bool;
}

fn check_training_set(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(usize, usize), PredictorError> {
    if x.is_empty() {
        return Err(PredictorError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(PredictorError::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let d = x[0].len();
    let m = y[0].len();
    for (xi, yi) in x.iter().zip(y) {
        if xi.len() != d {
            return Err(PredictorError::DimensionMismatch { expected: d, found: xi.len() });
        }
        if yi.len() != m {
            return Err(PredictorError::DimensionMismatch { expected: m, found: yi.len() });
        }
        if xi.iter().chain(yi).any(|v| !v.is_finite()) {
            return Err(PredictorError::NonFinite);
        }
    }
    Ok((d, m))
}

/// Squared Euclidean distance with independent accumulators so the loop vectorizes.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            let d = pa[i] - pb[i];
            acc[i] += d * d;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    acc.iter().sum::<f64>() + tail
}

/// Mean of the `k` nearest training targets; ties go to the lower training index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnRegressor {
    pub k: usize,
    dim: usize,
    out_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl KnnRegressor {
    pub fn new(k: usize) -> Self {
        Self { k, dim: 0, out_dim: 0, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.inputs.len().checked_div(self.dim).unwrap_or(self.targets.len() / self.out_dim.max(1))
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub(crate) fn from_parts(k: usize, dim: usize, out_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Self {
        Self { k, dim, out_dim, inputs, targets }
    }

    pub(crate) fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub(crate) fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Indices of the `k` nearest training rows, nearest first.
    pub fn neighbors(&self, x: &[f64]) -> Result<Vec<usize>, PredictorError> {
        if !self.is_fitted() {
            return Err(PredictorError::NotFitted);
        }
        if x.len() != self.dim {
            return Err(PredictorError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let n = self.len();
        let mut dist: Vec<(f64, usize)> = if self.dim == 0 {
            (0..n).map(|i| (0.0, i)).collect()
        } else {
            self.inputs.chunks_exact(self.dim).enumerate().map(|(i, row)| (squared_distance(row, x), i)).collect()
        };
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < n {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }
}

impl Regressor for KnnRegressor {
    fn fit(&mut self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(), PredictorError> {
        let (d, m) = check_training_set(x, y)?;
        if self.k == 0 || self.k > x.len() {
            return Err(PredictorError::InvalidK { k: self.k, n: x.len() });
        }
        self.dim = d;
        self.out_dim = m;
        self.inputs = x.iter().flatten().copied().collect();
        self.targets = y.iter().flatten().copied().collect();
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        let idx = self.neighbors(x)?;
        let mut out = vec![0.0; self.out_dim];
        for &i in &idx {
            let row = &self.targets[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let k = idx.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        Ok(out)
    }

    fn is_fitted(&self) -> bool {
        !self.targets.is_empty()
    }
}

/// Cholesky solve that also rejects numerically rank-deficient systems.
fn solve_spd(a: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, PredictorError> {
    let n = a.nrows();
    let chol = a.cholesky().ok_or(PredictorError::Singular)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v * v));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min > max * f64::EPSILON * n as f64 * 16.0) {
        return Err(PredictorError::Singular);
    }
    Ok(chol.solve(rhs))
}

/// Ridge regression with an unregularized bias.
///
/// Inputs and targets are centered, which makes the bias drop out of the
/// penalty. The primal normal equations are solved when `d <= n`, the dual
/// (kernel) form otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRegressor {
    pub lambda: f64,
    /// `d x m` weights.
    weights: Option<DMatrix<f64>>,
    bias: Vec<f64>,
}

impl RidgeRegressor {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, weights: None, bias: Vec::new() }
    }

    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn from_parts(lambda: f64, weights: DMatrix<f64>, bias: Vec<f64>) -> Self {
        Self { lambda, weights: Some(weights), bias }
    }
}

impl Regressor for RidgeRegressor {
    fn fit(&mut self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(), PredictorError> {
        let (d, m) = check_training_set(x, y)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PredictorError::InvalidLambda(self.lambda));
        }
        let n = x.len();
        let xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
        let ym = DMatrix::from_fn(n, m, |i, j| y[i][j]);
        let x_mean = xm.row_mean();
        let y_mean = ym.row_mean();
        let mut xc = xm;
        for mut row in xc.row_iter_mut() {
            row -= &x_mean;
        }
        let mut yc = ym;
        for mut row in yc.row_iter_mut() {
            row -= &y_mean;
        }

        let w = if d <= n {
            let mut a = xc.tr_mul(&xc);
            for i in 0..d {
                a[(i, i)] += self.lambda;
            }
            let rhs = xc.tr_mul(&yc);
            solve_spd(a, &rhs)?
        } else {
            let mut k = &xc * xc.transpose();
            for i in 0..n {
                k[(i, i)] += self.lambda;
            }
            let alpha = solve_spd(k, &yc)?;
            xc.tr_mul(&alpha)
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(PredictorError::Singular);
        }
        let b = &y_mean - &x_mean * &w;
        self.bias = b.iter().copied().collect();
        self.weights = Some(w);
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        let w = self.weights.as_ref().ok_or(PredictorError::NotFitted)?;
        if x.len() != w.nrows() {
            return Err(PredictorError::DimensionMismatch { expected: w.nrows(), found: x.len() });
        }
        let mut out = self.bias.clone();
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * w[(i, j)];
            }
        }
        Ok(out)
    }

    fn is_fitted(&self) -> bool {
        self.weights.is_some()
    }
}

/// Which regressor family a head uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadSpec {
    Knn { k: usize },
    Ridge { lambda: f64 },
}

/// A fitted-or-unfitted head of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Knn(KnnRegressor),
    Ridge(RidgeRegressor),
}

impl Head {
    pub fn new(spec: HeadSpec) -> Self {
        match spec {
            HeadSpec::Knn { k } => Head::Knn(KnnRegressor::new(k)),
            HeadSpec::Ridge { lambda } => Head::Ridge(RidgeRegressor::new(lambda)),
        }
    }

    /// Builds and fits a head in one call.
    pub fn fitted(spec: HeadSpec, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self, PredictorError> {
        let mut h = Head::new(spec);
        h.fit(x, y)?;
        Ok(h)
    }
}

impl Regressor for Head {
    fn fit(&mut self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(), PredictorError> {
        match self {
            Head::Knn(h) => h.fit(x, y),
            Head::Ridge(h) => h.fit(x, y),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        match self {
            Head::Knn(h) => h.predict(x),
            Head::Ridge(h) => h.predict(x),
        }
    }

    fn is_fitted(&self) -> bool {
        match self {
            Head::Knn(h) => h.is_fitted(),
            Head::Ridge(h) => h.is_fitted(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn knn_memorizes_and_averages() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        let y = vec![vec![5.0], vec![0.0], vec![2.0]];
        let mut h = KnnRegressor::new(1);
        h.fit(&x, &y).unwrap();
        assert_eq!(h.predict(&[1.0, 0.0]).unwrap(), vec![0.0]);
        let mut h2 = KnnRegressor::new(2);
        h2.fit(&x[1..], &y[1..]).unwrap();
        assert_eq!(h2.predict(&[0.0, 0.0]).unwrap(), vec![1.0]);
        // equal distances to rows 1 and 2: the lower index wins
        assert_eq!(h.predict(&[0.0, 5.0]).unwrap(), vec![5.0]);
        h.fit(&x[1..], &y[1..]).unwrap();
        assert_eq!(h.predict(&[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn knn_errors() {
        let mut h = KnnRegressor::new(3);
        assert!(matches!(h.predict(&[0.0]), Err(PredictorError::NotFitted)));
        assert!(matches!(h.fit(&[], &[]), Err(PredictorError::EmptyTrainingSet)));
        assert!(matches!(h.fit(&[vec![0.0]], &[vec![1.0]]), Err(PredictorError::InvalidK { k: 3, n: 1 })));
    }

    #[test]
    fn knn_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_rows(&mut rng, 100, 6);
        let y: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, -(i as f64)]).collect();
        for k in [1, 4, 9] {
            let mut h = KnnRegressor::new(k);
            h.fit(&x, &y).unwrap();
            for q in random_rows(&mut rng, 20, 6) {
                let mut order: Vec<usize> = (0..100).collect();
                let d = |i: usize| -> f64 { x[i].iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum() };
                order.sort_by(|&a, &b| d(a).partial_cmp(&d(b)).unwrap().then(a.cmp(&b)));
                let mean: f64 = order[..k].iter().map(|&i| i as f64).sum::<f64>() / k as f64;
                let got = h.predict(&q).unwrap();
                assert_relative_eq!(got[0], mean, epsilon = 1e-12);
                assert_relative_eq!(got[1], -mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ridge_exact_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_rows(&mut rng, 30, 4);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![2.0 * r[0] - r[3] + 0.5, r[1] + r[2]]).collect();
        let mut h = RidgeRegressor::new(0.0);
        h.fit(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let p = h.predict(xi).unwrap();
            assert_relative_eq!(p[0], yi[0], epsilon = 1e-10);
            assert_relative_eq!(p[1], yi[1], epsilon = 1e-10);
        }
    }

    #[test]
    fn ridge_large_lambda_predicts_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_rows(&mut rng, 40, 5);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 3.0 + 1.0]).collect();
        let mean = y.iter().map(|v| v[0]).sum::<f64>() / 40.0;
        let mut h = RidgeRegressor::new(1e9);
        h.fit(&x, &y).unwrap();
        assert!(h.weights().unwrap().amax() < 1e-6);
        let p = h.predict(&[0.9, -0.9, 0.3, 0.1, 0.0]).unwrap();
        assert!((p[0] - mean).abs() < 1e-3);
    }

    #[test]
    fn ridge_singular_requires_lambda() {
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = vec![vec![1.0], vec![2.0], vec![3.0]];
        let mut h = RidgeRegressor::new(0.0);
        let err = h.fit(&x, &y).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"));
        h.lambda = 1e-3;
        h.fit(&x, &y).unwrap();
    }

    /// Independent solver: SVD least squares on the augmented system
    /// `[X 1; sqrt(lambda) I 0] w = [Y; 0]`.
    fn svd_oracle(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
        let (n, d, m) = (x.len(), x[0].len(), y[0].len());
        let mut a = DMatrix::zeros(n + d, d + 1);
        let mut b = DMatrix::zeros(n + d, m);
        for i in 0..n {
            for j in 0..d {
                a[(i, j)] = x[i][j];
            }
            a[(i, d)] = 1.0;
            for j in 0..m {
                b[(i, j)] = y[i][j];
            }
        }
        for j in 0..d {
            a[(n + j, j)] = lambda.sqrt();
        }
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        let w = sol.rows(0, d).into_owned();
        let bias = sol.row(d).iter().copied().collect();
        (w, bias)
    }

    #[test]
    fn ridge_matches_svd_oracle_primal_and_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, d, lambda) in [(50, 6, 0.0), (50, 6, 0.3), (12, 30, 0.05)] {
            let x = random_rows(&mut rng, n, d);
            let y = random_rows(&mut rng, n, 3);
            let mut h = RidgeRegressor::new(lambda);
            h.fit(&x, &y).unwrap();
            let (w, bias) = svd_oracle(&x, &y, lambda);
            let got = h.weights().unwrap();
            for (a, b) in got.iter().zip(w.iter()) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            for (a, b) in h.bias().iter().zip(&bias) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn heads_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_rows(&mut rng, 20, 3);
        let y = random_rows(&mut rng, 20, 2);
        for spec in [HeadSpec::Knn { k: 3 }, HeadSpec::Ridge { lambda: 0.1 }] {
            let a = Head::fitted(spec, &x, &y).unwrap();
            let b = Head::fitted(spec, &x, &y).unwrap();
            let q = [0.1, 0.2, -0.3];
            let pa = a.predict(&q).unwrap();
            let pb = b.predict(&q).unwrap();
            assert_eq!(
                pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
