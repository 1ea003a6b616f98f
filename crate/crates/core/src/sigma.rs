//! Augmented sigma-point transform.
//!
//! A mixand `N(μ, Σ)` and the process noise `N(0, Σ_v)` are encoded jointly by
//! `1 + 2n_x + 2n_v` deterministic points. Index layout (0-based):
//!
//! | index                      | state point χ     | noise point Υ      |
//! |----------------------------|-------------------|--------------------|
//! | 0                          | μ                 | 0                  |
//! | 1 ..= n_x                  | μ + γ·S_x[:, j]   | 0                  |
//! | n_x+1 ..= 2n_x             | μ − γ·S_x[:, j]   | 0                  |
//! | 2n_x+1 ..= 2n_x+n_v        | μ                 | +γ·S_v[:, j]       |
//! | 2n_x+n_v+1 ..= 2n_x+2n_v   | μ                 | −γ·S_v[:, j]       |
//!
//! with `γ = sqrt(n_x + n_v + λ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{matrix_sqrt, symmetrize, DiscreteState, Gaussian, ProcessNoise};

/// Classical kurtosis-matching choice `λ = 3 − (n_x + n_v)`.
pub fn default_lambda(n_x: usize, n_v: usize) -> f64 {
    3.0 - (n_x + n_v) as f64
}

#[derive(Clone, Debug)]
pub struct SigmaSet {
    /// State points χ, one column each.
    pub state_points: DMatrix<f64>,
    /// Noise points Υ, one column each (zero rows when `n_v = 0`).
    pub noise_points: DMatrix<f64>,
    pub lambda: f64,
    pub gamma: f64,
}

impl SigmaSet {
    pub fn len(&self) -> usize {
        self.state_points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_points.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_points.nrows()
    }

    /// The `2n_x + 1` points tied to state uncertainty (no noise offsets).
    pub fn state_subset(&self) -> DMatrix<f64> {
        let m = 2 * self.state_dim() + 1;
        self.state_points.columns(0, m).into_owned()
    }

    pub fn weights(&self) -> RecombinationWeights {
        RecombinationWeights::new(self.state_dim(), self.noise_dim(), self.lambda)
    }
}

/// Mean and covariance weights for recombining propagated points.
#[derive(Clone, Debug, PartialEq)]
pub struct RecombinationWeights {
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl RecombinationWeights {
    /// `W_m[0] = λ/(λ+n)`, `W_c[0] = λ/(λ+n) + 2`, all others `1/(2(λ+n))`
    /// with `n = n_x + n_v`.
    pub fn new(n_x: usize, n_v: usize, lambda: f64) -> Self {
        let n = (n_x + n_v) as f64;
        let count = 1 + 2 * (n_x + n_v);
        let rest = 1.0 / (2.0 * (lambda + n));
        let mut mean_weights = vec![rest; count];
        let mut cov_weights = vec![rest; count];
        mean_weights[0] = lambda / (lambda + n);
        cov_weights[0] = lambda / (lambda + n) + 2.0;
        RecombinationWeights {
            mean_weights,
            cov_weights,
        }
    }
}

/// Builds the augmented sigma-point set for `g` and `noise`.
pub fn generate_sigma_points(g: &Gaussian, noise: &ProcessNoise, lambda: f64) -> Result<SigmaSet> {
    let n_x = g.dim();
    let n_v = noise.dim();
    let n = (n_x + n_v) as f64;
    if !(lambda > -n) {
        return Err(Error::InvalidConfig(format!(
            "sigma-point lambda must exceed -(n_x + n_v) = {}, got {lambda}",
            -n
        )));
    }
    let gamma = (n + lambda).sqrt();
    let s_x = matrix_sqrt(&g.covariance)?;
    let count = 1 + 2 * (n_x + n_v);

    let mut state_points = DMatrix::zeros(n_x, count);
    let mut noise_points = DMatrix::zeros(n_v, count);
    for j in 0..count {
        state_points.set_column(j, &g.mean);
    }
    for j in 0..n_x {
        let offset = s_x.column(j) * gamma;
        let mut plus = state_points.column_mut(1 + j);
        plus += &offset;
        let mut minus = state_points.column_mut(1 + n_x + j);
        minus -= &offset;
    }
    let s_v = noise.sqrt();
    for j in 0..n_v {
        let offset = s_v.column(j) * gamma;
        noise_points.set_column(1 + 2 * n_x + j, &offset);
        noise_points.set_column(1 + 2 * n_x + n_v + j, &(-offset));
    }
    Ok(SigmaSet {
        state_points,
        noise_points,
        lambda,
        gamma,
    })
}

/// Pushes each `(χ_j, Υ_j)` pair through `f` independently.
pub fn propagate_points<F>(set: &SigmaSet, alpha_next: &DiscreteState, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&DiscreteState, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    let count = set.len();
    let mut out: Option<DMatrix<f64>> = None;
    for j in 0..count {
        let x = set.state_points.column(j).into_owned();
        let v = set.noise_points.column(j).into_owned();
        let y = f(alpha_next, &x, &v)?;
        let out = out.get_or_insert_with(|| DMatrix::zeros(y.len(), count));
        if y.len() != out.nrows() {
            return Err(Error::DimensionMismatch {
                expected: out.nrows(),
                found: y.len(),
            });
        }
        out.set_column(j, &y);
    }
    Ok(out.unwrap_or_else(|| DMatrix::zeros(set.state_dim(), 0)))
}

/// Weighted mean and covariance of propagated points.
pub fn recombine(points: &DMatrix<f64>, w: &RecombinationWeights) -> Result<Gaussian> {
    let count = points.ncols();
    if w.mean_weights.len() != count || w.cov_weights.len() != count {
        return Err(Error::DimensionMismatch {
            expected: w.mean_weights.len(),
            found: count,
        });
    }
    let n = points.nrows();
    let mut mean = DVector::zeros(n);
    for j in 0..count {
        mean.axpy(w.mean_weights[j], &points.column(j), 1.0);
    }
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..count {
        let d = points.column(j) - &mean;
        cov.ger(w.cov_weights[j], &d, &d, 1.0);
    }
    Ok(Gaussian::new_unchecked(mean, symmetrize(&cov)))
}

/// One unscented prediction of `g` through `f` with no linearity gating.
pub fn unscented_predict<F>(
    g: &Gaussian,
    noise: &ProcessNoise,
    lambda: f64,
    alpha_next: &DiscreteState,
    f: F,
) -> Result<Gaussian>
where
    F: Fn(&DiscreteState, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    let set = generate_sigma_points(g, noise, lambda)?;
    let points = propagate_points(&set, alpha_next, f)?;
    recombine(&points, &set.weights())
}
