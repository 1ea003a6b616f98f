//! Mixand splitting.
//!
//! A split is solved once, offline, for the zero-mean unit Gaussian along the
//! first axis: `N` evenly spaced components with spacing `δ_μ`, common
//! covariance `diag(σ², 1, …, 1)` and weights minimizing the
//! integral-squared difference to `N(0, I)`. At runtime the cached solution is
//! mapped onto an arbitrary mixand and axis through `x = T·Rᵀ·x̂ + μ`, where
//! `T` is a square root of the mixand covariance and `R` a reflection taking
//! the whitened axis `T⁻¹·e_split` onto `e₁`.
//!
//! Because every non-split coordinate keeps unit variance, the n-dimensional
//! objective factorizes into the one-dimensional objective times
//! `(4π)^{-(n-1)/2}`; the library stores the one-dimensional value.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{matrix_sqrt, Gaussian, HybridMixand};
use crate::io::to_json_17;
use crate::qp::{QpSolution, SimplexQp};

pub const DEFAULT_COUNTS: [usize; 7] = [3, 5, 7, 9, 11, 13, 15];
pub const DEFAULT_SIGMAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_RUNTIME_N: usize = 5;
pub const DEFAULT_RUNTIME_SIGMA: f64 = 0.3;

/// Keys in a library match when sigmas agree to this tolerance.
const SIGMA_KEY_TOLERANCE: f64 = 1e-9;

/// Exhaustive search range for the spacing parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadGrid {
    pub max: f64,
    pub step: f64,
}

impl Default for SpreadGrid {
    fn default() -> Self {
        SpreadGrid { max: 4.0, step: 1e-3 }
    }
}

impl SpreadGrid {
    pub fn points(&self) -> Vec<f64> {
        let count = (self.max / self.step).round() as usize;
        (0..=count).map(|i| i as f64 * self.step).collect()
    }
}

/// Cached split of `N(0, I)` along `e₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSplit {
    pub n: usize,
    pub sigma: f64,
    pub delta_mu: f64,
    pub weights: Vec<f64>,
    /// One-dimensional integral-squared difference achieved.
    pub isd: f64,
}

impl CanonicalSplit {
    pub fn identity() -> Self {
        CanonicalSplit {
            n: 1,
            sigma: 1.0,
            delta_mu: 0.0,
            weights: vec![1.0],
            isd: 0.0,
        }
    }

    /// Component offsets `(i − (N−1)/2)·δ_μ` along the split axis.
    pub fn offsets(&self) -> Vec<f64> {
        component_offsets(self.n, self.delta_mu)
    }

    /// Canonical components in `dim` dimensions.
    pub fn components(&self, dim: usize) -> Vec<(f64, Gaussian)> {
        let mut cov = DMatrix::identity(dim, dim);
        cov[(0, 0)] = self.sigma * self.sigma;
        self.offsets()
            .into_iter()
            .zip(&self.weights)
            .map(|(o, &w)| {
                let mut mean = DVector::zeros(dim);
                mean[0] = o;
                (w, Gaussian::new_unchecked(mean, cov.clone()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % 2 == 0 {
            return Err(Error::InvalidSplitCount(self.n));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::InvalidSigma(self.sigma));
        }
        if self.weights.len() != self.n {
            return Err(Error::InvalidLibrary(format!(
                "entry N={} has {} weights",
                self.n,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidLibrary(format!("entry N={} has a negative weight", self.n)));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLibrary(format!(
                "entry N={} weights sum to {total}",
                self.n
            )));
        }
        for i in 0..self.n / 2 {
            if (self.weights[i] - self.weights[self.n - 1 - i]).abs() > 1e-8 {
                return Err(Error::InvalidLibrary(format!(
                    "entry N={} sigma={} weights are not symmetric",
                    self.n, self.sigma
                )));
            }
        }
        if !(self.delta_mu >= 0.0) || !self.isd.is_finite() {
            return Err(Error::InvalidLibrary(format!("entry N={} has invalid spread or isd", self.n)));
        }
        Ok(())
    }
}

pub fn component_offsets(n: usize, delta_mu: f64) -> Vec<f64> {
    let center = (n as f64 - 1.0) / 2.0;
    (0..n).map(|i| (i as f64 - center) * delta_mu).collect()
}

fn normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `∫ N(x|0,1)² dx`
pub fn unit_self_overlap() -> f64 {
    1.0 / (4.0 * PI).sqrt()
}

/// Weight QP for one-dimensional components at `means` with variance `sigma²`
/// approximating `N(0, 1)`.
pub fn weight_qp(means: &[f64], sigma: f64) -> Result<SimplexQp> {
    let n = means.len();
    let var = sigma * sigma;
    let h = DMatrix::from_fn(n, n, |l, k| normal_1d(means[l], means[k], 2.0 * var));
    let f = DVector::from_fn(n, |l, _| normal_1d(0.0, means[l], 1.0 + var));
    SimplexQp::new(h, f)
}

pub fn solve_weight_qp(means: &[f64], sigma: f64) -> Result<QpSolution> {
    weight_qp(means, sigma)?.solve()
}

/// Grid search over the spacing with QP-optimal weights at each spacing.
pub fn optimize_canonical_split(n: usize, sigma: f64, grid: &SpreadGrid) -> Result<CanonicalSplit> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidSplitCount(n));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    if n == 1 {
        let sol = solve_weight_qp(&[0.0], sigma)?;
        return Ok(CanonicalSplit {
            n,
            sigma,
            delta_mu: 0.0,
            weights: vec![1.0],
            isd: (unit_self_overlap() + sol.objective).max(0.0),
        });
    }
    let spreads = grid.points();
    let results: Vec<Result<(f64, Vec<f64>)>> = spreads
        .par_iter()
        .map(|&delta| {
            let qp = weight_qp(&component_offsets(n, delta), sigma)?;
            let sol = qp.solve()?;
            let w = symmetric_weights(sol.weights.as_slice());
            let objective = qp.objective(&DVector::from_column_slice(&w));
            Ok((unit_self_overlap() + objective, w))
        })
        .collect();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let (isd, w) = r?;
        if best.as_ref().is_none_or(|(_, b, _)| isd < *b) {
            best = Some((i, isd, w));
        }
    }
    let (i, isd, weights) = best.ok_or(Error::QpInfeasible)?;
    Ok(CanonicalSplit {
        n,
        sigma,
        delta_mu: spreads[i],
        weights,
        isd,
    })
}

/// Averages mirrored weights; the problem is symmetric, so by convexity this
/// never increases the objective.
fn symmetric_weights(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut out: Vec<f64> = (0..n).map(|i| 0.5 * (w[i] + w[n - 1 - i]).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Replaces a mixand by the cached split along `axis`.
pub fn apply_split(m: &HybridMixand, axis: &DVector<f64>, split: &CanonicalSplit) -> Result<Vec<HybridMixand>> {
    let dim = m.gaussian.dim();
    if axis.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: axis.len(),
        });
    }
    if split.n == 1 {
        return Ok(vec![m.clone()]);
    }
    let axis_norm = axis.norm();
    if !(axis_norm > 0.0) {
        return Err(Error::InvalidConfig("split axis has zero length".into()));
    }
    let t = matrix_sqrt(&m.gaussian.covariance)?;
    let diag = t.diagonal();
    let max = diag.amax();
    if !(diag.amin() > 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularCovariance);
    }
    let whitened = t
        .solve_lower_triangular(&(axis / axis_norm))
        .ok_or(Error::SingularCovariance)?;
    let u = &whitened / whitened.norm();
    let reflection = householder_to_e1(&u);
    let map = &t * reflection.transpose();

    let mut canonical_cov = DMatrix::identity(dim, dim);
    canonical_cov[(0, 0)] = split.sigma * split.sigma;
    let child_cov = &map * canonical_cov * map.transpose();
    let direction = map.column(0).into_owned();

    Ok(split
        .offsets()
        .into_iter()
        .zip(&split.weights)
        .map(|(offset, &w)| HybridMixand {
            weight: m.weight * w,
            discrete: m.discrete.clone(),
            gaussian: Gaussian::new_unchecked(&m.gaussian.mean + &direction * offset, child_cov.clone()),
        })
        .collect())
}

/// Symmetric orthogonal `R` with `R·u = e₁` for a unit vector `u`.
pub fn householder_to_e1(u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut v = u.clone();
    v[0] -= 1.0;
    let vv = v.norm_squared();
    if vv < 1e-28 {
        return DMatrix::identity(n, n);
    }
    DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv)
}

/// Precomputed canonical splits keyed by `(N, σ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitLibrary {
    pub grid_step: f64,
    pub entries: Vec<CanonicalSplit>,
}

impl SplitLibrary {
    /// Optimizes every `(N, σ)` pair in the cartesian product, in order.
    pub fn build(counts: &[usize], sigmas: &[f64], grid: &SpreadGrid) -> Result<Self> {
        let mut entries = Vec::with_capacity(counts.len() * sigmas.len());
        for &n in counts {
            for &sigma in sigmas {
                entries.push(optimize_canonical_split(n, sigma, grid)?);
            }
        }
        Ok(SplitLibrary {
            grid_step: grid.step,
            entries,
        })
    }

    pub fn build_default() -> Result<Self> {
        SplitLibrary::build(&DEFAULT_COUNTS, &DEFAULT_SIGMAS, &SpreadGrid::default())
    }

    pub fn get(&self, n: usize, sigma: f64) -> Result<&CanonicalSplit> {
        if n == 1 {
            static IDENTITY: std::sync::OnceLock<CanonicalSplit> = std::sync::OnceLock::new();
            return Ok(IDENTITY.get_or_init(CanonicalSplit::identity));
        }
        self.entries
            .iter()
            .find(|e| e.n == n && (e.sigma - sigma).abs() <= SIGMA_KEY_TOLERANCE)
            .ok_or(Error::MissingSplit { n, sigma })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0) {
            return Err(Error::InvalidLibrary("grid_step must be positive".into()));
        }
        self.entries.iter().try_for_each(CanonicalSplit::validate)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lib: SplitLibrary = serde_json::from_str(text)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SplitLibrary::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        to_json_17(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json().as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
