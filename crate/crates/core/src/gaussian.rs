//! Distribution types shared by every stage of the pipeline: Gaussians,
//! hybrid mixands carrying a discrete hypothesis, and the normalized hybrid
//! mixture itself. Also hosts the matrix square root, density evaluation and
//! the closed-form integral-squared difference used by the split optimizer.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry and positive-semidefiniteness checks.
pub const MATRIX_TOLERANCE: f64 = 1e-9;

/// Mixands lighter than this after normalization are dropped.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Opaque discrete hypothesis attached to a mixand (for road models, the
/// committed route as `seg>seg>...`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteState(pub String);

impl DiscreteState {
    pub fn new(s: impl Into<String>) -> Self {
        DiscreteState(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DiscreteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for DiscreteState {
    fn from(s: &str) -> Self {
        DiscreteState(s.to_owned())
    }
}

/// Multivariate normal distribution over the continuous state.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Gaussian {
    /// Builds a Gaussian after checking shape, symmetry and semidefiniteness.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: covariance.nrows(),
            });
        }
        check_symmetric(&covariance)?;
        check_psd(&covariance)?;
        Ok(Gaussian { mean, covariance })
    }

    /// Skips validation; the covariance is symmetrized.
    pub fn new_unchecked(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Gaussian {
            mean,
            covariance: symmetrize(&covariance),
        }
    }

    pub fn from_slices(mean: &[f64], covariance_rows: &[&[f64]]) -> Result<Self> {
        let n = mean.len();
        if covariance_rows.len() != n || covariance_rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: covariance_rows.len(),
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| covariance_rows[i][j]);
        Gaussian::new(DVector::from_column_slice(mean), cov)
    }

    pub fn standard(n: usize) -> Self {
        Gaussian {
            mean: DVector::zeros(n),
            covariance: DMatrix::identity(n, n),
        }
    }

    pub fn scalar(mean: f64, variance: f64) -> Self {
        Gaussian {
            mean: DVector::from_element(1, mean),
            covariance: DMatrix::from_element(1, 1, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Density at `x`.
    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        gaussian_pdf(self, x)
    }

    /// Precomputed evaluator for repeated density queries.
    pub fn density(&self) -> GaussianDensity {
        GaussianDensity::new(self)
    }

    /// Marginal over the given coordinate indices.
    pub fn marginal(&self, indices: &[usize]) -> Gaussian {
        let m = indices.len();
        Gaussian {
            mean: DVector::from_fn(m, |i, _| self.mean[indices[i]]),
            covariance: DMatrix::from_fn(m, m, |i, j| {
                self.covariance[(indices[i], indices[j])]
            }),
        }
    }
}

/// Gaussian process noise entering the continuous dynamics. A zero-dimensional
/// noise is allowed and yields a noise-free sigma-point set.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessNoise {
    covariance: DMatrix<f64>,
    sqrt: DMatrix<f64>,
}

impl ProcessNoise {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != covariance.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariance.nrows(),
                found: covariance.ncols(),
            });
        }
        check_symmetric(&covariance)?;
        let covariance = symmetrize(&covariance);
        let sqrt = if covariance.nrows() == 0 {
            DMatrix::zeros(0, 0)
        } else {
            covariance
                .clone()
                .cholesky()
                .ok_or(Error::IndefiniteMatrix {
                    eigenvalue: covariance.clone().symmetric_eigenvalues().min(),
                    tolerance: 0.0,
                })?
                .l()
        };
        Ok(ProcessNoise { covariance, sqrt })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        ProcessNoise::new(DMatrix::from_diagonal(&DVector::from_column_slice(
            variances,
        )))
    }

    pub fn none() -> Self {
        ProcessNoise {
            covariance: DMatrix::zeros(0, 0),
            sqrt: DMatrix::zeros(0, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the noise covariance.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }
}

/// One weighted component of a hybrid mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridMixand {
    pub weight: f64,
    pub discrete: DiscreteState,
    pub gaussian: Gaussian,
}

impl HybridMixand {
    pub fn new(weight: f64, discrete: impl Into<DiscreteState>, gaussian: Gaussian) -> Self {
        HybridMixand {
            weight,
            discrete: discrete.into(),
            gaussian,
        }
    }
}

impl From<String> for DiscreteState {
    fn from(s: String) -> Self {
        DiscreteState(s)
    }
}

/// Normalized weighted set of hybrid mixands at time index `time_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridMixture {
    pub mixands: Vec<HybridMixand>,
    pub time_index: usize,
}

impl HybridMixture {
    /// Validates and normalizes the weights.
    pub fn new(mixands: Vec<HybridMixand>, time_index: usize) -> Result<Self> {
        let first = mixands.first().ok_or(Error::EmptyMixture)?;
        let n = first.gaussian.dim();
        for m in &mixands {
            if m.gaussian.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: m.gaussian.dim(),
                });
            }
            if !(m.weight > 0.0) || !m.weight.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "mixand weight must be positive, got {}",
                    m.weight
                )));
            }
        }
        let mut mix = HybridMixture {
            mixands,
            time_index,
        };
        mix.normalize();
        Ok(mix)
    }

    pub fn single(discrete: impl Into<DiscreteState>, gaussian: Gaussian) -> Self {
        HybridMixture {
            mixands: vec![HybridMixand::new(1.0, discrete, gaussian)],
            time_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.mixands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixands.is_empty()
    }

    /// Continuous-state dimension, zero for an empty mixture.
    pub fn dim(&self) -> usize {
        self.mixands.first().map_or(0, |m| m.gaussian.dim())
    }

    pub fn total_weight(&self) -> f64 {
        self.mixands.iter().map(|m| m.weight).sum()
    }

    /// Rescales weights to sum to one.
    pub fn normalize(&mut self) {
        let total = self.total_weight();
        if total > 0.0 {
            for m in &mut self.mixands {
                m.weight /= total;
            }
        }
    }

    /// Drops mixands below `floor` and renormalizes. The heaviest mixand is
    /// always kept.
    pub fn prune(&mut self, floor: f64) {
        self.normalize();
        if self.mixands.iter().all(|m| m.weight >= floor) {
            return;
        }
        let heaviest = self
            .mixands
            .iter()
            .enumerate()
            .fold(0, |best, (i, m)| {
                if m.weight > self.mixands[best].weight {
                    i
                } else {
                    best
                }
            });
        let mut i = 0;
        self.mixands.retain(|m| {
            let keep = m.weight >= floor || i == heaviest;
            i += 1;
            keep
        });
        self.normalize();
    }

    /// Distinct discrete hypotheses in order of first appearance.
    pub fn hypotheses(&self) -> Vec<&DiscreteState> {
        let mut seen: Vec<&DiscreteState> = Vec::new();
        for m in &self.mixands {
            if !seen.contains(&&m.discrete) {
                seen.push(&m.discrete);
            }
        }
        seen
    }

    /// Density of the continuous marginal (summed across hypotheses).
    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let mut total = 0.0;
        for m in &self.mixands {
            total += m.weight * gaussian_pdf(&m.gaussian, x)?;
        }
        Ok(total)
    }

    /// Marginal over a subset of continuous coordinates, hypotheses kept.
    pub fn marginal(&self, indices: &[usize]) -> HybridMixture {
        HybridMixture {
            mixands: self
                .mixands
                .iter()
                .map(|m| HybridMixand {
                    weight: m.weight,
                    discrete: m.discrete.clone(),
                    gaussian: m.gaussian.marginal(indices),
                })
                .collect(),
            time_index: self.time_index,
        }
    }

    pub fn components(&self) -> Vec<(f64, Gaussian)> {
        self.mixands
            .iter()
            .map(|m| (m.weight, m.gaussian.clone()))
            .collect()
    }
}

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).norm() / scale;
    if asym > MATRIX_TOLERANCE {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 || symmetrize(a).cholesky().is_some() {
        return Ok(());
    }
    let min = symmetrize(a).symmetric_eigenvalues().min();
    let tolerance = MATRIX_TOLERANCE * a.trace().abs();
    if min < -tolerance {
        return Err(Error::IndefiniteMatrix {
            eigenvalue: min,
            tolerance,
        });
    }
    Ok(())
}

/// Lower-triangular `S` with `S·Sᵀ = cov`.
///
/// Cholesky is tried first. Semidefinite inputs fall back to an eigen
/// decomposition with small negative eigenvalues clamped to zero; the
/// resulting factor is re-triangularized through a QR step so the output is
/// always lower triangular.
pub fn matrix_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            found: cov.ncols(),
        });
    }
    check_symmetric(cov)?;
    let sym = symmetrize(cov);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let n = sym.nrows();
    let eig = sym.clone().symmetric_eigen();
    let tolerance = MATRIX_TOLERANCE * sym.trace().abs();
    let min = eig.eigenvalues.min();
    if min < -tolerance {
        return Err(Error::IndefiniteMatrix {
            eigenvalue: min,
            tolerance,
        });
    }
    let mut b = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        b.column_mut(j).scale_mut(s);
    }
    // B·Bᵀ = cov and Bᵀ = Q·R, so Rᵀ is a lower-triangular root.
    let r = b.transpose().qr().r();
    Ok(r.transpose())
}

/// Precomputed Cholesky factor and normalizer of a Gaussian.
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(g: &Gaussian) -> Self {
        let n = g.dim();
        let cov = symmetrize(&g.covariance);
        let chol = cov.clone().cholesky().or_else(|| {
            let eps = 1e-12 * cov.trace().abs().max(f64::MIN_POSITIVE);
            (cov.clone() + DMatrix::identity(n, n) * eps).cholesky()
        });
        let chol_l = match chol {
            Some(c) => c.l(),
            // Degenerate beyond regularization: widen to the trace scale.
            None => {
                let eps = 1e-9 * cov.trace().abs().max(1e-300);
                (cov + DMatrix::identity(n, n) * eps)
                    .cholesky()
                    .map(|c| c.l())
                    .unwrap_or_else(|| DMatrix::identity(n, n) * eps.sqrt())
            }
        };
        let log_det: f64 = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_norm = -0.5 * (n as f64 * (2.0 * PI).ln() + log_det);
        GaussianDensity {
            mean: g.mean.clone(),
            chol_l,
            log_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared Mahalanobis distance from the mean.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Log density for a slice, avoiding an allocation for the caller.
    pub fn log_pdf_slice(&self, x: &[f64]) -> f64 {
        let n = self.mean.len();
        // Forward substitution on L z = x - mean.
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if n <= 8 {
            &mut z[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap[..]
        };
        let mut q = 0.0;
        for i in 0..n {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol_l[(i, j)] * z[j];
            }
            z[i] = s / self.chol_l[(i, i)];
            q += z[i] * z[i];
        }
        self.log_norm - 0.5 * q
    }
}

/// Multivariate normal density of `g` at `x`.
pub fn gaussian_pdf(g: &Gaussian, x: &DVector<f64>) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: x.len(),
        });
    }
    Ok(GaussianDensity::new(g).pdf(x))
}

/// `N(x | mean, cov)` for explicit arguments.
fn normal_at(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    GaussianDensity::new(&Gaussian {
        mean: mean.clone(),
        covariance: cov.clone(),
    })
    .pdf(x)
}

/// Closed-form terms of the integral-squared difference between `target` and
/// the mixture `mix`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsdTerms {
    /// ∫ target²
    pub j11: f64,
    /// ∫ target · mix
    pub j12: f64,
    /// ∫ mix²
    pub j22: f64,
    /// `j11 - 2 j12 + j22`
    pub isd: f64,
}

/// Integral-squared difference between a Gaussian and a weighted Gaussian
/// mixture, evaluated exactly from pairwise Gaussian overlaps.
pub fn isd_terms(target: &Gaussian, mix: &[(f64, Gaussian)]) -> Result<IsdTerms> {
    let n = target.dim();
    for (_, g) in mix {
        if g.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: g.dim(),
            });
        }
    }
    let j11 = normal_at(&target.mean, &target.mean, &(&target.covariance * 2.0));
    let mut j12 = 0.0;
    for (w, g) in mix {
        j12 += w * normal_at(&target.mean, &g.mean, &(&target.covariance + &g.covariance));
    }
    let mut j22 = 0.0;
    for (i, (wi, gi)) in mix.iter().enumerate() {
        j22 += wi * wi * normal_at(&gi.mean, &gi.mean, &(&gi.covariance * 2.0));
        for (wj, gj) in mix.iter().skip(i + 1) {
            j22 += 2.0 * wi * wj * normal_at(&gi.mean, &gj.mean, &(&gi.covariance + &gj.covariance));
        }
    }
    Ok(IsdTerms {
        j11,
        j12,
        j22,
        isd: j11 - 2.0 * j12 + j22,
    })
}

/// Mean and covariance of a weighted set of Gaussians.
pub fn moments_of(components: &[(f64, &Gaussian)]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (_, first) = components.first().ok_or(Error::EmptyMixture)?;
    let n = first.dim();
    let total: f64 = components.iter().map(|(w, _)| w).sum();
    let mut mean = DVector::zeros(n);
    for (w, g) in components {
        if g.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: g.dim(),
            });
        }
        mean += &g.mean * (*w / total);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, g) in components {
        let d = &g.mean - &mean;
        cov += (&g.covariance + &d * d.transpose()) * (*w / total);
    }
    Ok((mean, symmetrize(&cov)))
}

/// Moments of the continuous marginal of a hybrid mixture.
pub fn mixture_moments(mix: &HybridMixture) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let comps: Vec<(f64, &Gaussian)> = mix.mixands.iter().map(|m| (m.weight, &m.gaussian)).collect();
    moments_of(&comps)
}
