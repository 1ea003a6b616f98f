//! Linearization residual of a sigma-point propagation.
//!
//! The state sigma points before (`X`, n×m) and after (`Y`, p×m) propagation
//! are related by the best affine model `Y ≈ [A, b]·[X; 1]`. With the LQ
//! factorization `[X; 1] = [L₀, 0]·Q`, the rotated outputs `Y·Qᵀ` split into
//! a block fully explained by `[A, b]` and a residual block that no affine map
//! can reach. The residual's Frobenius norm is the linearity metric; rotating
//! the padded residual back by `Q` gives per-point residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;

const RANK_TOLERANCE: f64 = 1e-10;
const EIGEN_TIE_TOLERANCE: f64 = 1e-10;

/// How the raw Frobenius residual is scaled before comparing to the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResidualNormalization {
    /// Unnormalized Frobenius norm (units of the propagated state).
    Raw,
    /// Divided by `sqrt(2n_x+1)` and by `sqrt(trace Σ_prior)`.
    #[default]
    Scaled,
}

impl std::str::FromStr for ResidualNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(ResidualNormalization::Raw),
            "scaled" => Ok(ResidualNormalization::Scaled),
            other => Err(Error::InvalidConfig(format!("unknown normalization {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearityOptions {
    /// Mixands with `e_res` above this are split; `f64::INFINITY` disables.
    pub threshold: f64,
    pub normalization: ResidualNormalization,
}

impl Default for LinearityOptions {
    fn default() -> Self {
        LinearityOptions {
            threshold: f64::INFINITY,
            normalization: ResidualNormalization::Scaled,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearityReport {
    /// Residual error after normalization.
    pub e_res: f64,
    /// Unnormalized Frobenius residual.
    pub raw_residual: f64,
    /// Per-point residuals, one column per state sigma point, scaled with `e_res`.
    pub point_residuals: DMatrix<f64>,
    /// Unit axis of greatest residual in the pre-propagation state space.
    pub split_axis: DVector<f64>,
    pub passed: bool,
    /// The augmented point matrix lost rank (degenerate covariance).
    pub rank_deficient: bool,
}

/// Householder LQ factorization of a wide matrix `a` (r×m, r ≤ m).
///
/// Returns `(L, Q)` with `L` lower trapezoidal (r×m, zero beyond column r)
/// and `Q` orthogonal (m×m) such that `a = L·Q`.
pub fn lq_factorize(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, m) = a.shape();
    assert!(r <= m, "LQ factorization needs a wide matrix");
    // QR of aᵀ: aᵀ = H_1 ⋯ H_r · R.
    let mut t = a.transpose();
    let mut qf = DMatrix::<f64>::identity(m, m);
    for k in 0..r {
        let x = t.view((k, k), (m - k, 1)).column(0).into_owned();
        let alpha = x.norm();
        if alpha == 0.0 {
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        // t[k.., k..] -= 2 v (vᵀ t) / vᵀv
        for j in k..r {
            let mut col = t.view_mut((k, j), (m - k, 1));
            let dot = v.dot(&col.column(0));
            col.column_mut(0).axpy(-2.0 * dot / vnorm2, &v, 1.0);
        }
        // qf[:, k..] = qf[:, k..] · H
        for i in 0..m {
            let mut row = qf.view_mut((i, k), (1, m - k));
            let dot: f64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (e, vi) in row.iter_mut().zip(v.iter()) {
                *e -= 2.0 * dot / vnorm2 * vi;
            }
        }
    }
    let mut l = t.transpose();
    // Clean the structurally zero part.
    for i in 0..r {
        for j in (i + 1)..m {
            l[(i, j)] = 0.0;
        }
    }
    (l, qf.transpose())
}

/// Residual of the best affine fit, computed through LQ.
///
/// Returns `(residual, rank_deficient)` where `residual` is `[0, Ŷ_res]·Q`.
fn affine_residual(pre: &DMatrix<f64>, post: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (n, m) = pre.shape();
    let mut aug = DMatrix::from_element(n + 1, m, 1.0);
    aug.view_mut((0, 0), (n, m)).copy_from(pre);
    if n + 1 > m {
        return (DMatrix::zeros(post.nrows(), m), true);
    }
    let (l, q) = lq_factorize(&aug);
    let diag_max = (0..=n).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
    let deficient = (0..=n).any(|i| l[(i, i)].abs() <= RANK_TOLERANCE * diag_max.max(f64::MIN_POSITIVE));
    if !deficient {
        let mut rotated = post * q.transpose();
        rotated.columns_mut(0, n + 1).fill(0.0);
        return (rotated * q, false);
    }
    // Project onto the complement of the numerical row space.
    let svd = aug.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s_max = svd.singular_values.max();
    let mut proj = DMatrix::<f64>::zeros(m, m);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > RANK_TOLERANCE * s_max {
            let row = v_t.row(i).transpose();
            proj += &row * row.transpose();
        }
    }
    (post - post * proj, true)
}

/// Principal eigenvector of a symmetric matrix. Ties among the top
/// eigenvalues resolve to the lowest-index coordinate axis projected onto the
/// top eigenspace; the sign makes the first nonzero component positive.
fn principal_axis(m2: &DMatrix<f64>) -> DVector<f64> {
    let n = m2.nrows();
    let eig = m2.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    let tol = EIGEN_TIE_TOLERANCE * top.abs().max(f64::MIN_POSITIVE);
    let tied: Vec<usize> = (0..n).filter(|&i| top - eig.eigenvalues[i] <= tol).collect();
    let mut axis = if tied.len() == 1 {
        eig.eigenvectors.column(tied[0]).into_owned()
    } else {
        let mut chosen = DVector::zeros(n);
        for i in 0..n {
            let mut p = DVector::<f64>::zeros(n);
            for &t in &tied {
                let v = eig.eigenvectors.column(t);
                p.axpy(v[i], &v, 1.0);
            }
            if p.norm() > 1e-6 {
                chosen = p;
                break;
            }
        }
        chosen
    };
    let norm = axis.norm();
    axis /= norm;
    if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            axis.neg_mut();
        }
    }
    axis
}

/// Assesses how well an affine map explains `pre → post`.
///
/// `pre` and `post` hold the `2n_x + 1` state sigma points as columns; the
/// noise points are not part of the assessment. `prior` is the mixand that
/// generated `pre` and fixes the centering of the split-axis moment and the
/// scale of [`ResidualNormalization::Scaled`].
pub fn assess_linearity(
    pre: &DMatrix<f64>,
    post: &DMatrix<f64>,
    prior: &Gaussian,
    opts: &LinearityOptions,
) -> Result<LinearityReport> {
    let (n, m) = pre.shape();
    if post.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: post.ncols(),
        });
    }
    if prior.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: prior.dim(),
        });
    }
    let (mut residual, rank_deficient) = affine_residual(pre, post);
    let raw = residual.norm();
    let scale = match opts.normalization {
        ResidualNormalization::Raw => 1.0,
        ResidualNormalization::Scaled => {
            let tr = prior.covariance.trace();
            if tr > 0.0 {
                1.0 / ((m as f64).sqrt() * tr.sqrt())
            } else {
                1.0
            }
        }
    };
    residual *= scale;
    let e_res = raw * scale;

    let mut m2 = DMatrix::<f64>::zeros(n, n);
    for j in 0..m {
        let w = residual.column(j).norm();
        let d = pre.column(j) - &prior.mean;
        m2.ger(w, &d, &d, 1.0);
    }
    let split_axis = principal_axis(&m2);
    let passed = rank_deficient || e_res <= opts.threshold;
    Ok(LinearityReport {
        e_res,
        raw_residual: raw,
        point_residuals: residual,
        split_axis,
        passed,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::ProcessNoise;
    use crate::sigma::{default_lambda, generate_sigma_points};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw() -> LinearityOptions {
        LinearityOptions {
            threshold: f64::INFINITY,
            normalization: ResidualNormalization::Raw,
        }
    }

    fn state_points(g: &Gaussian) -> DMatrix<f64> {
        generate_sigma_points(g, &ProcessNoise::none(), default_lambda(g.dim(), 0))
            .unwrap()
            .state_subset()
    }

    /// Independent least-squares oracle via the normal equations.
    fn normal_equation_residual(pre: &DMatrix<f64>, post: &DMatrix<f64>) -> f64 {
        let (n, m) = pre.shape();
        let mut aug = DMatrix::from_element(n + 1, m, 1.0);
        aug.view_mut((0, 0), (n, m)).copy_from(pre);
        let gram = &aug * aug.transpose();
        let ab = post * aug.transpose() * gram.try_inverse().unwrap();
        (post - ab * aug).norm()
    }

    #[test]
    fn lq_reconstructs_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let (l, q) = lq_factorize(&a);
        assert!((&l * &q - &a).norm() < 1e-12);
        assert!((&q * q.transpose() - DMatrix::identity(7, 7)).norm() < 1e-12);
        for i in 0..3 {
            for j in (i + 1)..7 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn exact_affine_has_zero_residual() {
        let g = Gaussian::scalar(0.4, 1.3);
        let pre = state_points(&g);
        let post = pre.map(|x| 3.0 * x + 7.0);
        let r = assess_linearity(&pre, &post, &g, &raw()).unwrap();
        assert!(r.e_res < 1e-10);
        assert!(r.passed);
    }

    #[test]
    fn ungm_residual_matches_normal_equations() {
        let g = Gaussian::scalar(0.0, 1.0);
        let pre = state_points(&g);
        let post = pre.map(|x| 0.3 * x + x / (1.0 + x * x) + 1.0);
        let r = assess_linearity(&pre, &post, &g, &raw()).unwrap();
        assert!(r.e_res > 0.0);
        let oracle = normal_equation_residual(&pre, &post);
        assert!((r.e_res - oracle).abs() < 1e-10, "{} vs {oracle}", r.e_res);
        assert!((r.point_residuals.norm() - r.e_res).abs() < 1e-12);
    }

    #[test]
    fn tighter_prior_reduces_cubic_residual() {
        let cubic = |x: f64| 6.0 * x.powi(3) + x * x + x + 1.0;
        let wide = Gaussian::scalar(0.0, 1.0);
        let tight = Gaussian::scalar(0.0, 0.04);
        let e = |g: &Gaussian| {
            let pre = state_points(g);
            let post = pre.map(cubic);
            let r = assess_linearity(&pre, &post, g, &raw()).unwrap();
            assert!((r.e_res - normal_equation_residual(&pre, &post)).abs() < 1e-8 * r.e_res.max(1.0));
            r.e_res
        };
        assert!(e(&tight) < e(&wide));
    }

    #[test]
    fn split_axis_follows_nonlinear_coordinate() {
        let g = Gaussian::from_slices(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let pre = state_points(&g);
        // Only the second coordinate enters nonlinearly.
        let post = DMatrix::from_fn(2, pre.ncols(), |i, j| {
            let (x, y) = (pre[(0, j)], pre[(1, j)]);
            if i == 0 {
                x + y
            } else {
                y * y
            }
        });
        let r = assess_linearity(&pre, &post, &g, &raw()).unwrap();
        assert!((r.split_axis.norm() - 1.0).abs() < 1e-12);
        assert!(r.split_axis[1].abs() > 0.999, "{}", r.split_axis);
    }

    #[test]
    fn threshold_gates_pass_flag() {
        let g = Gaussian::scalar(0.0, 1.0);
        let pre = state_points(&g);
        let post = pre.map(|x| x * x);
        let opts = LinearityOptions {
            threshold: 1e-3,
            normalization: ResidualNormalization::Scaled,
        };
        let r = assess_linearity(&pre, &post, &g, &opts).unwrap();
        assert!(!r.passed);
        let scaled = r.raw_residual / (3f64.sqrt() * 1.0);
        assert!((r.e_res - scaled).abs() < 1e-12);
        assert!((r.point_residuals.norm() - r.e_res).abs() < 1e-12);
    }

    #[test]
    fn degenerate_covariance_is_flagged_and_passes() {
        let g = Gaussian::new_unchecked(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        );
        let pre = state_points(&g);
        let post = pre.map(|x| x * x);
        let opts = LinearityOptions {
            threshold: 0.0,
            normalization: ResidualNormalization::Raw,
        };
        let r = assess_linearity(&pre, &post, &g, &opts).unwrap();
        assert!(r.rank_deficient);
        assert!(r.passed);
        assert!(r.e_res > 0.0);
    }

    #[test]
    fn lq_path_equals_oracle_on_random_nonlinear_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..100 {
            let n = 1 + trial % 4;
            let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let g = Gaussian::new(
                DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
                &l * l.transpose() + DMatrix::identity(n, n) * 0.2,
            )
            .unwrap();
            let pre = state_points(&g);
            let post = pre.map(|x| x.sin() + 0.3 * x * x);
            let r = assess_linearity(&pre, &post, &g, &raw()).unwrap();
            let oracle = normal_equation_residual(&pre, &post);
            assert!((r.e_res - oracle).abs() < 1e-8, "{} vs {oracle}", r.e_res);
        }
    }
}
