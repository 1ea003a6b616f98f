//! Dense active-set solver for `min wᵀHw − 2fᵀw` over the probability simplex
//! (`w ≥ 0`, `Σw = 1`), sized for the handful of split weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SimplexQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub weights: DVector<f64>,
    /// `wᵀHw − 2fᵀw` at the solution.
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl SimplexQp {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != f.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                found: h.nrows(),
            });
        }
        if f.is_empty() {
            return Err(Error::QpInfeasible);
        }
        Ok(SimplexQp { h, f })
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.h * w)[(0, 0)] - 2.0 * self.f.dot(w)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.h * w - &self.f) * 2.0
    }

    /// Worst violation of the first-order optimality conditions: primal
    /// feasibility, stationarity on the support and dual feasibility on the
    /// active bounds. Scaled by `max(1, ‖g‖∞)`.
    pub fn kkt_residual(&self, w: &DVector<f64>) -> f64 {
        let g = self.gradient(w);
        let scale = g.amax().max(1.0);
        let support_tol = 1e-12;
        let free: Vec<usize> = (0..w.len()).filter(|&i| w[i] > support_tol).collect();
        let nu = if free.is_empty() {
            g.min()
        } else {
            free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64
        };
        let mut worst = (w.sum() - 1.0).abs();
        for i in 0..w.len() {
            worst = worst.max((-w[i]).max(0.0));
            if w[i] > support_tol {
                worst = worst.max((g[i] - nu).abs() / scale);
            } else {
                worst = worst.max((nu - g[i]).max(0.0) / scale);
            }
        }
        worst
    }

    /// Primal active-set method with Bland's rule for releasing bounds.
    ///
    /// Steps are computed in an orthonormal basis of `{Σp = 0}` restricted to
    /// the free indices. Along directions where the reduced Hessian is
    /// numerically singular the step is Newton-free; once the Newton step
    /// stalls, the gradient along those directions is followed to a bound.
    pub fn solve(&self) -> Result<QpSolution> {
        let n = self.f.len();
        let max_iterations = 50 * n + 100;
        let mut w = DVector::from_element(n, 1.0 / n as f64);
        let mut active = vec![false; n];
        // Bounds whose release produced no progress since the last real step.
        let mut stalled = vec![false; n];
        let mut released: Option<usize> = None;

        for iteration in 0..max_iterations {
            let g = self.gradient(&w);
            let scale = g.amax().max(1.0);
            let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();

                if let Some(p) = self.descent_direction(&free, &g) {
                let slope = g.dot(&p);
                let curvature = (p.transpose() * &self.h * &p)[(0, 0)];
                let mut step = if curvature > 0.0 {
                    -slope / (2.0 * curvature)
                } else {
                    f64::INFINITY
                };
                let mut blocking = None;
                for &i in &free {
                    if p[i] < 0.0 {
                        let limit = -w[i] / p[i];
                        if limit < step {
                            step = limit;
                            blocking = Some(i);
                        }
                    }
                }
                if !step.is_finite() {
                    return Err(Error::QpInfeasible);
                }
                let before = w.clone();
                w.axpy(step, &p, 1.0);
                if let Some(i) = blocking {
                    w[i] = 0.0;
                    active[i] = true;
                }
                if w != before {
                    stalled.iter_mut().for_each(|s| *s = false);
                } else if let (Some(i), Some(r)) = (blocking, released) {
                    if i == r {
                        // Releasing this bound made no progress; keep it fixed.
                        stalled[i] = true;
                    }
                }
                released = None;
                if w != before || blocking.is_some() {
                    continue;
                }
            }

            let nu = free.iter().map(|&i| g[i]).sum::<f64>() / free.len().max(1) as f64;
            // Bland: release the lowest-index bound with a negative multiplier.
            match (0..n).find(|&i| active[i] && !stalled[i] && g[i] - nu < -1e-13 * scale) {
                Some(i) => {
                    active[i] = false;
                    released = Some(i);
                }
                None => {
                    for v in w.iter_mut() {
                        *v = v.max(0.0);
                    }
                    let total = w.sum();
                    w /= total;
                    return Ok(QpSolution {
                        objective: self.objective(&w),
                        kkt_residual: self.kkt_residual(&w),
                        weights: w,
                        iterations: iteration,
                    });
                }
            }
        }
        Err(Error::MaxIterations(max_iterations))
    }

    /// Descent direction on the free indices preserving `Σw`, or `None` when
    /// the free subspace is stationary.
    fn descent_direction(&self, free: &[usize], g: &DVector<f64>) -> Option<DVector<f64>> {
        let r = free.len();
        if r <= 1 {
            return None;
        }
        let z = sum_zero_basis(r);
        let hf = DMatrix::from_fn(r, r, |a, b| self.h[(free[a], free[b])]);
        let gf = DVector::from_iterator(r, free.iter().map(|&i| g[i]));
        let reduced = z.transpose() * &hf * &z;
        let eig = reduced.symmetric_eigen();
        let c = eig.eigenvectors.transpose() * (z.transpose() * &gf);
        let scale = g.amax().max(1.0);
        let lmax = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let flat = |k: usize| eig.eigenvalues[k] <= 1e-11 * lmax;
        let lift = |coords: DVector<f64>| &z * (&eig.eigenvectors * coords);

        let newton = lift(DVector::from_fn(r - 1, |k, _| {
            if flat(k) {
                0.0
            } else {
                -c[k] / (2.0 * eig.eigenvalues[k])
            }
        }));
        let pf = if -gf.dot(&newton) > 1e-15 * scale {
            newton
        } else {
            let slide = lift(DVector::from_fn(r - 1, |k, _| if flat(k) { -c[k] } else { 0.0 }));
            if !(-gf.dot(&slide) > 1e-15 * scale) {
                return None;
            }
            slide
        };
        let mut p = DVector::zeros(g.len());
        for (k, &i) in free.iter().enumerate() {
            p[i] = pf[k];
        }
        Some(p)
    }
}

/// Orthonormal basis of `{x ∈ ℝʳ : Σx = 0}` (Helmert contrasts).
fn sum_zero_basis(r: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(r, r - 1);
    for k in 1..r {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            z[(i, k - 1)] = 1.0 / norm;
        }
        z[(k, k - 1)] = -(k as f64) / norm;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Euclidean projection onto the probability simplex.
    fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
        let mut u: Vec<f64> = v.iter().copied().collect();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut css = 0.0;
        let mut theta = 0.0;
        for (k, uk) in u.iter().enumerate() {
            css += uk;
            let t = (css - 1.0) / (k + 1) as f64;
            if uk - t > 0.0 {
                theta = t;
            }
        }
        v.map(|x| (x - theta).max(0.0))
    }

    /// Accelerated projected gradient run to convergence.
    fn projected_gradient(qp: &SimplexQp) -> f64 {
        let n = qp.f.len();
        let lmax = qp.h.clone().symmetric_eigenvalues().max() * 2.0;
        let mut w = DVector::from_element(n, 1.0 / n as f64);
        let mut y = w.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let next = project_simplex(&(&y - qp.gradient(&y) / lmax));
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &next + (&next - &w) * ((t - 1.0) / t_next);
            w = next;
            t = t_next;
        }
        qp.objective(&w)
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> SimplexQp {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
        let f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        SimplexQp::new(h, f).unwrap()
    }

    #[test]
    fn single_component() {
        let qp = SimplexQp::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.3)).unwrap();
        let s = qp.solve().unwrap();
        assert_eq!(s.weights[0], 1.0);
    }

    #[test]
    fn symmetric_problem_gives_symmetric_weights() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.1, 0.5, 1.0, 0.5, 0.1, 0.5, 1.0]);
        let f = DVector::from_vec(vec![0.4, 0.6, 0.4]);
        let s = SimplexQp::new(h, f).unwrap().solve().unwrap();
        assert!((s.weights[0] - s.weights[2]).abs() < 1e-12);
        assert!((s.weights.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let qp = random_instance(&mut rng, 5);
            let s = qp.solve().unwrap();
            let oracle = projected_gradient(&qp);
            assert!(s.objective <= oracle + 1e-9, "{} vs {}", s.objective, oracle);
            assert!((s.objective - oracle).abs() < 1e-9);
            assert!(s.kkt_residual < 1e-8);
            assert!(s.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn rank_one_hessian_is_handled() {
        let h = DMatrix::from_element(4, 4, 1.0);
        let f = DVector::from_element(4, 0.5);
        let s = SimplexQp::new(h, f).unwrap().solve().unwrap();
        assert!((s.weights.sum() - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn vertex_solution() {
        // Strongly prefers the last coordinate.
        let h = DMatrix::identity(3, 3);
        let f = DVector::from_vec(vec![0.0, 0.0, 5.0]);
        let s = SimplexQp::new(h, f).unwrap().solve().unwrap();
        assert!((s.weights[2] - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-12);
    }
}
