//! Hybrid mixture anticipation: discrete transition, linearity-gated
//! continuous propagation with recursive splitting, and reduction.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{DiscreteState, Gaussian, HybridMixand, HybridMixture, ProcessNoise, WEIGHT_FLOOR};
use crate::linearity::{assess_linearity, LinearityOptions, ResidualNormalization};
use crate::reduction::{reduce, ReductionConfig};
use crate::sigma::{default_lambda, generate_sigma_points, propagate_points, recombine};
use crate::splitting::{apply_split, SplitLibrary, DEFAULT_RUNTIME_N, DEFAULT_RUNTIME_SIGMA};

/// Discrete and continuous dynamics of a hybrid system.
pub trait DynamicsModel: Sync {
    /// Continuous state dimension `n_x`.
    fn state_dim(&self) -> usize;

    /// Additive-input process noise `v ~ N(0, Σ_v)` of dimension `n_v`.
    fn process_noise(&self) -> &ProcessNoise;

    /// Successor hypotheses with transition probabilities summing to one.
    fn successors(&self, alpha: &DiscreteState, g: &Gaussian, k: usize) -> Result<Vec<(DiscreteState, f64)>>;

    /// Continuous step `x_{k+1} = f(α', x_k, v_k)`.
    fn propagate(&self, alpha: &DiscreteState, x: &DVector<f64>, v: &DVector<f64>, k: usize) -> Result<DVector<f64>>;

    /// Successors for a point state.
    fn point_successors(&self, alpha: &DiscreteState, x: &DVector<f64>, k: usize) -> Result<Vec<(DiscreteState, f64)>> {
        let n = x.len();
        self.successors(alpha, &Gaussian::new_unchecked(x.clone(), nalgebra::DMatrix::zeros(n, n)), k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Linearity threshold; `f64::INFINITY` disables splitting.
    pub e_res_max: f64,
    pub normalization: ResidualNormalization,
    pub split_n: usize,
    pub split_sigma: f64,
    pub max_split_depth: usize,
    pub reduction: ReductionConfig,
    /// Sigma-point scaling; `None` uses `3 − (n_x + n_v)`.
    pub lambda: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
    /// Process mixands on the calling thread only.
    pub sequential: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            e_res_max: f64::INFINITY,
            normalization: ResidualNormalization::Scaled,
            split_n: DEFAULT_RUNTIME_N,
            split_sigma: DEFAULT_RUNTIME_SIGMA,
            max_split_depth: 4,
            reduction: ReductionConfig::unbounded(),
            lambda: None,
            dt: 0.1,
            horizon: 3.5,
            sequential: false,
        }
    }
}

impl EngineConfig {
    /// Number of frames `K = horizon / dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.horizon >= 0.0) {
            return Err(Error::InvalidConfig("dt must be positive and horizon nonnegative".into()));
        }
        let k = (self.horizon / self.dt).round();
        if (k * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not a multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if !(self.e_res_max > 0.0) {
            return Err(Error::InvalidConfig("e_res_max must be positive".into()));
        }
        if self.split_n == 0 || self.split_n % 2 == 0 {
            return Err(Error::InvalidSplitCount(self.split_n));
        }
        if !(self.split_sigma > 0.0 && self.split_sigma <= 1.0) {
            return Err(Error::InvalidSigma(self.split_sigma));
        }
        if self.reduction.max_mixands == 0 {
            return Err(Error::InvalidConfig("max_mixands must be at least 1".into()));
        }
        Ok(())
    }

    fn linearity(&self) -> LinearityOptions {
        LinearityOptions {
            threshold: self.e_res_max,
            normalization: self.normalization,
        }
    }

    fn lambda_for(&self, n_x: usize, n_v: usize) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(n_x, n_v))
    }
}

/// Per-step bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub after_discrete: usize,
    pub after_continuous: usize,
    pub after_reduction: usize,
    pub splits: usize,
    pub depth_limited: usize,
    pub elapsed: Duration,
}

/// `h^D`: one copy of each mixand per successor hypothesis.
pub fn step_discrete(mix: &HybridMixture, model: &dyn DynamicsModel) -> Result<HybridMixture> {
    let k = mix.time_index;
    let mut out = Vec::with_capacity(mix.len());
    for m in &mix.mixands {
        let succ = model.successors(&m.discrete, &m.gaussian, k)?;
        if succ.is_empty() {
            return Err(Error::NoSuccessor(m.discrete.to_string()));
        }
        for (alpha, p) in succ {
            if p > 0.0 {
                out.push(HybridMixand {
                    weight: m.weight * p,
                    discrete: alpha,
                    gaussian: m.gaussian.clone(),
                });
            }
        }
    }
    Ok(HybridMixture {
        mixands: out,
        time_index: k,
    })
}

struct Propagated {
    mixands: Vec<HybridMixand>,
    splits: usize,
    depth_limited: usize,
}

/// `h^C`: propagates every mixand, splitting where the linearity test fails.
pub fn step_continuous(
    mix: &HybridMixture,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    lib: &SplitLibrary,
) -> Result<HybridMixture> {
    step_continuous_counted(mix, model, cfg, lib).map(|(m, _, _)| m)
}

fn step_continuous_counted(
    mix: &HybridMixture,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    lib: &SplitLibrary,
) -> Result<(HybridMixture, usize, usize)> {
    let split = if cfg.e_res_max.is_finite() {
        Some(lib.get(cfg.split_n, cfg.split_sigma)?)
    } else {
        None
    };
    let k = mix.time_index;
    let run = |(i, m): (usize, &HybridMixand)| {
        propagate_mixand(m, model, cfg, split, k, 0).map_err(|e| match e {
            Error::ModelEvaluation { .. } => e,
            other => Error::ModelEvaluation {
                mixand: describe(i, m),
                reason: other.to_string(),
            },
        })
    };
    let results: Vec<Result<Propagated>> = if cfg.sequential {
        mix.mixands.iter().enumerate().map(run).collect()
    } else {
        mix.mixands.par_iter().enumerate().map(run).collect()
    };
    let mut mixands = Vec::with_capacity(mix.len());
    let (mut splits, mut limited) = (0, 0);
    for r in results {
        let p = r?;
        splits += p.splits;
        limited += p.depth_limited;
        mixands.extend(p.mixands);
    }
    Ok((
        HybridMixture {
            mixands,
            time_index: k + 1,
        },
        splits,
        limited,
    ))
}

fn describe(i: usize, m: &HybridMixand) -> String {
    format!(
        "#{i} (alpha={}, w={:.6e}, mean={:?})",
        m.discrete,
        m.weight,
        m.gaussian.mean.as_slice()
    )
}

fn propagate_mixand(
    m: &HybridMixand,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    split: Option<&crate::splitting::CanonicalSplit>,
    k: usize,
    depth: usize,
) -> Result<Propagated> {
    let noise = model.process_noise();
    let n_x = m.gaussian.dim();
    let lambda = cfg.lambda_for(n_x, noise.dim());
    let set = generate_sigma_points(&m.gaussian, noise, lambda)?;
    let points = propagate_points(&set, &m.discrete, |a, x, v| model.propagate(a, x, v, k))?;

    if let Some(split) = split {
        let state_count = 2 * n_x + 1;
        let post = points.columns(0, state_count).into_owned();
        let report = assess_linearity(&set.state_subset(), &post, &m.gaussian, &cfg.linearity())?;
        if !report.passed {
            if depth < cfg.max_split_depth {
                let children = apply_split(m, &report.split_axis, split)?;
                let mut out = Propagated {
                    mixands: Vec::with_capacity(children.len()),
                    splits: 1,
                    depth_limited: 0,
                };
                for child in &children {
                    let p = propagate_mixand(child, model, cfg, Some(split), k, depth + 1)?;
                    out.splits += p.splits;
                    out.depth_limited += p.depth_limited;
                    out.mixands.extend(p.mixands);
                }
                return Ok(out);
            }
            log::warn!(
                "mixand (alpha={}) still nonlinear at split depth {depth} (e_res={:.3e}); recombining",
                m.discrete,
                report.e_res
            );
            return Ok(Propagated {
                mixands: vec![HybridMixand {
                    weight: m.weight,
                    discrete: m.discrete.clone(),
                    gaussian: recombine(&points, &set.weights())?,
                }],
                splits: 0,
                depth_limited: 1,
            });
        }
    }
    Ok(Propagated {
        mixands: vec![HybridMixand {
            weight: m.weight,
            discrete: m.discrete.clone(),
            gaussian: recombine(&points, &set.weights())?,
        }],
        splits: 0,
        depth_limited: 0,
    })
}

/// One full step: `reduce(h^C(h^D(mix)))` followed by the weight floor.
pub fn step(
    mix: &HybridMixture,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    lib: &SplitLibrary,
) -> Result<(HybridMixture, StepStats)> {
    let start = Instant::now();
    let discrete = step_discrete(mix, model)?;
    let (continuous, splits, depth_limited) = step_continuous_counted(&discrete, model, cfg, lib)?;
    let mut reduced = reduce(&continuous, &cfg.reduction);
    reduced.prune(WEIGHT_FLOOR);
    let stats = StepStats {
        after_discrete: discrete.len(),
        after_continuous: continuous.len(),
        after_reduction: reduced.len(),
        splits,
        depth_limited,
        elapsed: start.elapsed(),
    };
    Ok((reduced, stats))
}

/// Frames `k = 1..=K` predicted from `initial`.
pub fn anticipate(
    initial: &HybridMixture,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    lib: &SplitLibrary,
) -> Result<Vec<HybridMixture>> {
    anticipate_detailed(initial, model, cfg, lib).map(|(frames, _)| frames)
}

pub fn anticipate_detailed(
    initial: &HybridMixture,
    model: &dyn DynamicsModel,
    cfg: &EngineConfig,
    lib: &SplitLibrary,
) -> Result<(Vec<HybridMixture>, Vec<StepStats>)> {
    cfg.validate()?;
    if initial.is_empty() {
        return Err(Error::EmptyMixture);
    }
    if initial.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            found: initial.dim(),
        });
    }
    let steps = cfg.steps()?;
    let mut frames = Vec::with_capacity(steps);
    let mut stats = Vec::with_capacity(steps);
    let mut current = initial.clone();
    current.normalize();
    for _ in 0..steps {
        let (next, s) = step(&current, model, cfg, lib)?;
        frames.push(next.clone());
        stats.push(s);
        current = next;
    }
    Ok((frames, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::{optimize_canonical_split, SpreadGrid};
    use nalgebra::DMatrix;

    /// Linear model `x' = A x + B v`, one hypothesis or a fixed fan-out.
    struct Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise: ProcessNoise,
        branches: Vec<(DiscreteState, f64)>,
    }

    impl DynamicsModel for Linear {
        fn state_dim(&self) -> usize {
            self.a.nrows()
        }
        fn process_noise(&self) -> &ProcessNoise {
            &self.noise
        }
        fn successors(&self, alpha: &DiscreteState, _: &Gaussian, _: usize) -> Result<Vec<(DiscreteState, f64)>> {
            if alpha.as_str() == "fork" {
                Ok(self.branches.clone())
            } else {
                Ok(vec![(alpha.clone(), 1.0)])
            }
        }
        fn propagate(&self, _: &DiscreteState, x: &DVector<f64>, v: &DVector<f64>, _: usize) -> Result<DVector<f64>> {
            Ok(&self.a * x + &self.b * v)
        }
    }

    struct Square;

    impl DynamicsModel for Square {
        fn state_dim(&self) -> usize {
            1
        }
        fn process_noise(&self) -> &ProcessNoise {
            static NONE: std::sync::OnceLock<ProcessNoise> = std::sync::OnceLock::new();
            NONE.get_or_init(ProcessNoise::none)
        }
        fn successors(&self, alpha: &DiscreteState, _: &Gaussian, _: usize) -> Result<Vec<(DiscreteState, f64)>> {
            Ok(vec![(alpha.clone(), 1.0)])
        }
        fn propagate(&self, _: &DiscreteState, x: &DVector<f64>, _: &DVector<f64>, _: usize) -> Result<DVector<f64>> {
            if !x[0].is_finite() || x[0] > 1e6 {
                return Err(Error::InvalidConfig("diverged".into()));
            }
            Ok(x.map(|v| v * v))
        }
    }

    fn lib() -> SplitLibrary {
        SplitLibrary {
            grid_step: 0.01,
            entries: vec![optimize_canonical_split(5, 0.3, &SpreadGrid { max: 4.0, step: 0.01 }).unwrap()],
        }
    }

    fn linear() -> Linear {
        Linear {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
            noise: ProcessNoise::diagonal(&[0.5]).unwrap(),
            branches: vec![("l".into(), 0.25), ("s".into(), 0.5), ("r".into(), 0.25)],
        }
    }

    #[test]
    fn discrete_fan_out() {
        let model = linear();
        let g = Gaussian::from_slices(&[0.0, 1.0], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let mix = HybridMixture::new(
            vec![HybridMixand::new(0.5, "fork", g.clone()), HybridMixand::new(0.5, "a", g.clone())],
            0,
        )
        .unwrap();
        let out = step_discrete(&mix, &model).unwrap();
        assert_eq!(out.len(), 4);
        assert!((out.total_weight() - 1.0).abs() < 1e-15);
        assert_eq!(out.mixands[1].weight, 0.25);
        assert!(out.mixands.iter().all(|m| m.gaussian == g));
    }

    #[test]
    fn linear_model_matches_kalman_prediction() {
        let model = linear();
        let g = Gaussian::from_slices(&[1.0, 2.0], &[&[0.5, 0.1], &[0.1, 0.3]]).unwrap();
        let mix = HybridMixture::single("a", g.clone());
        let cfg = EngineConfig {
            e_res_max: 1e-6,
            horizon: 0.1,
            ..EngineConfig::default()
        };
        let frames = anticipate(&mix, &model, &cfg, &lib()).unwrap();
        assert_eq!(frames.len(), 1);
        let out = &frames[0].mixands[0].gaussian;
        let mean = &model.a * &g.mean;
        let cov = &model.a * &g.covariance * model.a.transpose() + &model.b * model.noise.covariance() * model.b.transpose();
        assert!((&out.mean - mean).norm() < 1e-12);
        assert!((&out.covariance - cov).norm() < 1e-12);
        assert_eq!(frames[0].len(), 1);
    }

    #[test]
    fn splitting_increases_count_and_conserves_weight() {
        let mix = HybridMixture::single("a", Gaussian::scalar(0.5, 1.0));
        let cfg = EngineConfig {
            e_res_max: 0.1,
            normalization: ResidualNormalization::Raw,
            horizon: 0.1,
            sequential: true,
            ..EngineConfig::default()
        };
        let discrete = step_discrete(&mix, &Square).unwrap();
        let out = step_continuous(&discrete, &Square, &cfg, &lib()).unwrap();
        assert!(out.len() > 1);
        assert!((out.total_weight() - 1.0).abs() < 1e-12);
        assert_eq!(out.time_index, 1);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mix = HybridMixture::single("a", Gaussian::scalar(0.2, 0.5));
        let mut cfg = EngineConfig {
            e_res_max: 0.05,
            normalization: ResidualNormalization::Raw,
            horizon: 0.3,
            sequential: true,
            reduction: ReductionConfig::new(8).unwrap(),
            ..EngineConfig::default()
        };
        let a = anticipate(&mix, &Square, &cfg, &lib()).unwrap();
        cfg.sequential = false;
        let b = anticipate(&mix, &Square, &cfg, &lib()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_failure_names_mixand() {
        let mix = HybridMixture::single("a", Gaussian::scalar(1e7, 1.0));
        let cfg = EngineConfig {
            horizon: 0.1,
            ..EngineConfig::default()
        };
        match anticipate(&mix, &Square, &cfg, &lib()) {
            Err(Error::ModelEvaluation { mixand, .. }) => assert!(mixand.contains("alpha=a")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn horizon_must_be_multiple_of_dt() {
        let cfg = EngineConfig {
            horizon: 0.35,
            dt: 0.1,
            ..EngineConfig::default()
        };
        assert!(cfg.steps().is_err());
        let cfg = EngineConfig {
            horizon: 3.5,
            dt: 0.1,
            ..EngineConfig::default()
        };
        assert_eq!(cfg.steps().unwrap(), 35);
    }

    #[test]
    fn no_successor_is_an_error() {
        struct Dead;
        impl DynamicsModel for Dead {
            fn state_dim(&self) -> usize {
                1
            }
            fn process_noise(&self) -> &ProcessNoise {
                Square.process_noise()
            }
            fn successors(&self, _: &DiscreteState, _: &Gaussian, _: usize) -> Result<Vec<(DiscreteState, f64)>> {
                Ok(vec![])
            }
            fn propagate(&self, _: &DiscreteState, x: &DVector<f64>, _: &DVector<f64>, _: usize) -> Result<DVector<f64>> {
                Ok(x.clone())
            }
        }
        let mix = HybridMixture::single("a", Gaussian::scalar(0.0, 1.0));
        assert!(matches!(step_discrete(&mix, &Dead), Err(Error::NoSuccessor(_))));
    }
}
