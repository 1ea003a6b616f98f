//! Univariate accuracy benchmark: random Gaussian priors pushed one step
//! through a scalar map, single-Gaussian and split propagation compared to
//! the exact propagated density.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{mean_std, numerical_kld, pearson, KldDirection};
use crate::gaussian::{Gaussian, HybridMixand, HybridMixture, ProcessNoise};
use crate::linearity::{assess_linearity, LinearityOptions, ResidualNormalization};
use crate::models::{ScalarMap, TruthDensity};
use crate::sigma::{generate_sigma_points, recombine};
use crate::splitting::{apply_split, SplitLibrary};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub samples: usize,
    pub seed: u64,
    /// Prior means are drawn from `U(−mean_range, mean_range)`.
    pub mean_range: f64,
    /// Prior variances are drawn from `U(0, max_variance)`.
    pub max_variance: f64,
    pub lambda: f64,
    /// Time index passed to the map.
    pub k: usize,
    /// Split arms as `(N, σ)`.
    pub splits: Vec<(usize, f64)>,
    pub include_no_split: bool,
    pub kld_points: usize,
    /// Half-width of the KLD grid in approximation standard deviations.
    pub kld_width: f64,
    pub direction: KldDirection,
    pub normalization: ResidualNormalization,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            samples: 100,
            seed: 7,
            mean_range: 2.0,
            max_variance: 2.0,
            lambda: 2.0,
            k: 0,
            splits: Vec::new(),
            include_no_split: true,
            kld_points: 20_000,
            kld_width: 8.0,
            direction: KldDirection::Approximation,
            normalization: ResidualNormalization::Raw,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        if !self.include_no_split && self.splits.is_empty() {
            return Err(Error::InvalidConfig("no benchmark arm selected".into()));
        }
        if !(self.max_variance > 0.0) || !(self.mean_range >= 0.0) {
            return Err(Error::InvalidConfig("prior ranges must be positive".into()));
        }
        Ok(())
    }
}

/// Per-prior results; `split_klds` follows `BenchmarkConfig::splits`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub mean: f64,
    pub variance: f64,
    pub e_res: f64,
    pub no_split_kld: Option<f64>,
    pub split_klds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    /// `None` for the single-Gaussian arm.
    pub split: Option<(usize, f64)>,
    pub mean_kld: f64,
    pub std_kld: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub model: String,
    pub samples: Vec<SampleResult>,
    pub arms: Vec<ArmSummary>,
    /// Correlation of `e_res` with the single-Gaussian KLD.
    pub pearson: Option<f64>,
}

impl BenchmarkReport {
    pub fn arm(&self, split: Option<(usize, f64)>) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| match (a.split, split) {
            (None, None) => true,
            (Some((n, s)), Some((m, t))) => n == m && (s - t).abs() < 1e-9,
            _ => false,
        })
    }
}

/// Prior `(mean, variance)` pairs; the mean is drawn before the variance.
pub fn draw_priors(cfg: &BenchmarkConfig) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.samples)
        .map(|_| {
            let mean = if cfg.mean_range > 0.0 {
                rng.random_range(-cfg.mean_range..cfg.mean_range)
            } else {
                0.0
            };
            let var = rng.random_range(0.0..cfg.max_variance);
            (mean, var)
        })
        .collect()
}

fn scalar_ut<M: ScalarMap>(map: &M, g: &Gaussian, cfg: &BenchmarkConfig) -> Result<(Gaussian, f64)> {
    let set = generate_sigma_points(g, &ProcessNoise::none(), cfg.lambda)?;
    let points = set.state_points.map(|x| map.eval(x, cfg.k));
    let out = recombine(&points, &set.weights())?;
    let report = assess_linearity(
        &set.state_subset(),
        &points,
        g,
        &LinearityOptions {
            threshold: f64::INFINITY,
            normalization: cfg.normalization,
        },
    )?;
    Ok((out, report.e_res))
}

fn mixture_kld<M: ScalarMap>(
    components: &[(f64, f64, f64)],
    truth: &TruthDensity<'_, M>,
    cfg: &BenchmarkConfig,
) -> Result<f64> {
    let total: f64 = components.iter().map(|c| c.0).sum();
    let mean = components.iter().map(|(w, m, _)| w * m).sum::<f64>() / total;
    let var = components.iter().map(|(w, m, v)| w * (v + (m - mean) * (m - mean))).sum::<f64>() / total;
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let sd = var.sqrt();
    let consts: Vec<(f64, f64, f64)> = components
        .iter()
        .map(|&(w, m, v)| (w / total / (2.0 * std::f64::consts::PI * v).sqrt(), m, 0.5 / v))
        .collect();
    let approx = |y: f64| consts.iter().map(|(c, m, h)| c * (-(y - m) * (y - m) * h).exp()).sum::<f64>();
    numerical_kld(
        approx,
        |y| truth.pdf(y),
        mean - cfg.kld_width * sd,
        mean + cfg.kld_width * sd,
        cfg.kld_points,
        cfg.direction,
    )
}

/// Results for one prior.
pub fn evaluate_prior<M: ScalarMap>(
    map: &M,
    mean: f64,
    var: f64,
    cfg: &BenchmarkConfig,
    lib: Option<&SplitLibrary>,
) -> Result<SampleResult> {
    let prior = Gaussian::scalar(mean, var);
    let truth = TruthDensity::new(map, mean, var, cfg.k);
    let (single, e_res) = scalar_ut(map, &prior, cfg)?;
    let no_split_kld = if cfg.include_no_split {
        Some(mixture_kld(&[(1.0, single.mean[0], single.covariance[(0, 0)])], &truth, cfg)?)
    } else {
        None
    };
    let mut split_klds = Vec::with_capacity(cfg.splits.len());
    if !cfg.splits.is_empty() {
        let lib = lib.ok_or(Error::MissingSplit {
            n: cfg.splits[0].0,
            sigma: cfg.splits[0].1,
        })?;
        let parent = HybridMixand::new(1.0, "x", prior.clone());
        let axis = DVector::from_element(1, 1.0);
        for &(n, sigma) in &cfg.splits {
            let split = lib.get(n, sigma)?;
            let children = apply_split(&parent, &axis, &split)?;
            let comps = children
                .iter()
                .map(|c| {
                    let (g, _) = scalar_ut(map, &c.gaussian, cfg)?;
                    Ok((c.weight, g.mean[0], g.covariance[(0, 0)]))
                })
                .collect::<Result<Vec<_>>>()?;
            split_klds.push(mixture_kld(&comps, &truth, cfg)?);
        }
    }
    Ok(SampleResult {
        mean,
        variance: var,
        e_res,
        no_split_kld,
        split_klds,
    })
}

/// Runs every arm on the same priors.
pub fn run_benchmark<M: ScalarMap>(map: &M, cfg: &BenchmarkConfig, lib: Option<&SplitLibrary>) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if let Some(lib) = lib {
        for &(n, s) in &cfg.splits {
            lib.get(n, s)?;
        }
    }
    let priors = draw_priors(cfg);
    let samples = priors
        .par_iter()
        .map(|&(m, v)| evaluate_prior(map, m, v, cfg, lib))
        .collect::<Result<Vec<_>>>()?;
    let mut arms = Vec::new();
    let mut correlation = None;
    if cfg.include_no_split {
        let klds: Vec<f64> = samples.iter().filter_map(|s| s.no_split_kld).collect();
        let (mean_kld, std_kld) = mean_std(&klds);
        arms.push(ArmSummary {
            split: None,
            mean_kld,
            std_kld,
        });
        let e: Vec<f64> = samples.iter().map(|s| s.e_res).collect();
        correlation = pearson(&e, &klds).ok();
    }
    for (i, &split) in cfg.splits.iter().enumerate() {
        let klds: Vec<f64> = samples.iter().map(|s| s.split_klds[i]).collect();
        let (mean_kld, std_kld) = mean_std(&klds);
        arms.push(ArmSummary {
            split: Some(split),
            mean_kld,
            std_kld,
        });
    }
    Ok(BenchmarkReport {
        model: map.name().to_string(),
        samples,
        arms,
        pearson: correlation,
    })
}

/// Pearson correlation of `e_res` with single-Gaussian KLD over the protocol.
pub fn correlation_study<M: ScalarMap>(map: &M, cfg: &BenchmarkConfig) -> Result<f64> {
    let cfg = BenchmarkConfig {
        include_no_split: true,
        splits: Vec::new(),
        ..cfg.clone()
    };
    run_benchmark(map, &cfg, None)?.pearson.ok_or(Error::DegenerateVariance)
}

/// Mixand view of a split benchmark result, for plotting.
pub fn split_mixture<M: ScalarMap>(map: &M, mean: f64, var: f64, split: (usize, f64), lib: &SplitLibrary, cfg: &BenchmarkConfig) -> Result<HybridMixture> {
    let parent = HybridMixand::new(1.0, "x", Gaussian::scalar(mean, var));
    let children = apply_split(&parent, &DVector::from_element(1, 1.0), lib.get(split.0, split.1)?)?;
    let mixands = children
        .iter()
        .map(|c| Ok(HybridMixand::new(c.weight, "x", scalar_ut(map, &c.gaussian, cfg)?.0)))
        .collect::<Result<Vec<_>>>()?;
    HybridMixture::new(mixands, cfg.k + 1)
}
