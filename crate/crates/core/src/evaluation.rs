//! Accuracy metrics: numerical KLD, particle and observation likelihoods,
//! expected off-track error, collision probability and summary statistics.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::anticipation::DynamicsModel;
use crate::error::{Error, Result};
use crate::gaussian::{matrix_sqrt, mixture_moments, DiscreteState, GaussianDensity, HybridMixture};

/// Densities below this are clamped before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Integrand orientation of the numerical KLD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KldDirection {
    /// `∫ p̂ log(p̂/p)`, weighted by the approximation.
    #[default]
    Approximation,
    /// `∫ p log(p/p̂)`, weighted by the truth.
    Truth,
}

impl std::str::FromStr for KldDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" | "approximation" => Ok(KldDirection::Approximation),
            "truth" => Ok(KldDirection::Truth),
            other => Err(Error::InvalidConfig(format!("unknown KLD direction {other}"))),
        }
    }
}

/// Trapezoid KLD on `points` evenly spaced nodes over `[lo, hi]`.
pub fn numerical_kld(
    approx: impl Fn(f64) -> f64,
    truth: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
    direction: KldDirection,
) -> Result<f64> {
    if points < 2 || !(hi > lo) {
        return Err(Error::InvalidConfig("KLD grid needs at least two points and hi > lo".into()));
    }
    let h = (hi - lo) / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let x = lo + i as f64 * h;
        let (a, b) = (approx(x), truth(x));
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFiniteDensity(x));
        }
        let (a, b) = (a.max(DENSITY_FLOOR), b.max(DENSITY_FLOOR));
        let term = match direction {
            KldDirection::Approximation => a * (a / b).ln(),
            KldDirection::Truth => b * (b / a).ln(),
        };
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        total += w * term;
    }
    Ok(total * h)
}

/// Default grid `[μ̂ − 8σ̂, μ̂ + 8σ̂]` of a scalar mixture.
pub fn kld_domain(mix: &HybridMixture, width: f64) -> Result<(f64, f64)> {
    let (m, c) = mixture_moments(mix)?;
    let sd = c[(0, 0)].max(0.0).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok((m[0] - width * sd, m[0] + width * sd))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidConfig("pearson needs at least three pairs".into()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// One-sided Welch t-test of `mean(a) > mean(b)`; returns `(t, p)`.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidConfig("t-test needs two samples of size ≥ 2".into()));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = (ma - mb) / se;
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// One-sided paired t-test of `mean(a − b) > 0`; returns `(t, p)`.
pub fn paired_greater(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.len() < 2 {
        return Err(Error::InvalidConfig("t-test needs at least two pairs".into()));
    }
    let (m, s) = mean_std(&d);
    if s == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = m / (s / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// Weighted Gaussian densities with cached factorizations.
pub struct MixtureDensity {
    components: Vec<(f64, GaussianDensity)>,
}

impl MixtureDensity {
    pub fn new(mix: &HybridMixture) -> Self {
        MixtureDensity {
            components: mix.mixands.iter().map(|m| (m.weight, m.gaussian.density())).collect(),
        }
    }

    /// Over a subset of coordinates.
    pub fn marginal(mix: &HybridMixture, indices: &[usize]) -> Self {
        MixtureDensity::new(&mix.marginal(indices))
    }

    pub fn pdf_slice(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, d)| w * d.log_pdf_slice(x).exp()).sum()
    }

    pub fn pdf(&self, x: &DVector<f64>) -> f64 {
        self.pdf_slice(x.as_slice())
    }
}

/// Particle approximation of a hybrid state distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<DVector<f64>>,
    pub hypotheses: Vec<DiscreteState>,
    pub seed: u64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Draws `count` particles from a hybrid mixture.
    pub fn sample(mix: &HybridMixture, count: usize, seed: u64) -> Result<Self> {
        let comps = sampling_components(mix)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(count);
        let mut hypotheses = Vec::with_capacity(count);
        for _ in 0..count {
            let (x, i) = draw(&comps, &mut rng);
            states.push(x);
            hypotheses.push(mix.mixands[i].discrete.clone());
        }
        Ok(ParticleSet { states, hypotheses, seed })
    }

    pub fn branch_fractions(&self) -> Vec<(DiscreteState, f64)> {
        let mut out: Vec<(DiscreteState, f64)> = Vec::new();
        for h in &self.hypotheses {
            match out.iter_mut().find(|(a, _)| a == h) {
                Some((_, c)) => *c += 1.0,
                None => out.push((h.clone(), 1.0)),
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|(_, c)| *c /= n);
        out
    }
}

/// Particles per independent random stream.
const PARTICLE_BLOCK: usize = 1024;

/// Steps every particle `steps` times, drawing noise and successors; returns
/// the set after each step. Reproducible for any thread count.
pub fn propagate_particles(
    ps: &ParticleSet,
    model: &dyn DynamicsModel,
    start_k: usize,
    steps: usize,
) -> Result<Vec<ParticleSet>> {
    let noise = model.process_noise();
    let n_v = noise.dim();
    let sqrt = noise.sqrt().clone();
    let blocks: Vec<usize> = (0..ps.len().div_ceil(PARTICLE_BLOCK)).collect();
    let trajectories: Vec<Result<Vec<Vec<(DVector<f64>, DiscreteState)>>>> = blocks
        .par_iter()
        .map(|&b| {
            let mut rng = ChaCha8Rng::seed_from_u64(ps.seed);
            rng.set_stream(b as u64 + 1);
            let lo = b * PARTICLE_BLOCK;
            let hi = (lo + PARTICLE_BLOCK).min(ps.len());
            let mut current: Vec<(DVector<f64>, DiscreteState)> =
                (lo..hi).map(|i| (ps.states[i].clone(), ps.hypotheses[i].clone())).collect();
            let mut history = Vec::with_capacity(steps);
            for s in 0..steps {
                let k = start_k + s;
                for (x, alpha) in current.iter_mut() {
                    let succ = model.point_successors(alpha, x, k)?;
                    let next = pick_successor(&succ, &mut rng).ok_or_else(|| Error::NoSuccessor(alpha.to_string()))?;
                    let z = DVector::from_fn(n_v, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let v = &sqrt * z;
                    *x = model.propagate(&next, x, &v, k)?;
                    *alpha = next;
                }
                history.push(current.clone());
            }
            Ok(history)
        })
        .collect();
    let mut out: Vec<ParticleSet> = (0..steps)
        .map(|_| ParticleSet {
            states: Vec::with_capacity(ps.len()),
            hypotheses: Vec::with_capacity(ps.len()),
            seed: ps.seed,
        })
        .collect();
    for block in trajectories {
        for (s, particles) in block?.into_iter().enumerate() {
            for (x, a) in particles {
                out[s].states.push(x);
                out[s].hypotheses.push(a);
            }
        }
    }
    Ok(out)
}

fn pick_successor(succ: &[(DiscreteState, f64)], rng: &mut impl Rng) -> Option<DiscreteState> {
    match succ {
        [] => None,
        [(a, _)] => Some(a.clone()),
        _ => {
            let total: f64 = succ.iter().map(|(_, p)| p).sum();
            let mut u = rng.random::<f64>() * total;
            for (a, p) in succ {
                if u < *p {
                    return Some(a.clone());
                }
                u -= p;
            }
            succ.last().map(|(a, _)| a.clone())
        }
    }
}

/// Per-step negative log-likelihood of truth particles.
#[derive(Clone, Debug, PartialEq)]
pub struct NllStep {
    pub nll: f64,
    /// Monte-Carlo standard error of the mean.
    pub std_error: f64,
    /// Particles whose density fell below the floor.
    pub floored: usize,
}

/// `−(1/P) Σ log p̂(x_p)` over the continuous coordinates `indices`.
pub fn nll(frames: &[HybridMixture], truth: &[ParticleSet], indices: &[usize]) -> Result<Vec<NllStep>> {
    if frames.len() != truth.len() {
        return Err(Error::MisalignedTimestamps(format!(
            "{} frames but {} particle sets",
            frames.len(),
            truth.len()
        )));
    }
    frames
        .par_iter()
        .zip(truth.par_iter())
        .map(|(frame, particles)| {
            if particles.is_empty() {
                return Err(Error::InvalidConfig("empty particle set".into()));
            }
            let density = MixtureDensity::marginal(frame, indices);
            let mut buf = vec![0.0; indices.len()];
            let mut logs = Vec::with_capacity(particles.len());
            let mut floored = 0;
            for x in &particles.states {
                for (b, &i) in buf.iter_mut().zip(indices) {
                    *b = x[i];
                }
                let p = density.pdf_slice(&buf);
                if !(p >= DENSITY_FLOOR) {
                    floored += 1;
                }
                logs.push(-p.max(DENSITY_FLOOR).ln());
            }
            let (m, s) = mean_std(&logs);
            Ok(NllStep {
                nll: m,
                std_error: s / (logs.len() as f64).sqrt(),
                floored,
            })
        })
        .collect()
}

/// Timestamped measurements of one tracked vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackObservations {
    pub source: String,
    pub times: Vec<f64>,
    /// Rows of `(x, y[, v, θ])`.
    pub values: Vec<Vec<f64>>,
}

impl TrackObservations {
    pub fn new(source: impl Into<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                found: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::MisalignedTimestamps("observation times must increase strictly".into()));
        }
        Ok(TrackObservations {
            source: source.into(),
            times,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Index of the frame nearest to `t` within half a step, frames at `k·dt`
/// for `k = first_k..`.
pub fn match_frame(t: f64, first_k: usize, count: usize, dt: f64) -> Result<usize> {
    let pos = t / dt - first_k as f64;
    let idx = pos.round();
    if idx < 0.0 || idx as usize >= count || (pos - idx).abs() * dt > dt / 2.0 + 1e-9 {
        return Err(Error::NoFrameMatch(t));
    }
    Ok(idx as usize)
}

/// `Σ log p̂(observed position)` with nearest-frame matching.
pub fn log_likelihood(
    frames: &[HybridMixture],
    obs: &TrackObservations,
    dt: f64,
    position: [usize; 2],
) -> Result<f64> {
    Ok(log_likelihood_terms(frames, obs, dt, position)?.iter().map(|(_, l)| l).sum())
}

/// Matched frame index and `log p̂` for every observation.
pub fn log_likelihood_terms(
    frames: &[HybridMixture],
    obs: &TrackObservations,
    dt: f64,
    position: [usize; 2],
) -> Result<Vec<(usize, f64)>> {
    obs.times
        .iter()
        .zip(&obs.values)
        .map(|(t, row)| {
            let i = match_frame(*t, frames.first().map_or(1, |f| f.time_index), frames.len(), dt)?;
            let density = MixtureDensity::marginal(&frames[i], &position);
            Ok((i, density.pdf_slice(&row[..2]).max(DENSITY_FLOOR).ln()))
        })
        .collect()
}

type SamplingComponent = (f64, DVector<f64>, nalgebra::DMatrix<f64>);

fn sampling_components(mix: &HybridMixture) -> Result<Vec<SamplingComponent>> {
    if mix.is_empty() {
        return Err(Error::EmptyMixture);
    }
    let total = mix.total_weight();
    let mut acc = 0.0;
    mix.mixands
        .iter()
        .map(|m| {
            acc += m.weight / total;
            Ok((acc, m.gaussian.mean.clone(), matrix_sqrt(&m.gaussian.covariance)?))
        })
        .collect()
}

fn draw(comps: &[SamplingComponent], rng: &mut impl Rng) -> (DVector<f64>, usize) {
    let u: f64 = rng.random();
    let i = comps.iter().position(|(c, _, _)| u < *c).unwrap_or(comps.len() - 1);
    let (_, mean, sqrt) = &comps[i];
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    (mean + sqrt * z, i)
}

/// Samples of a mixture's continuous state from a seeded stream.
pub fn sample_mixture(mix: &HybridMixture, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>> {
    let comps = sampling_components(mix)?;
    Ok((0..count).map(|_| draw(&comps, rng).0).collect())
}

/// Expected off-track error `Σ_k E[d(x, y)]` by Monte-Carlo, with `distance`
/// giving the distance from a position to the lane centerline.
pub fn eote(
    frames: &[HybridMixture],
    distance: impl Fn(&DiscreteState, f64, f64) -> f64 + Sync,
    samples: usize,
    seed: u64,
    position: [usize; 2],
) -> Result<Vec<f64>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(k, frame)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let comps = sampling_components(frame)?;
            let mut total = 0.0;
            for _ in 0..samples {
                let (x, i) = draw(&comps, &mut rng);
                total += distance(&frame.mixands[i].discrete, x[position[0]], x[position[1]]);
            }
            Ok(total / samples as f64)
        })
        .collect()
}

/// Oriented rectangle `length × width` centered at `(x, y)` with heading `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn inflate(&self, margin: f64) -> Footprint {
        Footprint {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

fn corners(p: &Pose, f: &Footprint) -> [[f64; 2]; 4] {
    let (c, s) = (p.theta.cos(), p.theta.sin());
    let (hl, hw) = (f.length / 2.0, f.width / 2.0);
    let mut out = [[0.0; 2]; 4];
    for (k, (a, b)) in [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].iter().enumerate() {
        out[k] = [p.x + a * c - b * s, p.y + a * s + b * c];
    }
    out
}

/// Separating-axis overlap test for two oriented rectangles.
pub fn rectangles_overlap(a: &Pose, fa: &Footprint, b: &Pose, fb: &Footprint) -> bool {
    let ca = corners(a, fa);
    let cb = corners(b, fb);
    for theta in [a.theta, a.theta + std::f64::consts::FRAC_PI_2, b.theta, b.theta + std::f64::consts::FRAC_PI_2] {
        let axis = [theta.cos(), theta.sin()];
        let project = |c: &[[f64; 2]; 4]| {
            c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d = p[0] * axis[0] + p[1] * axis[1];
                (lo.min(d), hi.max(d))
            })
        };
        let (a0, a1) = project(&ca);
        let (b0, b1) = project(&cb);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

/// Collision probability with a binomial 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionEstimate {
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Monte-Carlo collision probability per frame. Obstacle poses are sampled
/// from the frame with state layout `(x, y, _, θ)`; the ego pose is taken
/// from `ego[k]`.
pub fn collision_probability(
    frames: &[HybridMixture],
    ego: &[Pose],
    ego_footprint: &Footprint,
    obstacle_footprint: &Footprint,
    samples: usize,
    seed: u64,
) -> Result<Vec<CollisionEstimate>> {
    if frames.len() != ego.len() {
        return Err(Error::MisalignedTimestamps(format!(
            "{} frames but {} ego poses",
            frames.len(),
            ego.len()
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be positive".into()));
    }
    frames
        .par_iter()
        .zip(ego.par_iter())
        .enumerate()
        .map(|(k, (frame, pose))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let comps = sampling_components(frame)?;
            let heading = frame.dim() >= 4;
            let mut hits = 0usize;
            for _ in 0..samples {
                let (x, _) = draw(&comps, &mut rng);
                let obstacle = Pose {
                    t: pose.t,
                    x: x[0],
                    y: x[1],
                    theta: if heading { x[3] } else { 0.0 },
                };
                if rectangles_overlap(pose, ego_footprint, &obstacle, obstacle_footprint) {
                    hits += 1;
                }
            }
            Ok(binomial_estimate(hits, samples))
        })
        .collect()
}

/// Wilson score interval at 95%.
pub fn binomial_estimate(hits: usize, n: usize) -> CollisionEstimate {
    let z = 1.959963984540054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    CollisionEstimate {
        probability: p,
        ci_low: (center - half).max(0.0),
        ci_high: (center + half).min(1.0),
    }
}

/// Standard normal draws, exposed for reproducible synthetic data.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Gaussian, HybridMixand, ProcessNoise};
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn normal(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
    }

    #[test]
    fn kld_identity_and_shift() {
        let p = |x: f64| normal(x, 0.0, 1.0);
        let same = numerical_kld(p, p, -8.0, 8.0, 20_000, KldDirection::Approximation).unwrap();
        assert!(same.abs() < 1e-6);
        let q = |x: f64| normal(x, 0.5, 1.0);
        for dir in [KldDirection::Approximation, KldDirection::Truth] {
            let k = numerical_kld(p, q, -8.5, 8.5, 20_000, dir).unwrap();
            assert!((k - 0.125).abs() < 1e-4, "{k}");
        }
    }

    #[test]
    fn kld_direction_matters() {
        let a = |x: f64| normal(x, 0.0, 1.0);
        let b = |x: f64| normal(x, 0.0, 4.0);
        let ab = numerical_kld(a, b, -20.0, 20.0, 40_000, KldDirection::Approximation).unwrap();
        let ba = numerical_kld(a, b, -20.0, 20.0, 40_000, KldDirection::Truth).unwrap();
        // KL(N(0,1)‖N(0,4)) and KL(N(0,4)‖N(0,1)).
        let expect_ab = 0.5 * (0.25 - 1.0 + 4.0f64.ln());
        let expect_ba = 0.5 * (4.0 - 1.0 - 4.0f64.ln());
        assert!((ab - expect_ab).abs() < 1e-6);
        assert!((ba - expect_ba).abs() < 1e-6);
    }

    #[test]
    fn kld_rejects_non_finite() {
        let bad = |_: f64| f64::NAN;
        let p = |x: f64| normal(x, 0.0, 1.0);
        assert!(matches!(
            numerical_kld(bad, p, -1.0, 1.0, 10, KldDirection::Approximation),
            Err(Error::NonFiniteDensity(_))
        ));
    }

    #[test]
    fn pearson_cases() {
        let xs = [1.0, 2.0, 3.0, 5.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&xs, &[1.0; 5]), Err(Error::DegenerateVariance)));
    }

    #[test]
    fn t_tests() {
        let a = [5.1, 4.9, 5.3, 5.0, 5.2, 5.4];
        let b = [4.0, 4.2, 3.9, 4.1, 4.3, 4.0];
        let (t, p) = welch_greater(&a, &b).unwrap();
        assert!(t > 0.0 && p < 1e-4);
        let (_, p) = welch_greater(&b, &a).unwrap();
        assert!(p > 0.99);
        let (_, p) = paired_greater(&a, &b).unwrap();
        assert!(p < 1e-3);
    }

    #[test]
    fn nll_of_matching_source_is_entropy() {
        let g = Gaussian::from_slices(&[1.0, -2.0], &[&[2.0, 0.3], &[0.3, 0.5]]).unwrap();
        let mix = HybridMixture::single("a", g.clone());
        let ps = ParticleSet::sample(&mix, 200_000, 3).unwrap();
        let out = nll(&[mix], &[ps], &[0, 1]).unwrap();
        let det = g.covariance.determinant();
        let entropy = 0.5 * (2.0 * (2.0 * PI * std::f64::consts::E).ln() + det.ln());
        assert!((out[0].nll - entropy).abs() < 4.0 * out[0].std_error, "{} vs {entropy}", out[0].nll);
        assert_eq!(out[0].floored, 0);
    }

    #[test]
    fn log_likelihood_prefers_mean() {
        let g = Gaussian::from_slices(&[0.0, 0.0], &[&[0.1, 0.0], &[0.0, 0.1]]).unwrap();
        let mut frame = HybridMixture::single("a", g);
        frame.time_index = 1;
        let at_mean = TrackObservations::new("a", vec![0.1], vec![vec![0.0, 0.0]]).unwrap();
        let off = TrackObservations::new("a", vec![0.1], vec![vec![0.95, 0.0]]).unwrap();
        let frames = [frame];
        let a = log_likelihood(&frames, &at_mean, 0.1, [0, 1]).unwrap();
        let b = log_likelihood(&frames, &off, 0.1, [0, 1]).unwrap();
        assert!(a > b);
        let empty = TrackObservations::new("a", vec![], vec![]).unwrap();
        assert_eq!(log_likelihood(&frames, &empty, 0.1, [0, 1]).unwrap(), 0.0);
        let late = TrackObservations::new("a", vec![0.3], vec![vec![0.0, 0.0]]).unwrap();
        assert!(matches!(log_likelihood(&frames, &late, 0.1, [0, 1]), Err(Error::NoFrameMatch(_))));
    }

    #[test]
    fn observations_must_increase() {
        assert!(TrackObservations::new("a", vec![0.2, 0.1], vec![vec![0.0; 2]; 2]).is_err());
    }

    #[test]
    fn eote_degenerate_point_mass() {
        let g = Gaussian::new_unchecked(DVector::from_vec(vec![3.0, 2.0]), DMatrix::zeros(2, 2));
        let frame = HybridMixture::single("a", g);
        // Centerline along y = 0.
        let d = eote(&[frame], |_, _, y| y.abs(), 1000, 1, [0, 1]).unwrap();
        assert!((d[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rectangle_overlap_cases() {
        let f = Footprint { length: 4.0, width: 2.0 };
        let p = |x: f64, y: f64, th: f64| Pose { t: 0.0, x, y, theta: th };
        assert!(rectangles_overlap(&p(0.0, 0.0, 0.0), &f, &p(3.9, 0.0, 0.0), &f));
        assert!(!rectangles_overlap(&p(0.0, 0.0, 0.0), &f, &p(4.1, 0.0, 0.0), &f));
        assert!(!rectangles_overlap(&p(0.0, 0.0, 0.0), &f, &p(0.0, 2.1, 0.0), &f));
        // Rotated by 90°, the long side now spans y.
        assert!(rectangles_overlap(&p(0.0, 0.0, 0.0), &f, &p(0.0, 2.9, std::f64::consts::FRAC_PI_2), &f));
        // Diagonal near-miss only caught by the rotated axes.
        assert!(!rectangles_overlap(&p(0.0, 0.0, 0.0), &f, &p(3.6, 2.6, std::f64::consts::FRAC_PI_4), &f));
    }

    fn frame_at(means: &[(f64, f64)], var: f64) -> HybridMixture {
        let mixands = means
            .iter()
            .map(|&(x, y)| {
                HybridMixand::new(
                    1.0,
                    "a",
                    Gaussian::new_unchecked(
                        DVector::from_vec(vec![x, y, 10.0, 0.0]),
                        DMatrix::from_diagonal(&DVector::from_vec(vec![var, var, 1.0, 1e-4])),
                    ),
                )
            })
            .collect();
        HybridMixture::new(mixands, 1).unwrap()
    }

    #[test]
    fn collision_cases() {
        let small = Footprint { length: 4.0, width: 2.0 };
        let ego = |x: f64, y: f64| Pose { t: 0.1, x, y, theta: 0.0 };
        let frame = frame_at(&[(0.0, 0.0)], 0.01);
        let far = collision_probability(&[frame.clone()], &[ego(100.0, 100.0)], &small, &small, 2000, 1).unwrap();
        assert_eq!(far[0].probability, 0.0);
        let huge = Footprint { length: 100.0, width: 100.0 };
        let all = collision_probability(&[frame], &[ego(0.0, 0.0)], &huge, &small, 2000, 1).unwrap();
        assert_eq!(all[0].probability, 1.0);
        // Symmetric bimodal frame, ego covering one mode.
        let bimodal = frame_at(&[(-20.0, 0.0), (20.0, 0.0)], 0.5);
        let box_ = Footprint { length: 20.0, width: 20.0 };
        let half = collision_probability(&[bimodal], &[ego(20.0, 0.0)], &box_, &small, 20_000, 2).unwrap();
        assert!((half[0].probability - 0.5).abs() < 3.0 * (0.25f64 / 20_000.0).sqrt());
        assert!(half[0].ci_low < 0.5 && half[0].ci_high > 0.5);
    }

    #[test]
    fn collision_monotone_in_inflation() {
        let frame = frame_at(&[(3.0, 1.0)], 1.0);
        let ego = [Pose { t: 0.1, x: 0.0, y: 0.0, theta: 0.0 }];
        let base = Footprint { length: 4.0, width: 2.0 };
        let mut last = 0.0;
        for m in [0.0, 0.5, 1.0, 2.0] {
            let p = collision_probability(&[frame.clone()], &ego, &base.inflate(m), &base, 5000, 4).unwrap()[0].probability;
            assert!(p >= last);
            last = p;
        }
    }

    /// Random walk with a two-way fork for particle tests.
    struct Walk {
        noise: ProcessNoise,
    }

    impl DynamicsModel for Walk {
        fn state_dim(&self) -> usize {
            1
        }
        fn process_noise(&self) -> &ProcessNoise {
            &self.noise
        }
        fn successors(&self, alpha: &DiscreteState, _: &Gaussian, _: usize) -> Result<Vec<(DiscreteState, f64)>> {
            if alpha.as_str() == "fork" {
                Ok(vec![("l".into(), 1.0 / 3.0), ("m".into(), 1.0 / 3.0), ("r".into(), 1.0 / 3.0)])
            } else {
                Ok(vec![(alpha.clone(), 1.0)])
            }
        }
        fn propagate(&self, _: &DiscreteState, x: &DVector<f64>, v: &DVector<f64>, _: usize) -> Result<DVector<f64>> {
            Ok(x * 0.9 + v)
        }
    }

    #[test]
    fn particles_match_linear_moments() {
        let model = Walk {
            noise: ProcessNoise::diagonal(&[0.25]).unwrap(),
        };
        let mix = HybridMixture::single("a", Gaussian::scalar(1.0, 2.0));
        let ps = ParticleSet::sample(&mix, 100_000, 5).unwrap();
        let out = propagate_particles(&ps, &model, 0, 2).unwrap();
        let xs: Vec<f64> = out[1].states.iter().map(|x| x[0]).collect();
        let (m, s) = mean_std(&xs);
        let expect_m = 0.81;
        let expect_v = 0.81 * 0.81 * 2.0 + 0.81 * 0.25 + 0.25;
        let n = xs.len() as f64;
        assert!((m - expect_m).abs() < 3.0 * (expect_v / n).sqrt());
        let se_var = expect_v * (2.0 / (n - 1.0)).sqrt();
        assert!((s * s - expect_v).abs() < 3.0 * se_var);
    }

    #[test]
    fn zero_noise_particles_are_deterministic() {
        let model = Walk {
            noise: ProcessNoise::diagonal(&[0.0]).unwrap_or_else(|_| ProcessNoise::none()),
        };
        let mix = HybridMixture::single("a", Gaussian::new_unchecked(DVector::from_element(1, 2.0), DMatrix::zeros(1, 1)));
        let ps = ParticleSet::sample(&mix, 50, 1).unwrap();
        if model.noise.dim() == 1 {
            let out = propagate_particles(&ps, &model, 0, 3).unwrap();
            assert!(out[2].states.iter().all(|x| (x[0] - 2.0 * 0.729).abs() < 1e-12));
        }
    }

    #[test]
    fn branch_fractions_are_binomial() {
        let model = Walk {
            noise: ProcessNoise::diagonal(&[0.1]).unwrap(),
        };
        let mix = HybridMixture::single("fork", Gaussian::scalar(0.0, 1.0));
        let ps = ParticleSet::sample(&mix, 30_000, 9).unwrap();
        let out = propagate_particles(&ps, &model, 0, 1).unwrap();
        let fr = out[0].branch_fractions();
        assert_eq!(fr.len(), 3);
        let tol = 3.0 * ((1.0 / 3.0) * (2.0 / 3.0) / 30_000.0f64).sqrt();
        for (_, f) in fr {
            assert!((f - 1.0 / 3.0).abs() < tol);
        }
    }

    #[test]
    fn particle_propagation_is_reproducible() {
        let model = Walk {
            noise: ProcessNoise::diagonal(&[0.3]).unwrap(),
        };
        let mix = HybridMixture::single("fork", Gaussian::scalar(0.0, 1.0));
        let ps = ParticleSet::sample(&mix, 5000, 11).unwrap();
        let a = propagate_particles(&ps, &model, 0, 2).unwrap();
        let b = propagate_particles(&ps, &model, 0, 2).unwrap();
        assert_eq!(a, b);
    }
}
