//! Mixture reduction by greedy pairwise merging (Runnalls' KLD upper bound).
//!
//! Merging is moment-matched, so the mixture mean and covariance are
//! preserved exactly. Only mixands sharing a discrete hypothesis merge.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, Gaussian, HybridMixand, HybridMixture};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReductionConfig {
    pub max_mixands: usize,
}

impl ReductionConfig {
    pub fn new(max_mixands: usize) -> Result<Self> {
        if max_mixands == 0 {
            return Err(Error::InvalidConfig("max_mixands must be at least 1".into()));
        }
        Ok(ReductionConfig { max_mixands })
    }

    pub fn unbounded() -> Self {
        ReductionConfig {
            max_mixands: usize::MAX,
        }
    }
}

/// Moment-matched merge of two mixands (weights summed).
pub fn merge_pair(a: &HybridMixand, b: &HybridMixand) -> HybridMixand {
    let w = a.weight + b.weight;
    let (fa, fb) = (a.weight / w, b.weight / w);
    let mean = &a.gaussian.mean * fa + &b.gaussian.mean * fb;
    let d = &a.gaussian.mean - &b.gaussian.mean;
    let cov = &a.gaussian.covariance * fa + &b.gaussian.covariance * fb + (&d * d.transpose()) * (fa * fb);
    HybridMixand {
        weight: w,
        discrete: a.discrete.clone(),
        gaussian: Gaussian::new_unchecked(mean, symmetrize(&cov)),
    }
}

/// `log det` of a symmetric positive semi-definite matrix; `-inf` if singular.
pub fn log_det(cov: &DMatrix<f64>) -> f64 {
    match cov.clone().cholesky() {
        Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => cov
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .map(|&v| v.max(0.0).ln())
            .sum(),
    }
}

/// Runnalls dissimilarity `½[(wᵢ+wⱼ) log det Σᵢⱼ − wᵢ log det Σᵢ − wⱼ log det Σⱼ]`.
pub fn runnalls_cost(a: &HybridMixand, b: &HybridMixand) -> f64 {
    let merged = merge_pair(a, b);
    runnalls_cost_with(a, b, log_det(&a.gaussian.covariance), log_det(&b.gaussian.covariance), &merged)
}

fn runnalls_cost_with(a: &HybridMixand, b: &HybridMixand, ld_a: f64, ld_b: f64, merged: &HybridMixand) -> f64 {
    let ld_m = log_det(&merged.gaussian.covariance);
    let cost = 0.5 * ((a.weight + b.weight) * ld_m - a.weight * ld_a - b.weight * ld_b);
    if cost.is_nan() {
        // Both singular along a shared direction: identical mixands give 0.
        if (&a.gaussian.mean - &b.gaussian.mean).norm() == 0.0 && a.gaussian.covariance == b.gaussian.covariance {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        cost.max(0.0)
    }
}

/// Reduces the mixture to at most `max_mixands` components.
pub fn reduce(mix: &HybridMixture, cfg: &ReductionConfig) -> HybridMixture {
    if mix.len() <= cfg.max_mixands {
        return mix.clone();
    }
    let mut mixands = drop_excess_hypotheses(mix, cfg.max_mixands);
    let mut log_dets: Vec<f64> = mixands.iter().map(|m| log_det(&m.gaussian.covariance)).collect();
    let n = mixands.len();
    // Upper-triangular cost cache, infinite across hypotheses.
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            cost[i][j] = pair_cost(&mixands, &log_dets, i, j);
        }
    }
    let mut alive = vec![true; n];
    let mut count = n;
    while count > cfg.max_mixands {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if alive[j] && best.is_none_or(|(_, _, c)| cost[i][j] < c) {
                    best = Some((i, j, cost[i][j]));
                }
            }
        }
        let Some((i, j, c)) = best else { break };
        if !c.is_finite() {
            break;
        }
        mixands[i] = merge_pair(&mixands[i], &mixands[j]);
        log_dets[i] = log_det(&mixands[i].gaussian.covariance);
        alive[j] = false;
        count -= 1;
        for k in 0..n {
            if alive[k] && k != i {
                let (a, b) = if k < i { (k, i) } else { (i, k) };
                cost[a][b] = pair_cost(&mixands, &log_dets, a, b);
            }
        }
    }
    let kept: Vec<HybridMixand> = mixands
        .into_iter()
        .zip(alive)
        .filter_map(|(m, keep)| keep.then_some(m))
        .collect();
    let mut out = HybridMixture {
        mixands: kept,
        time_index: mix.time_index,
    };
    out.normalize();
    out
}

fn pair_cost(mixands: &[HybridMixand], log_dets: &[f64], i: usize, j: usize) -> f64 {
    let (a, b) = (&mixands[i], &mixands[j]);
    if a.discrete != b.discrete {
        return f64::INFINITY;
    }
    runnalls_cost_with(a, b, log_dets[i], log_dets[j], &merge_pair(a, b))
}

/// Keeps the `cap` heaviest hypotheses when there are more distinct
/// hypotheses than the cap allows.
fn drop_excess_hypotheses(mix: &HybridMixture, cap: usize) -> Vec<HybridMixand> {
    let hyps = mix.hypotheses();
    if hyps.len() <= cap {
        return mix.mixands.clone();
    }
    let mut totals: Vec<(usize, f64)> = hyps
        .iter()
        .enumerate()
        .map(|(i, h)| {
            (
                i,
                mix.mixands.iter().filter(|m| &m.discrete == *h).map(|m| m.weight).sum(),
            )
        })
        .collect();
    totals.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let keep: Vec<&crate::gaussian::DiscreteState> = totals[..cap].iter().map(|&(i, _)| hyps[i]).collect();
    log::warn!(
        "{} discrete hypotheses exceed the mixand cap {cap}; dropping the lightest {}",
        hyps.len(),
        hyps.len() - cap
    );
    let mut out: Vec<HybridMixand> = mix
        .mixands
        .iter()
        .filter(|m| keep.contains(&&m.discrete))
        .cloned()
        .collect();
    let total: f64 = out.iter().map(|m| m.weight).sum();
    for m in &mut out {
        m.weight /= total;
    }
    out
}

/// Weighted mean of a mixture restricted to one hypothesis.
pub fn hypothesis_mean(mix: &HybridMixture, alpha: &crate::gaussian::DiscreteState) -> Option<DVector<f64>> {
    let mut total = 0.0;
    let mut mean: Option<DVector<f64>> = None;
    for m in mix.mixands.iter().filter(|m| &m.discrete == alpha) {
        total += m.weight;
        mean = Some(match mean {
            Some(acc) => acc + &m.gaussian.mean * m.weight,
            None => &m.gaussian.mean * m.weight,
        });
    }
    mean.map(|m| m / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{isd_terms, mixture_moments};
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mixture(rng: &mut ChaCha8Rng, m: usize, dim: usize, hyps: &[&str]) -> HybridMixture {
        let mixands = (0..m)
            .map(|i| {
                let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
                let cov = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
                let mean = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
                HybridMixand::new(
                    rng.random_range(0.1..1.0),
                    hyps[i % hyps.len()],
                    Gaussian::new(mean, cov).unwrap(),
                )
            })
            .collect();
        HybridMixture::new(mixands, 0).unwrap()
    }

    fn moment_error(a: &HybridMixture, b: &HybridMixture) -> f64 {
        let (ma, ca) = mixture_moments(a).unwrap();
        let (mb, cb) = mixture_moments(b).unwrap();
        (ma - mb).amax().max((ca - cb).amax())
    }

    #[test]
    fn under_cap_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mix = random_mixture(&mut rng, 5, 2, &["a"]);
        assert_eq!(reduce(&mix, &ReductionConfig::new(5).unwrap()), mix);
    }

    #[test]
    fn identical_mixands_merge_to_one() {
        let g = Gaussian::from_slices(&[1.0, -1.0], &[&[2.0, 0.5], &[0.5, 1.0]]).unwrap();
        let mix = HybridMixture::new(
            vec![HybridMixand::new(0.5, "a", g.clone()), HybridMixand::new(0.5, "a", g.clone())],
            0,
        )
        .unwrap();
        let out = reduce(&mix, &ReductionConfig::new(1).unwrap());
        assert_eq!(out.len(), 1);
        assert!((out.mixands[0].weight - 1.0).abs() < 1e-15);
        assert!((&out.mixands[0].gaussian.mean - &g.mean).norm() < 1e-15);
        assert!((&out.mixands[0].gaussian.covariance - &g.covariance).norm() < 1e-14);
        assert_eq!(runnalls_cost(&mix.mixands[0], &mix.mixands[1]), 0.0);
    }

    #[test]
    fn moments_preserved_from_hundred_to_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mix = random_mixture(&mut rng, 100, 2, &["a", "b", "c"]);
            let out = reduce(&mix, &ReductionConfig::new(10).unwrap());
            assert_eq!(out.len(), 10);
            assert!(moment_error(&mix, &out) < 1e-9);
            assert!((out.total_weight() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hypotheses_never_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mix = random_mixture(&mut rng, 30, 2, &["a", "b", "c"]);
        let out = reduce(&mix, &ReductionConfig::new(3).unwrap());
        assert_eq!(out.len(), 3);
        let hyps: Vec<String> = out.mixands.iter().map(|m| m.discrete.0.clone()).collect();
        assert_eq!(hyps, vec!["a", "b", "c"]);
        for h in ["a", "b", "c"] {
            let before: f64 = mix.mixands.iter().filter(|m| m.discrete.as_str() == h).map(|m| m.weight).sum();
            let after: f64 = out.mixands.iter().filter(|m| m.discrete.as_str() == h).map(|m| m.weight).sum();
            assert!((before - after).abs() < 1e-12);
            let a = hypothesis_mean(&mix, &h.into()).unwrap();
            let b = hypothesis_mean(&out, &h.into()).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn excess_hypotheses_are_dropped() {
        let g = Gaussian::standard(1);
        let mix = HybridMixture::new(
            vec![
                HybridMixand::new(0.5, "a", g.clone()),
                HybridMixand::new(0.1, "b", g.clone()),
                HybridMixand::new(0.4, "c", g.clone()),
            ],
            0,
        )
        .unwrap();
        let out = reduce(&mix, &ReductionConfig::new(2).unwrap());
        let hyps: Vec<&str> = out.mixands.iter().map(|m| m.discrete.as_str()).collect();
        assert_eq!(hyps, vec!["a", "c"]);
        assert!((out.total_weight() - 1.0).abs() < 1e-15);
    }

    /// Random merge sequences as an oracle: greedy should beat the median.
    fn random_sequence_reduce(mix: &HybridMixture, cap: usize, rng: &mut ChaCha8Rng) -> HybridMixture {
        let mut mixands = mix.mixands.clone();
        while mixands.len() > cap {
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..mixands.len() {
                for j in (i + 1)..mixands.len() {
                    if mixands[i].discrete == mixands[j].discrete {
                        pairs.push((i, j));
                    }
                }
            }
            let &(i, j) = pairs.choose(rng).unwrap();
            mixands[i] = merge_pair(&mixands[i], &mixands[j]);
            mixands.remove(j);
        }
        HybridMixture { mixands, time_index: 0 }
    }

    fn isd_between(a: &HybridMixture, b: &HybridMixture) -> f64 {
        // ISD(a, b) = Σ_a Σ_a + Σ_b Σ_b − 2 Σ_a Σ_b via single-target terms.
        let cross = |x: &HybridMixture, y: &HybridMixture| -> f64 {
            x.mixands
                .iter()
                .map(|m| m.weight * isd_terms(&m.gaussian, &y.components()).unwrap().j12)
                .sum()
        };
        cross(a, a) + cross(b, b) - 2.0 * cross(a, b)
    }

    #[test]
    fn greedy_beats_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mix = random_mixture(&mut rng, 20, 2, &["a"]);
        let greedy = reduce(&mix, &ReductionConfig::new(10).unwrap());
        assert!(moment_error(&mix, &greedy) < 1e-9);
        let g = isd_between(&mix, &greedy);
        let mut random: Vec<f64> = (0..20)
            .map(|_| isd_between(&mix, &random_sequence_reduce(&mix, 10, &mut rng)))
            .collect();
        random.sort_by(f64::total_cmp);
        assert!(g <= random[10], "{g} vs median {}", random[10]);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mix = random_mixture(&mut rng, 40, 3, &["a", "b"]);
        let cfg = ReductionConfig::new(7).unwrap();
        assert_eq!(reduce(&mix, &cfg), reduce(&mix, &cfg));
    }
}
