//! Synthetic vehicle tracks drawn from the bicycle model and the
//! likelihood / off-track comparison of anticipation settings on them.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::anticipation::{anticipate, DynamicsModel, EngineConfig};
use crate::error::{Error, Result};
use crate::evaluation::{eote, log_likelihood, mean_std, paired_greater, ParticleSet, TrackObservations};
use crate::gaussian::HybridMixture;
use crate::models::{BicycleModel, Scenario};
use crate::splitting::SplitLibrary;

/// One synthetic track and the prior it was drawn from.
#[derive(Clone, Debug)]
pub struct SyntheticTrack {
    pub scenario: String,
    pub prior: HybridMixture,
    pub observations: TrackObservations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackStudyConfig {
    pub tracks: usize,
    pub seed: u64,
    /// Scenarios cycled through by track index.
    pub scenarios: Vec<String>,
    /// Along-track shift of the prior mean, drawn from `U(lo, hi)` metres.
    pub shift: (f64, f64),
    /// Prior mean speed drawn from `U(lo, hi)`.
    pub speed: (f64, f64),
    /// Thresholds compared; `f64::INFINITY` is the single-Gaussian predictor.
    pub thresholds: Vec<f64>,
    pub eote_samples: usize,
}

impl Default for TrackStudyConfig {
    fn default() -> Self {
        TrackStudyConfig {
            tracks: 40,
            seed: 2007,
            scenarios: vec!["turn".into(), "intersection".into()],
            shift: (-10.0, 5.0),
            speed: (8.0, 12.0),
            thresholds: vec![0.1, 0.2, 1.0],
            eote_samples: 10_000,
        }
    }
}

/// Per-threshold metrics, one entry per track.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub e_res_max: f64,
    pub log_likelihood: Vec<f64>,
    /// Expected off-track error summed over the horizon.
    pub eote: Vec<f64>,
}

impl ThresholdResult {
    pub fn mean_ll(&self) -> f64 {
        mean_std(&self.log_likelihood).0
    }

    pub fn mean_eote(&self) -> f64 {
        mean_std(&self.eote).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackStudy {
    pub results: Vec<ThresholdResult>,
}

impl TrackStudy {
    pub fn get(&self, e_res_max: f64) -> Option<&ThresholdResult> {
        self.results.iter().find(|r| r.e_res_max == e_res_max)
    }

    /// One-sided paired t-test that threshold `a` has higher LL than `b`.
    pub fn ll_test(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let ra = self.get(a).ok_or_else(|| Error::InvalidConfig(format!("threshold {a} not in study")))?;
        let rb = self.get(b).ok_or_else(|| Error::InvalidConfig(format!("threshold {b} not in study")))?;
        paired_greater(&ra.log_likelihood, &rb.log_likelihood)
    }
}

/// Shifts a scenario prior along its heading and resets its mean speed.
fn shifted_prior(base: &HybridMixture, shift: f64, speed: f64) -> HybridMixture {
    let mut mix = base.clone();
    for m in &mut mix.mixands {
        let th = m.gaussian.mean[3];
        m.gaussian.mean[0] += shift * th.cos();
        m.gaussian.mean[1] += shift * th.sin();
        m.gaussian.mean[2] = speed;
    }
    mix
}

/// Draws `cfg.tracks` tracks; each true initial state is sampled from its
/// prior and stepped with process noise, observed once per step.
pub fn generate_tracks(cfg: &TrackStudyConfig, steps: usize) -> Result<Vec<SyntheticTrack>> {
    if cfg.tracks == 0 || cfg.scenarios.is_empty() {
        return Err(Error::InvalidConfig("track study needs tracks and scenarios".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.tracks);
    for i in 0..cfg.tracks {
        let name = &cfg.scenarios[i % cfg.scenarios.len()];
        let scenario = Scenario::by_name(name)?;
        let model = scenario.model()?;
        let shift = rng.random_range(cfg.shift.0..cfg.shift.1);
        let speed = rng.random_range(cfg.speed.0..cfg.speed.1);
        let prior = shifted_prior(&scenario.initial_mixture()?, shift, speed);
        let truth = ParticleSet::sample(&prior, 1, rng.random())?;
        let path = crate::evaluation::propagate_particles(&truth, &model, 0, steps)?;
        let dt = model.params().dt;
        let times = (1..=steps).map(|k| k as f64 * dt).collect();
        let values = path.iter().map(|p| p.states[0].as_slice().to_vec()).collect();
        out.push(SyntheticTrack {
            scenario: name.clone(),
            prior,
            observations: TrackObservations::new(format!("synthetic-{i}"), times, values)?,
        });
    }
    Ok(out)
}

/// Anticipates each track's prior under every threshold and scores the
/// frames by observation log-likelihood and expected off-track error.
pub fn track_study(cfg: &TrackStudyConfig, engine: &EngineConfig, lib: &SplitLibrary) -> Result<TrackStudy> {
    let steps = engine.steps()?;
    let tracks = generate_tracks(cfg, steps)?;
    let models = cfg
        .scenarios
        .iter()
        .map(|s| Ok((s.clone(), Scenario::by_name(s)?.model()?)))
        .collect::<Result<Vec<(String, BicycleModel)>>>()?;
    let model_for = |name: &str| &models.iter().find(|(n, _)| n == name).expect("scenario model").1;
    let results = cfg
        .thresholds
        .iter()
        .map(|&e| {
            let run_cfg = EngineConfig {
                e_res_max: e,
                sequential: true,
                ..engine.clone()
            };
            let per_track = tracks
                .par_iter()
                .enumerate()
                .map(|(i, t)| {
                    let model = model_for(&t.scenario);
                    let frames = anticipate(&t.prior, model, &run_cfg, lib)?;
                    let ll = log_likelihood(&frames, &t.observations, run_cfg.dt, [0, 1])?;
                    let distance = |a: &crate::gaussian::DiscreteState, x: f64, y: f64| {
                        model.centerline_distance(a, x, y).unwrap_or(f64::INFINITY)
                    };
                    let per_frame = eote(&frames, distance, cfg.eote_samples, cfg.seed ^ i as u64, [0, 1])?;
                    Ok((ll, per_frame.iter().sum::<f64>()))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            Ok(ThresholdResult {
                e_res_max: e,
                log_likelihood: per_track.iter().map(|r| r.0).collect(),
                eote: per_track.iter().map(|r| r.1).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrackStudy { results })
}

/// Largest centerline distance of the noiseless track from the prior mean.
pub fn noiseless_track_error(model: &BicycleModel, prior: &HybridMixture, steps: usize) -> Result<f64> {
    let mut alpha = prior.mixands[0].discrete.clone();
    let mut x = prior.mixands[0].gaussian.mean.clone();
    let zero = DVector::zeros(model.process_noise().dim());
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        alpha = model.point_successors(&alpha, &x, k)?[0].0.clone();
        x = model.propagate(&alpha, &x, &zero, k)?;
        worst = worst.max(model.centerline_distance(&alpha, x[0], x[1])?);
    }
    Ok(worst)
}
