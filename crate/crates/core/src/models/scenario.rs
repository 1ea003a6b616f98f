//! Bicycle anticipation scenarios: road network, initial mixture and engine
//! settings, with JSON I/O.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::anticipation::EngineConfig;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, HybridMixand, HybridMixture};
use crate::linearity::ResidualNormalization;
use crate::models::bicycle::{BicycleModel, BicycleParams};
use crate::models::road::{ManhattanGrid, RoadNetwork};
use crate::reduction::ReductionConfig;
use crate::splitting::{DEFAULT_RUNTIME_N, DEFAULT_RUNTIME_SIGMA};

/// Engine fields as stored in scenario files; `null` thresholds and caps
/// mean unbounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub e_res_max: Option<f64>,
    pub normalization: ResidualNormalization,
    pub split_n: usize,
    pub split_sigma: f64,
    pub max_split_depth: usize,
    pub max_mixands: Option<usize>,
    pub lambda: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            e_res_max: Some(0.1),
            normalization: ResidualNormalization::Raw,
            split_n: DEFAULT_RUNTIME_N,
            split_sigma: DEFAULT_RUNTIME_SIGMA,
            max_split_depth: 4,
            max_mixands: Some(10),
            lambda: None,
            dt: 0.1,
            horizon: 3.5,
        }
    }
}

impl EngineSettings {
    pub fn to_config(&self) -> Result<EngineConfig> {
        let cfg = EngineConfig {
            e_res_max: self.e_res_max.unwrap_or(f64::INFINITY),
            normalization: self.normalization,
            split_n: self.split_n,
            split_sigma: self.split_sigma,
            max_split_depth: self.max_split_depth,
            reduction: match self.max_mixands {
                Some(m) => ReductionConfig::new(m)?,
                None => ReductionConfig::unbounded(),
            },
            lambda: self.lambda,
            dt: self.dt,
            horizon: self.horizon,
            sequential: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkSource {
    Grid(ManhattanGrid),
    /// Road network JSON, relative paths resolved against the scenario file.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialMixand {
    pub weight: f64,
    pub alpha: String,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub model: String,
    pub network: NetworkSource,
    #[serde(default)]
    pub bicycle: BicycleParams,
    #[serde(default)]
    pub engine: EngineSettings,
    pub seed: u64,
    pub initial: Vec<InitialMixand>,
}

/// Grid shared by the bundled scenarios.
pub fn scenario_grid() -> ManhattanGrid {
    ManhattanGrid {
        block: 100.0,
        ..ManhattanGrid::default()
    }
}

/// Prior variances of `(x, y, v, θ)` in the bundled scenarios.
pub const SCENARIO_VARIANCES: [f64; 4] = [4.0, 1.0, 4.0, 0.01];

fn single(name: &str, alpha: String, mean: [f64; 4], seed: u64) -> Scenario {
    let covariance = (0..4)
        .map(|i| (0..4).map(|j| if i == j { SCENARIO_VARIANCES[i] } else { 0.0 }).collect())
        .collect();
    Scenario {
        name: name.into(),
        model: "bicycle".into(),
        network: NetworkSource::Grid(scenario_grid()),
        bicycle: BicycleParams::default(),
        engine: EngineSettings::default(),
        seed,
        initial: vec![InitialMixand {
            weight: 1.0,
            alpha,
            mean: mean.to_vec(),
            covariance,
        }],
    }
}

impl Scenario {
    /// Eastbound along the bottom edge, clear of any intersection.
    pub fn straight() -> Self {
        single("straight", ManhattanGrid::road_id(0, 0, 'E'), [10.0, 0.0, 10.0, 0.0], 11)
    }

    /// Westbound toward a grid corner whose only exit is a right turn.
    pub fn turn() -> Self {
        let mean = [25.0, 0.0, 10.0, std::f64::consts::PI];
        single("turn", ManhattanGrid::road_id(1, 0, 'W'), mean, 12)
    }

    /// Eastbound toward the central node with left, straight and right exits.
    pub fn intersection() -> Self {
        single("intersection", ManhattanGrid::road_id(0, 1, 'E'), [75.0, 100.0, 10.0, 0.0], 13)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "straight" => Ok(Scenario::straight()),
            "turn" => Ok(Scenario::turn()),
            "intersection" => Ok(Scenario::intersection()),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        crate::io::to_json_17(self)
    }

    /// Reads a scenario, resolving a relative network path against the
    /// scenario's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut s = Scenario::from_json(&std::fs::read_to_string(path)?)?;
        if let NetworkSource::File(p) = &mut s.network {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(s)
    }

    pub fn road_network(&self) -> Result<RoadNetwork> {
        match &self.network {
            NetworkSource::Grid(g) => g.build(),
            NetworkSource::File(p) => RoadNetwork::load(p),
        }
    }

    pub fn model(&self) -> Result<BicycleModel> {
        if self.model != "bicycle" {
            return Err(Error::InvalidConfig(format!("scenario model {} is not supported", self.model)));
        }
        let params = BicycleParams {
            dt: self.engine.dt,
            ..self.bicycle.clone()
        };
        BicycleModel::new(Arc::new(self.road_network()?), params)
    }

    pub fn initial_mixture(&self) -> Result<HybridMixture> {
        let mixands = self
            .initial
            .iter()
            .map(|m| {
                let n = m.mean.len();
                if m.covariance.len() != n || m.covariance.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: m.covariance.len(),
                    });
                }
                let cov = DMatrix::from_fn(n, n, |i, j| m.covariance[i][j]);
                Ok(HybridMixand::new(
                    m.weight,
                    m.alpha.as_str(),
                    Gaussian::new(DVector::from_vec(m.mean.clone()), cov)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mix = HybridMixture::new(mixands, 0)?;
        mix.normalize();
        Ok(mix)
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        self.engine.to_config()
    }
}
