//! Four-state bicycle `(x, y, v, θ)` following road routes under a
//! pure-pursuit steering and proportional speed controller.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::anticipation::DynamicsModel;
use crate::error::{Error, Result};
use crate::gaussian::{DiscreteState, Gaussian, ProcessNoise};
use crate::models::road::{Polyline, RoadNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicycleParams {
    /// Heading gain `l` multiplying `v·u₂`.
    pub l: f64,
    pub dt: f64,
    pub target_speed: f64,
    /// Speed gain (1/s).
    pub k_v: f64,
    /// Throttle limit (m/s²).
    pub a_max: f64,
    pub u2_max: f64,
    /// Pure-pursuit lookahead distance (m).
    pub lookahead: f64,
    /// Points farther than this many half widths from the route coast with `u = 0`.
    pub off_network_factor: f64,
    /// Variances of the throttle and steering noise.
    pub noise_variances: [f64; 2],
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            l: 0.35,
            dt: 0.1,
            target_speed: 10.0,
            k_v: 1.0,
            a_max: 3.0,
            u2_max: 0.5,
            lookahead: 5.0,
            off_network_factor: 3.0,
            noise_variances: [0.25, 0.01],
        }
    }
}

struct Route {
    line: Polyline,
    segment_length: f64,
    half_width: f64,
    successors: Vec<DiscreteState>,
}

/// Bicycle obstacle on a road network; the discrete state is the current
/// segment id.
pub struct BicycleModel {
    network: Arc<RoadNetwork>,
    params: BicycleParams,
    noise: ProcessNoise,
    routes: HashMap<String, Route>,
}

/// Control inputs `(u₁, u₂)` and whether the point was off the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Control {
    pub throttle: f64,
    pub steering: f64,
    pub off_network: bool,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI { PI } else { w }
}

impl BicycleModel {
    pub fn new(network: Arc<RoadNetwork>, params: BicycleParams) -> Result<Self> {
        if !(params.dt > 0.0) || !(params.lookahead > 0.0) || !(params.l > 0.0) {
            return Err(Error::InvalidConfig("bicycle dt, l and lookahead must be positive".into()));
        }
        let noise = ProcessNoise::diagonal(&params.noise_variances)?;
        let mut routes = HashMap::with_capacity(network.segments().len());
        for seg in network.segments() {
            routes.insert(
                seg.id.clone(),
                Route {
                    line: network.route(&seg.id, 2.0 * params.lookahead)?,
                    segment_length: seg.centerline.length(),
                    half_width: seg.half_width,
                    successors: seg.successors.iter().map(DiscreteState::new).collect(),
                },
            );
        }
        Ok(BicycleModel {
            network,
            params,
            noise,
            routes,
        })
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn params(&self) -> &BicycleParams {
        &self.params
    }

    fn route(&self, alpha: &DiscreteState) -> Result<&Route> {
        self.routes
            .get(alpha.as_str())
            .ok_or_else(|| Error::UnknownSegment(alpha.to_string()))
    }

    /// Path-following control `h(x, α)`.
    pub fn control(&self, alpha: &DiscreteState, x: &DVector<f64>) -> Result<Control> {
        let route = self.route(alpha)?;
        let p = &self.params;
        let proj = route.line.project([x[0], x[1]]);
        if proj.distance > p.off_network_factor * route.half_width {
            log::debug!("state ({:.2}, {:.2}) is off route {alpha}", x[0], x[1]);
            return Ok(Control {
                throttle: 0.0,
                steering: 0.0,
                off_network: true,
            });
        }
        let throttle = (p.k_v * (p.target_speed - x[2])).clamp(-p.a_max, p.a_max);
        let target = route.line.point_at(proj.s + p.lookahead);
        let (dx, dy) = (target[0] - x[0], target[1] - x[1]);
        let bearing = wrap_angle(dy.atan2(dx) - x[3]);
        let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
        let curvature = 2.0 * bearing.sin() / dist;
        let steering = (curvature / p.l).clamp(-p.u2_max, p.u2_max);
        Ok(Control {
            throttle,
            steering,
            off_network: false,
        })
    }

    /// One step of the bicycle kinematics under control `u` and noise `v`.
    pub fn kinematics(&self, x: &DVector<f64>, u: [f64; 2], v: [f64; 2]) -> DVector<f64> {
        let p = &self.params;
        let (px, py, s, th) = (x[0], x[1], x[2], x[3]);
        DVector::from_vec(vec![
            px + p.dt * th.cos() * s,
            py + p.dt * th.sin() * s,
            s + p.dt * (u[0] + v[0]),
            th + p.dt * p.l * s * (u[1] + v[1]),
        ])
    }

    /// Along-route progress of a position on segment `alpha`.
    pub fn progress(&self, alpha: &DiscreteState, x: f64, y: f64) -> Result<f64> {
        Ok(self.route(alpha)?.line.project([x, y]).s)
    }

    /// Distance from a position to the centerline followed under `alpha`.
    pub fn centerline_distance(&self, alpha: &DiscreteState, x: f64, y: f64) -> Result<f64> {
        Ok(self.route(alpha)?.line.distance([x, y]))
    }

    fn successors_at(&self, alpha: &DiscreteState, x: f64, y: f64) -> Result<Vec<(DiscreteState, f64)>> {
        let route = self.route(alpha)?;
        if route.successors.is_empty() || route.line.project([x, y]).s < route.segment_length {
            return Ok(vec![(alpha.clone(), 1.0)]);
        }
        let p = 1.0 / route.successors.len() as f64;
        Ok(route.successors.iter().map(|s| (s.clone(), p)).collect())
    }
}

impl DynamicsModel for BicycleModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn successors(&self, alpha: &DiscreteState, g: &Gaussian, _k: usize) -> Result<Vec<(DiscreteState, f64)>> {
        self.successors_at(alpha, g.mean[0], g.mean[1])
    }

    fn propagate(&self, alpha: &DiscreteState, x: &DVector<f64>, v: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        if x.len() != 4 || v.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("non-finite bicycle state".into()));
        }
        let u = self.control(alpha, x)?;
        Ok(self.kinematics(x, [u.throttle, u.steering], [v[0], v[1]]))
    }

    fn point_successors(&self, alpha: &DiscreteState, x: &DVector<f64>, _k: usize) -> Result<Vec<(DiscreteState, f64)>> {
        self.successors_at(alpha, x[0], x[1])
    }
}
