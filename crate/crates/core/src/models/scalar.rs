//! Univariate benchmark maps and their exact propagated densities.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::anticipation::DynamicsModel;
use crate::error::Result;
use crate::gaussian::{DiscreteState, Gaussian, ProcessNoise};

/// Deterministic scalar map `x_{k+1} = f(x_k, k)`.
pub trait ScalarMap: Sync {
    fn eval(&self, x: f64, k: usize) -> f64;
    fn derivative(&self, x: f64, k: usize) -> f64;
    fn name(&self) -> &'static str;
}

/// Univariate non-stationary growth model
/// `αx + βx/(1+x²) + γ cos(1.2k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UngmModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for UngmModel {
    fn default() -> Self {
        UngmModel {
            alpha: 0.3,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl UngmModel {
    pub fn step(&self, x: f64, k: usize) -> f64 {
        self.alpha * x + self.beta * x / (1.0 + x * x) + self.gamma * (1.2 * k as f64).cos()
    }
}

impl ScalarMap for UngmModel {
    fn eval(&self, x: f64, k: usize) -> f64 {
        self.step(x, k)
    }

    fn derivative(&self, x: f64, _k: usize) -> f64 {
        let s = 1.0 + x * x;
        self.alpha + self.beta * (1.0 - x * x) / (s * s)
    }

    fn name(&self) -> &'static str {
        "ungm"
    }
}

/// Univariate cubic `ax³ + bx² + cx + d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for CubicModel {
    fn default() -> Self {
        CubicModel {
            a: 6.0,
            b: 1.0,
            c: 1.0,
            d: 1.0,
        }
    }
}

impl CubicModel {
    pub fn step(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }
}

impl ScalarMap for CubicModel {
    fn eval(&self, x: f64, _k: usize) -> f64 {
        self.step(x)
    }

    fn derivative(&self, x: f64, _k: usize) -> f64 {
        (3.0 * self.a * x + 2.0 * self.b) * x + self.c
    }

    fn name(&self) -> &'static str {
        "cubic"
    }
}

/// Adapts a scalar map to the engine with a single hypothesis and no noise.
pub struct ScalarDynamics<M> {
    pub map: M,
    noise: ProcessNoise,
    /// Added to the engine's step index when evaluating the map.
    pub k_offset: usize,
}

impl<M: ScalarMap> ScalarDynamics<M> {
    pub fn new(map: M) -> Self {
        ScalarDynamics {
            map,
            noise: ProcessNoise::none(),
            k_offset: 0,
        }
    }
}

impl<M: ScalarMap> DynamicsModel for ScalarDynamics<M> {
    fn state_dim(&self) -> usize {
        1
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn successors(&self, alpha: &DiscreteState, _g: &Gaussian, _k: usize) -> Result<Vec<(DiscreteState, f64)>> {
        Ok(vec![(alpha.clone(), 1.0)])
    }

    fn propagate(&self, _alpha: &DiscreteState, x: &DVector<f64>, _v: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.map.eval(x[0], k + self.k_offset)))
    }
}

/// Monotone piece `[lo, hi]` of the map over the prior's support.
#[derive(Clone, Copy, Debug)]
struct Branch {
    lo: f64,
    hi: f64,
    y_lo: f64,
    y_hi: f64,
    increasing: bool,
}

/// Density of `f(x)` for `x ~ N(μ, σ²)` by change of variables.
pub struct TruthDensity<'a, M: ScalarMap> {
    map: &'a M,
    k: usize,
    mean: f64,
    var: f64,
    branches: Vec<Branch>,
}

/// Prior support is truncated at this many standard deviations.
const SUPPORT_SIGMAS: f64 = 12.0;
const SCAN_POINTS: usize = 4000;

impl<'a, M: ScalarMap> TruthDensity<'a, M> {
    pub fn new(map: &'a M, mean: f64, var: f64, k: usize) -> Self {
        let sd = var.sqrt();
        let (lo, hi) = (mean - SUPPORT_SIGMAS * sd, mean + SUPPORT_SIGMAS * sd);
        let mut cuts = vec![lo];
        let h = (hi - lo) / SCAN_POINTS as f64;
        let mut prev = map.derivative(lo, k);
        for i in 1..=SCAN_POINTS {
            let x = lo + i as f64 * h;
            let d = map.derivative(x, k);
            if prev.signum() != d.signum() && prev != 0.0 && d != 0.0 {
                cuts.push(bisect(|t| map.derivative(t, k), x - h, x));
            }
            prev = d;
        }
        cuts.push(hi);
        let branches = cuts
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let (ya, yb) = (map.eval(w[0], k), map.eval(w[1], k));
                Branch {
                    lo: w[0],
                    hi: w[1],
                    y_lo: ya.min(yb),
                    y_hi: ya.max(yb),
                    increasing: yb >= ya,
                }
            })
            .collect();
        TruthDensity {
            map,
            k,
            mean,
            var,
            branches,
        }
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let mut total = 0.0;
        for b in &self.branches {
            if y < b.y_lo || y > b.y_hi {
                continue;
            }
            let x = self.invert(b, y);
            let slope = self.map.derivative(x, self.k).abs();
            if slope > 0.0 {
                let z = x - self.mean;
                total += (-0.5 * z * z / self.var).exp() / (2.0 * PI * self.var).sqrt() / slope;
            }
        }
        total
    }

    /// Safeguarded Newton on a monotone branch.
    fn invert(&self, b: &Branch, y: f64) -> f64 {
        let (mut lo, mut hi) = (b.lo, b.hi);
        let g = |x: f64| {
            let v = self.map.eval(x, self.k) - y;
            if b.increasing {
                v
            } else {
                -v
            }
        };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return x;
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.map.derivative(x, self.k) * if b.increasing { 1.0 } else { -1.0 };
            let newton = x - gx / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-15 * (1.0 + m.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}
