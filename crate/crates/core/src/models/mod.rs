pub mod bicycle;
pub mod road;
pub mod scalar;
pub mod scenario;

pub use bicycle::{BicycleModel, BicycleParams};
pub use road::{ManhattanGrid, Polyline, RoadNetwork, SegmentSpec};
pub use scalar::{CubicModel, ScalarDynamics, ScalarMap, TruthDensity, UngmModel};
pub use scenario::{EngineSettings, Scenario};
