//! Collision probability of an ego car crossing an anticipated obstacle's path.

use hgmm::anticipation::anticipate;
use hgmm::evaluation::{collision_probability, Footprint, Pose};
use hgmm::models::Scenario;
use hgmm::splitting::{optimize_canonical_split, SplitLibrary, SpreadGrid};

fn main() -> hgmm::Result<()> {
    let scenario = Scenario::intersection();
    let cfg = scenario.engine_config()?;
    let lib = SplitLibrary {
        grid_step: 1e-3,
        entries: vec![optimize_canonical_split(cfg.split_n, cfg.split_sigma, &SpreadGrid::default())?],
    };
    let frames = anticipate(&scenario.initial_mixture()?, &scenario.model()?, &cfg, &lib)?;

    // Ego drives north through the central node at 8 m/s.
    let ego: Vec<Pose> = frames
        .iter()
        .map(|f| {
            let t = f.time_index as f64 * cfg.dt;
            Pose {
                t,
                x: 101.75,
                y: 80.0 + 8.0 * t,
                theta: std::f64::consts::FRAC_PI_2,
            }
        })
        .collect();
    let car = Footprint { length: 4.5, width: 1.8 };
    let est = collision_probability(&frames, &ego, &car, &car, 20_000, 3)?;
    println!("{:>5} {:>8} {:>18}", "t", "P(hit)", "95% interval");
    for (p, e) in ego.iter().zip(&est).step_by(3) {
        println!("{:>5.1} {:>8.4} [{:.4}, {:.4}]", p.t, e.probability, e.ci_low, e.ci_high);
    }
    Ok(())
}
