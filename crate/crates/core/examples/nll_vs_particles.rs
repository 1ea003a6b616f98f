//! NLL of particle truth under split and unsplit anticipation on a turn.

use hgmm::anticipation::{anticipate, EngineConfig};
use hgmm::evaluation::{nll, propagate_particles, ParticleSet};
use hgmm::models::Scenario;
use hgmm::splitting::{optimize_canonical_split, SplitLibrary, SpreadGrid};

fn main() -> hgmm::Result<()> {
    let scenario = Scenario::turn();
    let cfg = scenario.engine_config()?;
    let lib = SplitLibrary {
        grid_step: 1e-3,
        entries: vec![optimize_canonical_split(cfg.split_n, cfg.split_sigma, &SpreadGrid::default())?],
    };
    let model = scenario.model()?;
    let init = scenario.initial_mixture()?;
    let start = ParticleSet::sample(&init, 20_000, scenario.seed)?;
    let truth = propagate_particles(&start, &model, 0, cfg.steps()?)?;

    let indices = [0, 1, 2, 3];
    let split = nll(&anticipate(&init, &model, &cfg, &lib)?, &truth, &indices)?;
    let plain_cfg = EngineConfig {
        e_res_max: f64::INFINITY,
        ..cfg.clone()
    };
    let plain = nll(&anticipate(&init, &model, &plain_cfg, &lib)?, &truth, &indices)?;

    println!("{:>5} {:>10} {:>10}", "t", "split", "no split");
    for (k, (a, b)) in split.iter().zip(&plain).enumerate().step_by(5) {
        println!("{:>5.1} {:>10.3} {:>10.3}", (k + 1) as f64 * cfg.dt, a.nll, b.nll);
    }
    let mean = |v: &[hgmm::evaluation::NllStep]| v.iter().map(|s| s.nll).sum::<f64>() / v.len() as f64;
    println!("mean  {:>10.3} {:>10.3}", mean(&split), mean(&plain));
    Ok(())
}
