//! Anticipates a car approaching a three-way choice at a grid intersection.

use hgmm::anticipation::anticipate_detailed;
use hgmm::io::save_frames;
use hgmm::models::Scenario;
use hgmm::splitting::{optimize_canonical_split, SplitLibrary, SpreadGrid};

fn main() -> hgmm::Result<()> {
    let scenario = Scenario::intersection();
    let cfg = scenario.engine_config()?;
    let lib = SplitLibrary {
        grid_step: 1e-3,
        entries: vec![optimize_canonical_split(cfg.split_n, cfg.split_sigma, &SpreadGrid::default())?],
    };
    let model = scenario.model()?;
    let (frames, stats) = anticipate_detailed(&scenario.initial_mixture()?, &model, &cfg, &lib)?;

    println!("{:>4} {:>5} {:>8} {:>6}  hypotheses", "k", "t", "mixands", "splits");
    for (f, s) in frames.iter().zip(&stats) {
        let hyps: Vec<String> = f.hypotheses().iter().map(|h| h.to_string()).collect();
        println!(
            "{:>4} {:>5.1} {:>8} {:>6}  {}",
            f.time_index,
            f.time_index as f64 * cfg.dt,
            f.len(),
            s.splits,
            hyps.join(" ")
        );
    }
    let path = std::env::temp_dir().join("hgmm-intersection.jsonl");
    save_frames(&path, &frames, cfg.dt)?;
    println!("wrote {}", path.display());
    Ok(())
}
