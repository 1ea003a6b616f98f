//! Log-likelihood and off-track error of synthetic tracks under two thresholds.

use hgmm::models::Scenario;
use hgmm::splitting::{optimize_canonical_split, SplitLibrary, SpreadGrid};
use hgmm::tracks::{track_study, TrackStudyConfig};

fn main() -> hgmm::Result<()> {
    let engine = Scenario::turn().engine_config()?;
    let lib = SplitLibrary {
        grid_step: 1e-3,
        entries: vec![optimize_canonical_split(engine.split_n, engine.split_sigma, &SpreadGrid::default())?],
    };
    let cfg = TrackStudyConfig {
        tracks: 20,
        thresholds: vec![0.1, 1.0],
        eote_samples: 2_000,
        ..TrackStudyConfig::default()
    };
    let study = track_study(&cfg, &engine, &lib)?;
    for r in &study.results {
        println!("e_res_max {:>4}: mean LL {:8.2}  mean EOTE {:7.3}", r.e_res_max, r.mean_ll(), r.mean_eote());
    }
    let (t, p) = study.ll_test(0.1, 1.0)?;
    println!("paired one-sided t = {t:.3}, p = {p:.4}");
    Ok(())
}
