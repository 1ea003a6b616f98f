//! Single-Gaussian vs split propagation through UNGM and the cubic map.

use hgmm::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkReport};
use hgmm::models::{CubicModel, UngmModel};
use hgmm::splitting::{SplitLibrary, SpreadGrid};

fn print(report: &BenchmarkReport) {
    println!("{}:", report.model);
    for arm in &report.arms {
        let label = arm.split.map_or("no split".to_string(), |(n, s)| format!("N={n} sigma={s}"));
        println!("  {label:<16} KLD {:.4} +- {:.4}", arm.mean_kld, arm.std_kld);
    }
    if let Some(r) = report.pearson {
        println!("  pearson(e_res, KLD) = {r:.3}");
    }
}

fn main() -> hgmm::Result<()> {
    let lib = SplitLibrary::build(&[3, 5, 9], &[0.3, 0.5], &SpreadGrid::default())?;
    let cfg = BenchmarkConfig {
        splits: vec![(3, 0.5), (5, 0.3), (9, 0.3)],
        ..BenchmarkConfig::default()
    };
    print(&run_benchmark(&UngmModel::default(), &cfg, Some(&lib))?);
    print(&run_benchmark(&CubicModel::default(), &cfg, Some(&lib))?);
    Ok(())
}
