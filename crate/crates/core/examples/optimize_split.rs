//! Optimizes canonical splits and writes them as a split cache.

use hgmm::splitting::{SplitLibrary, SpreadGrid};

fn main() -> hgmm::Result<()> {
    let grid = SpreadGrid { max: 4.0, step: 1e-3 };
    let lib = SplitLibrary::build(&[3, 5, 9], &[0.3, 0.5], &grid)?;
    println!("{:>3} {:>6} {:>9} {:>12}  weights", "N", "sigma", "delta_mu", "isd");
    for e in &lib.entries {
        let w: Vec<String> = e.weights.iter().map(|w| format!("{w:.4}")).collect();
        println!("{:>3} {:>6} {:>9.4} {:>12.4e}  [{}]", e.n, e.sigma, e.delta_mu, e.isd, w.join(", "));
    }
    let path = std::env::temp_dir().join("hgmm-split-cache.json");
    lib.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
