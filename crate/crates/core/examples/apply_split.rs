//! Splits a correlated 2-D mixand along an axis and checks its moments.

use hgmm::gaussian::{moments_of, Gaussian, HybridMixand};
use hgmm::splitting::{apply_split, optimize_canonical_split, SpreadGrid};
use nalgebra::DVector;

fn main() -> hgmm::Result<()> {
    let split = optimize_canonical_split(5, 0.3, &SpreadGrid::default())?;
    let parent = HybridMixand::new(
        0.8,
        "lane-1",
        Gaussian::from_slices(&[2.0, -1.0], &[&[2.0, 0.6], &[0.6, 1.0]])?,
    );
    let axis = DVector::from_vec(vec![1.0, 1.0]);
    let children = apply_split(&parent, &axis, &split)?;
    for c in &children {
        println!(
            "w = {:.4}  mean = ({:7.4}, {:7.4})",
            c.weight, c.gaussian.mean[0], c.gaussian.mean[1]
        );
    }
    println!("child covariance = {:.4}", children[0].gaussian.covariance);
    let comps: Vec<(f64, &Gaussian)> = children.iter().map(|c| (c.weight, &c.gaussian)).collect();
    let (mean, cov) = moments_of(&comps)?;
    println!("recombined mean = ({:.4}, {:.4})", mean[0], mean[1]);
    println!("recombined covariance = {:.4}", cov);
    Ok(())
}
