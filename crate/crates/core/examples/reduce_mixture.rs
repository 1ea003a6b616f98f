//! Runnalls reduction of a 60-mixand, three-hypothesis mixture to 6.

use hgmm::gaussian::{mixture_moments, Gaussian, HybridMixand, HybridMixture};
use hgmm::reduction::{reduce, ReductionConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hgmm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lanes = ["left", "straight", "right"];
    let mixands = (0..60)
        .map(|i| {
            let mean = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let cov = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| rng.random_range(0.1..1.0)));
            HybridMixand::new(rng.random_range(0.1..1.0), lanes[i % 3], Gaussian::new(mean, cov).unwrap())
        })
        .collect();
    let mix = HybridMixture::new(mixands, 0)?;
    let out = reduce(&mix, &ReductionConfig::new(6)?);

    let (m0, c0) = mixture_moments(&mix)?;
    let (m1, c1) = mixture_moments(&out)?;
    println!("{} -> {} mixands", mix.len(), out.len());
    for m in &out.mixands {
        println!("  {:<8} w = {:.4}", m.discrete, m.weight);
    }
    println!("mean error {:.2e}, covariance error {:.2e}", (m0 - m1).amax(), (c0 - c1).amax());
    Ok(())
}
