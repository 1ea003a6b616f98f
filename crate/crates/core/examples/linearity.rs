//! Linearity residual of the UNGM map for priors of growing width.

use hgmm::gaussian::{Gaussian, ProcessNoise};
use hgmm::linearity::{assess_linearity, LinearityOptions, ResidualNormalization};
use hgmm::models::{ScalarMap, UngmModel};
use hgmm::sigma::{default_lambda, generate_sigma_points};

fn main() -> hgmm::Result<()> {
    let ungm = UngmModel::default();
    let opts = LinearityOptions {
        threshold: 0.1,
        normalization: ResidualNormalization::Raw,
    };
    println!("{:>8} {:>10} {:>8}", "variance", "e_res", "passed");
    for var in [0.01, 0.05, 0.1, 0.5, 1.0, 2.0] {
        let prior = Gaussian::scalar(0.5, var);
        let set = generate_sigma_points(&prior, &ProcessNoise::none(), default_lambda(1, 0))?;
        let pre = set.state_subset();
        let post = pre.map(|x| ungm.eval(x, 0));
        let r = assess_linearity(&pre, &post, &prior, &opts)?;
        println!("{var:>8} {:>10.5} {:>8}", r.e_res, r.passed);
    }
    Ok(())
}
