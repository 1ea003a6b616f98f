//! Unscented prediction of a range/bearing Gaussian into Cartesian space.

use hgmm::gaussian::{DiscreteState, Gaussian, ProcessNoise};
use hgmm::sigma::{default_lambda, generate_sigma_points, unscented_predict};
use nalgebra::DVector;

fn main() -> hgmm::Result<()> {
    let polar = Gaussian::from_slices(&[10.0, 0.6], &[&[0.25, 0.0], &[0.0, 0.04]])?;
    let noise = ProcessNoise::diagonal(&[0.01, 0.01])?;
    let lambda = default_lambda(2, 2);

    let set = generate_sigma_points(&polar, &noise, lambda)?;
    println!("{} sigma points, gamma = {:.4}", set.len(), set.gamma);
    for j in 0..set.len() {
        let x = set.state_points.column(j);
        let v = set.noise_points.column(j);
        println!("  chi[{j:>2}] = ({:8.4}, {:7.4})  upsilon = ({:7.4}, {:7.4})", x[0], x[1], v[0], v[1]);
    }

    let to_cartesian = |_: &DiscreteState, x: &DVector<f64>, v: &DVector<f64>| {
        Ok(DVector::from_vec(vec![x[0] * x[1].cos() + v[0], x[0] * x[1].sin() + v[1]]))
    };
    let out = unscented_predict(&polar, &noise, lambda, &"road".into(), to_cartesian)?;
    println!("mean       = ({:.4}, {:.4})", out.mean[0], out.mean[1]);
    println!("covariance = {:.4}", out.covariance);
    Ok(())
}
