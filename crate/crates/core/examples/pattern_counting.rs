//! Count activation patterns of a layer on a low-dimensional subspace.

use genprior::conditions;
use genprior::rng;
use nalgebra::DMatrix;

fn main() -> genprior::Result<()> {
    let mut g = rng::stream_rng(11, 0);
    let basis = rng::gaussian_matrix(&mut g, 10, 3, 1.0);
    for m in [4, 8, 12, 16, 20] {
        let w: DMatrix<f64> = rng::gaussian_matrix(&mut g, m, 10, 1.0);
        let pc = conditions::pattern_count_exact(&w, &basis)?;
        println!(
            "m={m:3}: {} patterns, generic {}, upper bound {}",
            pc.count,
            conditions::generic_central_chambers(m, 3),
            pc.bound
        );
    }
    Ok(())
}
