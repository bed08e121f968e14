//! The angle map g, the distortion matrix Q and the predicted direction h.

use std::f64::consts::PI;

use genprior::{geometry, linalg, rng};

fn main() -> genprior::Result<()> {
    for t in [PI, PI / 2.0, PI / 4.0, 0.1] {
        println!("g({t:.4}) = {:.6}", geometry::g_theta(t));
    }

    let mut g = rng::stream_rng(3, 0);
    let r = rng::gaussian_vector(&mut g, 5);
    let s = rng::gaussian_vector(&mut g, 5);
    let q = geometry::q_matrix(&r, &s)?;
    println!("angle {:.4}, |Q_(r,s)| = {:.6}", q.theta, linalg::symmetric_spectral_norm(&q.q));

    let x = rng::gaussian_vector(&mut g, 5);
    let y = rng::gaussian_vector(&mut g, 5);
    let profile = geometry::angle_profile(&x, &y, 4)?;
    println!("angles through depth 4: {:?}", profile.theta_bar.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>());
    println!("|h| = {:.6}", profile.h_tilde.norm());
    println!("Q Lipschitz constant = {:.6}", geometry::q_lipschitz_constant());
    Ok(())
}
