//! Sample a Gaussian generator, save it, and evaluate it at a latent code.

use genprior::{rng, GenerativeNet};

fn main() -> genprior::Result<()> {
    let net = GenerativeNet::sample_gaussian(&[4, 60, 200], 1)?;
    let path = std::env::temp_dir().join("genprior_example_net.bin");
    net.save(&path)?;
    let loaded = GenerativeNet::load(&path)?;
    assert_eq!(loaded.weights(), net.weights());

    let x = rng::gaussian_vector(&mut rng::stream_rng(2, 0), 4);
    let eval = net.evaluate(&x)?;
    for (i, mask) in eval.masks.iter().enumerate() {
        let active = mask.iter().filter(|&&a| a).count();
        println!("layer {}: {active}/{} units active", i + 1, mask.len());
    }
    let path_map = net.linear_path(&x)?;
    let from_lambda = path_map.lambda_full() * &x;
    println!("|G(x)| = {:.6}, |Lambda_x x - G(x)| = {:.2e}", eval.output().norm(), (from_lambda - eval.output()).norm());
    println!("saved to {}", path.display());
    Ok(())
}
