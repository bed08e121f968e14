//! Sampled estimates of the weight distribution conditions and the RRIC.

use genprior::conditions;
use genprior::{rng, GenerativeNet};

fn main() -> genprior::Result<()> {
    let net = GenerativeNet::sample_gaussian(&[4, 200, 400], 1)?;
    for i in 1..=net.depth() {
        let wdc = conditions::wdc_deviation(net.layer(i), 200, 1)?.at_layer(i);
        let r2 = conditions::r2wdc_deviation(&net, i, 200, 1)?;
        println!("layer {i}: WDC eps {:.4}, R2WDC eps {:.4}", wdc.epsilon_hat().unwrap(), r2.epsilon_hat().unwrap());
    }
    for m in [50, 200, 800] {
        let a = rng::gaussian_matrix(&mut rng::stream_rng(5, m as u64), m, 400, (1.0 / m as f64).sqrt());
        let rric = conditions::rric_deviation(&a, &net, 100, 2)?;
        println!("RRIC m={m}: median deviation {:.4}", rric.get("median_deviation", 0).unwrap());
    }
    println!("log Psi per layer: {:?}", conditions::log_psi(net.dims())?);
    Ok(())
}
