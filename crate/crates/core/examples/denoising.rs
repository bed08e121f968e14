//! Project a noisy signal onto the range of the generator.

use std::sync::Arc;

use genprior::solvers::{self, InstanceParams, Noise};
use genprior::{GenerativeNet, InstanceKind, SolverConfig};

fn main() -> genprior::Result<()> {
    let net = Arc::new(GenerativeNet::sample_gaussian(&[4, 100, 400], 5)?);
    for sigma in [0.0, 0.01, 0.05] {
        let params = InstanceParams::new(InstanceKind::Denoising, 9).noise(Noise::Gaussian { sigma });
        let inst = solvers::make_instance(net.clone(), &params)?;
        let trace = solvers::solve(&inst, &SolverConfig::default())?;
        let noise_rel = inst.eta.as_ref().map_or(0.0, |e| e.norm()) / inst.y_star.norm();
        println!("sigma {sigma}: relative noise {noise_rel:.3e}, relative error {:.3e}", trace.final_relative_signal_err);
    }
    Ok(())
}
