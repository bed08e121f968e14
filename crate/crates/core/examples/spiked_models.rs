//! Estimate a generated spike from Wishart and Wigner observations, up to sign.

use std::sync::Arc;

use genprior::solvers::{self, InstanceParams, Noise};
use genprior::{GenerativeNet, InstanceKind, SolverConfig};

fn main() -> genprior::Result<()> {
    let net = Arc::new(GenerativeNet::sample_gaussian(&[6, 150, 300], 4)?);
    for kind in [InstanceKind::SpikedWishart, InstanceKind::SpikedWigner] {
        let params = InstanceParams::new(kind, 1).spike_samples(2000).noise(Noise::Gaussian { sigma: 0.01 });
        let inst = solvers::make_instance(net.clone(), &params)?;
        let trace = solvers::solve(&inst, &SolverConfig::default())?;
        let g = inst.net.output(&trace.final_x)?;
        let cos = g.dot(&inst.y_star).abs() / (g.norm() * inst.y_star.norm());
        println!("{kind}: |cos| = {cos:.6}, relative error {:.3e}", trace.final_relative_signal_err);
    }
    Ok(())
}
