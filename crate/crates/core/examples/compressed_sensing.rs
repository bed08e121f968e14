//! Recover a signal from noisy random Gaussian measurements.

use std::sync::Arc;

use genprior::solvers::{self, InstanceParams, Noise};
use genprior::{GenerativeNet, InstanceKind, SolverConfig};

fn main() -> genprior::Result<()> {
    let net = Arc::new(GenerativeNet::sample_gaussian(&[8, 250, 600], 1)?);
    let params = InstanceParams::new(InstanceKind::CompressedSensing, 2)
        .measurements(150)
        .noise(Noise::Gaussian { sigma: 0.01 });
    let inst = solvers::make_instance(net, &params)?;
    let trace = solvers::solve(&inst, &SolverConfig::default())?;
    println!(
        "iterations {}, negations {}, relative signal error {:.3e}",
        trace.iterations, trace.negations.len(), trace.final_relative_signal_err
    );
    Ok(())
}
