//! Recover a signal from magnitudes of Gaussian measurements.

use std::sync::Arc;

use genprior::solvers::{self, InstanceParams};
use genprior::{GenerativeNet, InstanceKind, SolverConfig};

fn main() -> genprior::Result<()> {
    let net = Arc::new(GenerativeNet::sample_gaussian(&[4, 120, 300], 3)?);
    let inst = solvers::make_instance(net, &InstanceParams::new(InstanceKind::PhaseRetrieval, 1).measurements(200))?;
    let cfg = SolverConfig { iterate_stride: 500, ..Default::default() };
    let trace = solvers::solve(&inst, &cfg)?;
    for r in trace.records.iter().step_by(500) {
        println!("iter {:5}  f {:.4e}  signal err {:.4e}", r.iter, r.f, r.signal_err);
    }
    println!("final relative error {:.3e}", trace.final_relative_signal_err);
    Ok(())
}
