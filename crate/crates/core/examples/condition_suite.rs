//! Run every condition check on one network and write the CSV report.

use genprior::harness::{self, NetSpec, SuiteConfig};

fn main() -> genprior::Result<()> {
    let spec: NetSpec = "4,150,300".parse()?;
    let cfg = SuiteConfig { samples: 50, pairs: 50, ..Default::default() };
    let suite = harness::run_condition_suite(&spec, &cfg)?;
    for r in &suite.reports {
        let bad = r.violations().len();
        println!("{:?}: {} statistics, {bad} outside target", r.kind, r.stats.len());
    }
    suite.write_csv(std::io::stdout().lock())?;
    Ok(())
}
