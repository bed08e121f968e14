//! Sweep the measurement count at a fixed noise norm and fit the error decay.

use genprior::harness::{self, Config, ExperimentSpec};

const CONFIG: &str = "
[experiment]
name = noise_scaling
kind = cs
seeds = 0..5

[net]
dims = 4, 100, 300
seed = 7

[sweep]
axis = m
values = 50, 100, 200, 400

[instance]
noise = fixed_norm
noise_level = 0.1

[solver]
max_iters = 2000
";

fn main() -> genprior::Result<()> {
    let cfg: Config = CONFIG.parse()?;
    let spec = ExperimentSpec::from_config(&cfg)?;
    let result = harness::run_experiment(&spec, 0)?;
    for s in &result.summary {
        println!("m={:4}: median relative error {:.3e} ({} ok)", s.sweep_value, s.median_signal_err.unwrap_or(f64::NAN), s.ok);
    }
    if let Some(slope) = harness::loglog_slope(&result.summary) {
        println!("log-log slope {slope:.3}");
    }
    Ok(())
}
