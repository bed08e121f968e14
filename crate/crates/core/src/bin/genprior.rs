use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use genprior::conditions::{self, ConditionKind, ConditionReport, Statistic};
use genprior::harness::{self, Config, ExperimentSpec, NetSpec, NoiseForm, SuiteConfig};
use genprior::rng::{self, InstanceStream};
use genprior::solvers::{self, Init, InstanceParams};
use genprior::{Error, GenerativeNet, Instance, InstanceKind, Result, SolverConfig};
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "genprior", version, about = "Recovery with deep ReLU generative priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all logical cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Layer widths `k,n_1,...,n_d`, or `recipe:k,d[,c_bar[,alpha_floor]]`.
    #[arg(long, conflicts_with = "net")]
    dims: Option<NetSpec>,
    /// Network file written by `gen-net`.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Seed of the network weights; defaults to --seed.
    #[arg(long)]
    net_seed: Option<u64>,
}

impl NetArgs {
    fn build(&self, seed: u64) -> Result<GenerativeNet> {
        match (&self.net, &self.dims) {
            (Some(path), _) => GenerativeNet::load(path),
            (None, Some(spec)) => GenerativeNet::sample_gaussian(&spec.resolve()?.0, self.net_seed.unwrap_or(seed)),
            (None, None) => Err(Error::Validation("pass --dims or --net".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian network and write it in binary form.
    GenNet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dims: NetSpec,
    },
    /// Build or load an instance, run the solver and emit the trace CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value = "cs")]
        kind: InstanceKind,
        /// Load this instance instead of synthesising one.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        save_instance: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value = "zero")]
        noise: NoiseForm,
        #[arg(long, default_value_t = 0.0)]
        noise_level: f64,
        #[arg(long)]
        spike_samples: Option<usize>,
        #[arg(long, default_value_t = 0.2)]
        step_scale: f64,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-12)]
        rel_step_tol: f64,
        /// Start from `-x*` instead of a random unit vector.
        #[arg(long)]
        init_negated: bool,
    },
    /// Sampled weight distribution constant of each layer.
    CheckWdc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Single layer (1-based); all layers when absent.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Sampled range-restricted distribution constant of each layer.
    CheckR2wdc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Sampled restricted isometry of a Gaussian `A` on the range of G.
    CheckRric {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Exact activation-pattern count of a Gaussian layer on a subspace.
    CheckPatterns {
        #[command(flatten)]
        common: Common,
        /// Rows of W.
        #[arg(long)]
        rows: usize,
        /// Subspace dimension (2 or 3).
        #[arg(long, default_value_t = 2)]
        ell: usize,
        /// Columns of W; defaults to ell.
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Full condition suite on one network.
    Conditions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dims: Option<NetSpec>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        eps_ref: Option<f64>,
        #[arg(long)]
        near_radius: Option<f64>,
        #[arg(long)]
        net_seed: Option<u64>,
    },
    /// Seeded sweep described by a config file.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Summary CSV path; defaults next to the long-form output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Widths of the contractive example and their checks.
    Recipe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 2.0)]
        c_bar: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha_floor: f64,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_reports(common: &Common, reports: &[ConditionReport]) -> Result<()> {
    let mut out = output(common.out.as_deref())?;
    conditions::write_condition_csv(reports, &mut out)?;
    out.flush()?;
    Ok(())
}

fn layers(net: &GenerativeNet, layer: Option<usize>) -> Result<Vec<usize>> {
    match layer {
        Some(i) if i == 0 || i > net.depth() => {
            Err(Error::Validation(format!("layer {i} is outside 1..={}", net.depth())))
        }
        Some(i) => Ok(vec![i]),
        None => Ok((1..=net.depth()).collect()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenNet { common, dims } => {
            let (dims, _) = dims.resolve()?;
            let net = GenerativeNet::sample_gaussian(&dims, common.seed())?;
            let mut out = output(common.out.as_deref())?;
            net.write_to(&mut out)?;
            out.flush()?;
        }
        Command::Solve {
            common,
            net,
            kind,
            instance,
            save_instance,
            m,
            noise,
            noise_level,
            spike_samples,
            step_scale,
            max_iters,
            rel_step_tol,
            init_negated,
        } => {
            let inst = match instance {
                Some(path) => Instance::load(&path)?,
                None => {
                    let g = Arc::new(net.build(common.seed())?);
                    let mut params = InstanceParams::new(kind, common.seed()).noise(noise.with_level(noise_level));
                    params.measurements = m;
                    params.spike_samples = spike_samples;
                    solvers::make_instance(g, &params)?
                }
            };
            if let Some(path) = save_instance {
                inst.save(&path)?;
            }
            let init = if init_negated { Init::Provided(-&inst.x_star) } else { Init::GaussianUnit };
            let config = SolverConfig { step_scale, max_iters, rel_step_tol, init, seed: common.seed(), iterate_stride: 0 };
            let trace = harness::with_jobs(common.jobs, || solvers::solve(&inst, &config))??;
            let mut out = output(common.out.as_deref())?;
            trace.write_csv(&mut out)?;
            out.flush()?;
            eprintln!(
                "iterations {}  negations {}  relative signal error {:.3e}",
                trace.iterations,
                trace.negations.len(),
                trace.final_relative_signal_err
            );
        }
        Command::CheckWdc { common, net, samples, layer } => {
            let net = net.build(common.seed())?;
            let reports = harness::with_jobs(common.jobs, || {
                layers(&net, layer)?
                    .into_iter()
                    .map(|i| Ok(conditions::wdc_deviation(net.layer(i), samples, common.seed())?.at_layer(i)))
                    .collect::<Result<Vec<_>>>()
            })??;
            emit_reports(&common, &reports)?;
        }
        Command::CheckR2wdc { common, net, samples, layer } => {
            let net = net.build(common.seed())?;
            let reports = harness::with_jobs(common.jobs, || {
                layers(&net, layer)?
                    .into_iter()
                    .map(|i| conditions::r2wdc_deviation(&net, i, samples, common.seed()))
                    .collect::<Result<Vec<_>>>()
            })??;
            emit_reports(&common, &reports)?;
        }
        Command::CheckRric { common, net, m, samples } => {
            if m == 0 {
                return Err(Error::Validation("m must be positive".into()));
            }
            let net = net.build(common.seed())?;
            let a = rng::gaussian_matrix(
                &mut InstanceStream::Measurement.rng(common.seed()),
                m,
                net.output_dim(),
                (1.0 / m as f64).sqrt(),
            );
            let report =
                harness::with_jobs(common.jobs, || conditions::rric_deviation(&a, &net, samples, common.seed()))??;
            emit_reports(&common, &[report])?;
        }
        Command::CheckPatterns { common, rows, ell, cols } => {
            let n = cols.unwrap_or(ell);
            if n < ell || rows == 0 {
                return Err(Error::Validation("need rows >= 1 and cols >= ell".into()));
            }
            let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(common.seed());
            let w = rng::gaussian_matrix(&mut g, rows, n, 1.0);
            let basis = rng::gaussian_matrix(&mut g, n, ell, 1.0);
            let count = conditions::pattern_count_exact(&w, &basis)?;
            let mut report = ConditionReport::new(ConditionKind::PatternCount, common.seed(), 1);
            report.push(Statistic::at_most(1, "count", count.count as f64, count.bound));
            report.push(Statistic::new(1, "generic_central", conditions::generic_central_chambers(rows, ell) as f64));
            report.push(Statistic::new(1, "log_bound", count.log_bound));
            emit_reports(&common, &[report])?;
        }
        Command::Conditions { common, dims, samples, pairs, eps_ref, near_radius, net_seed } => {
            let (spec, mut suite, cfg_out) = match &common.config {
                Some(path) => SuiteConfig::from_config(&Config::load(path)?)?,
                None => (
                    dims.clone().ok_or_else(|| Error::Validation("pass --dims or --config".into()))?,
                    SuiteConfig::default(),
                    None,
                ),
            };
            let spec = dims.unwrap_or(spec);
            suite.seed = common.seed.unwrap_or(suite.seed);
            suite.net_seed = net_seed.or(common.seed).unwrap_or(suite.net_seed);
            suite.samples = samples.unwrap_or(suite.samples);
            suite.pairs = pairs.unwrap_or(suite.pairs);
            suite.eps_ref = eps_ref.unwrap_or(suite.eps_ref);
            suite.near_radius = near_radius.unwrap_or(suite.near_radius);
            let result = harness::with_jobs(common.jobs, || harness::run_condition_suite(&spec, &suite))??;
            let mut out = output(common.out.as_deref().or(cfg_out.as_deref()))?;
            result.write_csv(&mut out)?;
            out.flush()?;
        }
        Command::Experiment { common, summary } => {
            let path = common.config.as_ref().ok_or_else(|| Error::Validation("experiment needs --config".into()))?;
            let mut spec = ExperimentSpec::from_file(path)?;
            if let Some(out) = &common.out {
                spec.summary_output = Some(harness::default_summary_path(out));
                spec.output = Some(out.clone());
            }
            if let Some(s) = summary {
                spec.summary_output = Some(s);
            }
            let to_stdout = spec.output.is_none();
            let result = harness::run_experiment(&spec, common.jobs)?;
            if to_stdout {
                let mut out = output(None)?;
                harness::write_rows_csv(&result.rows, &mut out)?;
                out.flush()?;
            }
            let failed: usize = result.summary.iter().map(|r| r.failed).sum();
            eprintln!("{}: {} cells, {failed} failed", spec.name, result.rows.len());
            if let Some(slope) = harness::loglog_slope(&result.summary) {
                eprintln!("log-log slope of median signal error: {slope:.4}");
            }
        }
        Command::Recipe { common, k, d, c_bar, alpha_floor } => {
            let recipe = genprior::net::contractive_example_dims(k, d, c_bar, alpha_floor)?;
            let dims: Vec<String> = recipe.dims.iter().map(ToString::to_string).collect();
            eprintln!("dims {}", dims.join(","));
            emit_reports(&common, &[harness::recipe_report(&recipe)])?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
