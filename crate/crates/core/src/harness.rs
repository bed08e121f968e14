//! Configuration files, seeded experiment sweeps and the condition suite.
//!
//! # Config grammar
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! comment := ('#' | ';') any*
//! section := '[' name ']'
//! entry   := key '=' value
//! ```
//!
//! Keys are unique within a section and values run to the end of the line
//! with surrounding whitespace trimmed. Lists are comma separated; integer
//! lists also accept a half-open range `a..b`.
//!
//! ```text
//! [experiment]
//! name  = noise_scaling
//! kind  = cs              # cs | pr | den | wishart | wigner
//! seeds = 0..20
//! output = results.csv    # summary goes to results_summary.csv
//!
//! [net]
//! dims = 8, 250, 600      # or k, d, c_bar, alpha_floor for the recipe
//! seed = 7                # omit to draw a fresh net per seed
//!
//! [sweep]
//! axis   = m              # m | sigma | width | depth
//! values = 100, 200, 400, 800
//!
//! [instance]
//! m           = 150
//! noise       = fixed_norm    # zero | gaussian | fixed_norm
//! noise_level = 0.1
//! spike_samples = 2000
//!
//! [solver]
//! step_scale   = 0.2
//! max_iters    = 5000
//! rel_step_tol = 1e-12
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{self, ConditionKind, ConditionReport, Sense, Statistic};
use crate::error::{Error, Result};
use crate::linalg;
use crate::net::{self, DimsRecipe, GenerativeNet};
use crate::rng;
use crate::solvers::{self, InstanceKind, InstanceParams, Noise, SolverConfig};

/// Parsed `[section]` / `key = value` text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: &str| Error::validation(format!("config line {}: {msg}", no + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| at("unterminated section header"))?.trim();
                if name.is_empty() {
                    return Err(at("empty section name"));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| at("expected 'key = value'"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(at("empty key"));
            }
            let entries = sections.entry(current.clone()).or_default();
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(at(&format!("duplicate key '{key}'")));
            }
        }
        Ok(Config { sections })
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)?.parse()
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.get(section, key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::validation(format!("[{section}] {key}: cannot parse '{v}'")))
            })
            .transpose()
    }

    fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.parse_value(section, key)?
            .ok_or_else(|| Error::validation(format!("[{section}] {key} is required")))
    }

    /// Rejects keys outside `allowed` for each listed section and any
    /// section not listed.
    pub fn check_keys(&self, allowed: &[(&str, &[&str])]) -> Result<()> {
        for (section, entries) in &self.sections {
            let keys = allowed
                .iter()
                .find(|(s, _)| s == section)
                .map(|(_, k)| *k)
                .ok_or_else(|| Error::validation(format!("unknown config section [{section}]")))?;
            if let Some(bad) = entries.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(Error::validation(format!("unknown key '{bad}' in [{section}]")));
            }
        }
        Ok(())
    }
}

/// Comma separated values.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::validation(format!("cannot parse list item '{s}'"))))
        .collect()
}

/// Comma separated integers, or a half-open range `a..b`.
pub fn parse_u64_list(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let parse = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::validation(format!("bad range bound '{s}'")))
        };
        return Ok((parse(a)?..parse(b)?).collect());
    }
    parse_list(text)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetSpec {
    Dims(Vec<usize>),
    Recipe { k: usize, d: usize, c_bar: f64, alpha_floor: f64 },
}

impl NetSpec {
    pub fn resolve(&self) -> Result<(Vec<usize>, Option<DimsRecipe>)> {
        match self {
            NetSpec::Dims(dims) => {
                net::validate_dims(dims)?;
                Ok((dims.clone(), None))
            }
            &NetSpec::Recipe { k, d, c_bar, alpha_floor } => {
                let recipe = net::contractive_example_dims(k, d, c_bar, alpha_floor)?;
                Ok((recipe.dims.clone(), Some(recipe)))
            }
        }
    }

    fn latent_dim(&self) -> usize {
        match self {
            NetSpec::Dims(dims) => dims.first().copied().unwrap_or(0),
            NetSpec::Recipe { k, .. } => *k,
        }
    }

    fn from_config(cfg: &Config) -> Result<Self> {
        if let Some(dims) = cfg.get("net", "dims") {
            return Ok(NetSpec::Dims(parse_list(dims)?));
        }
        Ok(NetSpec::Recipe {
            k: cfg.require("net", "k")?,
            d: cfg.require("net", "d")?,
            c_bar: cfg.parse_value("net", "c_bar")?.unwrap_or(2.0),
            alpha_floor: cfg.parse_value("net", "alpha_floor")?.unwrap_or(1.0),
        })
    }
}

impl FromStr for NetSpec {
    type Err = Error;

    /// `8,250,600` for explicit widths, `recipe:k,d[,c_bar[,alpha_floor]]`
    /// for the contractive example.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("recipe:") {
            Some(rest) => {
                let v: Vec<f64> = parse_list(rest)?;
                if v.len() < 2 || v.len() > 4 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                    return Err(Error::validation("recipe spec is recipe:k,d[,c_bar[,alpha_floor]]"));
                }
                Ok(NetSpec::Recipe {
                    k: v[0] as usize,
                    d: v[1] as usize,
                    c_bar: v.get(2).copied().unwrap_or(2.0),
                    alpha_floor: v.get(3).copied().unwrap_or(1.0),
                })
            }
            None => Ok(NetSpec::Dims(parse_list(s)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Number of measurements.
    M,
    /// Noise level (σ, or `‖η‖` for fixed-norm noise).
    Sigma,
    /// Every layer width; needs explicit dims.
    Width,
    /// Network depth; explicit dims repeat their last width.
    Depth,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(SweepAxis::M),
            "sigma" => Ok(SweepAxis::Sigma),
            "width" => Ok(SweepAxis::Width),
            "depth" => Ok(SweepAxis::Depth),
            other => Err(Error::validation(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseForm {
    Zero,
    Gaussian,
    FixedNorm,
}

impl FromStr for NoiseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "none" => Ok(NoiseForm::Zero),
            "gaussian" => Ok(NoiseForm::Gaussian),
            "fixed_norm" => Ok(NoiseForm::FixedNorm),
            other => Err(Error::validation(format!("unknown noise form '{other}'"))),
        }
    }
}

impl NoiseForm {
    pub fn with_level(self, level: f64) -> Noise {
        match self {
            NoiseForm::Zero => Noise::Zero,
            NoiseForm::Gaussian => Noise::Gaussian { sigma: level },
            NoiseForm::FixedNorm => Noise::FixedNorm { norm: level },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: InstanceKind,
    pub net: NetSpec,
    /// Shared network seed; each cell uses its own seed when absent.
    pub net_seed: Option<u64>,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub measurements: Option<usize>,
    pub noise: NoiseForm,
    pub noise_level: f64,
    pub spike_samples: Option<usize>,
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
    pub summary_output: Option<PathBuf>,
}

const EXPERIMENT_KEYS: &[(&str, &[&str])] = &[
    ("experiment", &["name", "kind", "seeds", "output", "summary"]),
    ("net", &["dims", "k", "d", "c_bar", "alpha_floor", "seed"]),
    ("sweep", &["axis", "values"]),
    ("instance", &["m", "noise", "noise_level", "spike_samples"]),
    ("solver", &["step_scale", "max_iters", "rel_step_tol"]),
];

/// Settings of one `(sweep value, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSetup {
    pub dims: Vec<usize>,
    pub measurements: Option<usize>,
    pub noise: Noise,
}

fn integer_value(axis: &str, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(Error::validation(format!("{axis} sweep values must be positive integers, got {v}")));
    }
    Ok(v as usize)
}

impl ExperimentSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.check_keys(EXPERIMENT_KEYS)?;
        let defaults = SolverConfig::default();
        let solver = SolverConfig {
            step_scale: cfg.parse_value("solver", "step_scale")?.unwrap_or(defaults.step_scale),
            max_iters: cfg.parse_value("solver", "max_iters")?.unwrap_or(defaults.max_iters),
            rel_step_tol: cfg.parse_value("solver", "rel_step_tol")?.unwrap_or(defaults.rel_step_tol),
            ..defaults
        };
        let output: Option<PathBuf> = cfg.get("experiment", "output").map(PathBuf::from);
        let summary_output = cfg
            .get("experiment", "summary")
            .map(PathBuf::from)
            .or_else(|| output.as_deref().map(default_summary_path));
        let spec = ExperimentSpec {
            name: cfg.get("experiment", "name").unwrap_or("experiment").to_string(),
            kind: cfg.require("experiment", "kind")?,
            net: NetSpec::from_config(cfg)?,
            net_seed: cfg.parse_value("net", "seed")?,
            axis: cfg.require("sweep", "axis")?,
            values: parse_list(cfg.get("sweep", "values").unwrap_or(""))?,
            seeds: parse_u64_list(cfg.get("experiment", "seeds").unwrap_or(""))?,
            measurements: cfg.parse_value("instance", "m")?,
            noise: cfg.parse_value("instance", "noise")?.unwrap_or(NoiseForm::Zero),
            noise_level: cfg.parse_value("instance", "noise_level")?.unwrap_or(0.0),
            spike_samples: cfg.parse_value("instance", "spike_samples")?,
            solver,
            output,
            summary_output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_config(&Config::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::validation("sweep needs at least one value"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("experiment needs at least one seed"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::validation("noise_level must be non-negative"));
        }
        for &v in &self.values {
            self.cell_setup(v)?;
        }
        Ok(())
    }

    pub fn cell_setup(&self, value: f64) -> Result<CellSetup> {
        let mut measurements = self.measurements;
        let mut level = self.noise_level;
        let (base, _) = match (&self.net, self.axis) {
            (NetSpec::Recipe { k, c_bar, alpha_floor, .. }, SweepAxis::Depth) => NetSpec::Recipe {
                k: *k,
                d: integer_value("depth", value)?,
                c_bar: *c_bar,
                alpha_floor: *alpha_floor,
            }
            .resolve()?,
            _ => self.net.resolve()?,
        };
        let dims = match self.axis {
            SweepAxis::M => {
                measurements = Some(integer_value("m", value)?);
                base
            }
            SweepAxis::Sigma => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::validation(format!("sigma sweep value {value} must be non-negative")));
                }
                level = value;
                base
            }
            SweepAxis::Width => {
                if matches!(self.net, NetSpec::Recipe { .. }) {
                    return Err(Error::validation("width sweeps need explicit dims"));
                }
                let w = integer_value("width", value)?;
                let mut dims = vec![self.net.latent_dim()];
                dims.extend(std::iter::repeat_n(w, base.len() - 1));
                dims
            }
            SweepAxis::Depth => match self.net {
                NetSpec::Recipe { .. } => base,
                NetSpec::Dims(_) => {
                    let d = integer_value("depth", value)?;
                    let mut dims = base.clone();
                    let last = *dims.last().expect("validated dims");
                    dims.resize(d + 1, last);
                    dims
                }
            },
        };
        net::validate_dims(&dims)?;
        if dims.len() < 3 {
            return Err(Error::validation("solver experiments need depth at least 2"));
        }
        if self.kind.uses_measurements() && measurements.is_none() {
            return Err(Error::validation("this instance kind needs [instance] m or an m sweep"));
        }
        if self.kind == InstanceKind::SpikedWishart && self.spike_samples.is_none() {
            return Err(Error::validation("Wishart experiments need [instance] spike_samples"));
        }
        if self.kind.is_spiked() && self.noise == NoiseForm::FixedNorm {
            return Err(Error::validation("spiked models take zero or gaussian noise"));
        }
        Ok(CellSetup { dims, measurements, noise: self.noise.with_level(level) })
    }
}

/// `results.csv` -> `results_summary.csv`.
pub fn default_summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    output.with_file_name(format!("{stem}_summary.csv"))
}

/// One `(sweep value, seed)` cell. Errors are relative: signal error over
/// `‖y*‖` and latent error over `‖x*‖`, both up to sign for spiked models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub sweep_value: f64,
    pub seed: u64,
    pub final_signal_err: Option<f64>,
    pub final_latent_err: Option<f64>,
    pub iters: Option<usize>,
    pub negations: Option<usize>,
    /// `ok`, `diverged` or `failed`.
    pub status: String,
    pub message: String,
}

impl ExperimentRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub ok: usize,
    pub failed: usize,
    pub median_signal_err: Option<f64>,
    pub q1_signal_err: Option<f64>,
    pub q3_signal_err: Option<f64>,
    pub median_latent_err: Option<f64>,
    pub median_iters: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    /// Fraction of all cells at this sweep value with signal error
    /// at most `tol`. Failed cells count as misses.
    pub fn success_rate(&self, sweep_value: f64, tol: f64) -> f64 {
        let cells: Vec<_> = self.rows.iter().filter(|r| r.sweep_value == sweep_value).collect();
        if cells.is_empty() {
            return 0.0;
        }
        let hits = cells.iter().filter(|r| r.final_signal_err.is_some_and(|e| e <= tol)).count();
        hits as f64 / cells.len() as f64
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when 0.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::validation(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn run_cell(spec: &ExperimentSpec, value: f64, seed: u64) -> ExperimentRow {
    let mut row = ExperimentRow {
        sweep_value: value,
        seed,
        final_signal_err: None,
        final_latent_err: None,
        iters: None,
        negations: None,
        status: "failed".into(),
        message: String::new(),
    };
    let outcome = (|| -> Result<solvers::SolveTrace> {
        let setup = spec.cell_setup(value)?;
        let net = Arc::new(GenerativeNet::sample_gaussian(&setup.dims, spec.net_seed.unwrap_or(seed))?);
        let mut params = InstanceParams::new(spec.kind, seed).noise(setup.noise);
        params.measurements = setup.measurements;
        params.spike_samples = spec.spike_samples;
        let instance = solvers::make_instance(net, &params)?;
        let config = SolverConfig { seed, ..spec.solver.clone() };
        let trace = solvers::solve(&instance, &config)?;
        row.final_latent_err = Some(trace.final_latent_err / instance.x_star.norm());
        Ok(trace)
    })();
    match outcome {
        Ok(trace) => {
            row.final_signal_err = Some(trace.final_relative_signal_err);
            row.iters = Some(trace.iterations);
            row.negations = Some(trace.negations.len());
            row.status = "ok".into();
        }
        Err(e) => {
            if matches!(e, Error::Divergence { .. }) {
                row.status = "diverged".into();
            }
            row.message = e.to_string();
        }
    }
    row
}

pub fn summarize_rows(values: &[f64], rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    values
        .iter()
        .map(|&v| {
            let cells: Vec<_> = rows.iter().filter(|r| r.sweep_value == v).collect();
            let ok: Vec<_> = cells.iter().filter(|r| r.is_ok()).collect();
            let mut sig: Vec<f64> = ok.iter().filter_map(|r| r.final_signal_err).collect();
            let mut lat: Vec<f64> = ok.iter().filter_map(|r| r.final_latent_err).collect();
            let mut its: Vec<f64> = ok.iter().filter_map(|r| r.iters.map(|i| i as f64)).collect();
            SummaryRow {
                sweep_value: v,
                ok: ok.len(),
                failed: cells.len() - ok.len(),
                median_signal_err: linalg::median(&mut sig),
                q1_signal_err: linalg::quantile(&mut sig, 0.25),
                q3_signal_err: linalg::quantile(&mut sig, 0.75),
                median_latent_err: linalg::median(&mut lat),
                median_iters: linalg::median(&mut its),
            }
        })
        .collect()
}

/// Runs every cell, in parallel on `jobs` threads, and writes the long-form
/// and summary CSVs when the experiment names an output. Rows are ordered by
/// sweep value then seed as listed in the spec.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentResult> {
    spec.validate()?;
    let cells: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows: Vec<ExperimentRow> =
        with_jobs(jobs, || cells.par_iter().map(|&(v, s)| run_cell(spec, v, s)).collect())?;
    let summary = summarize_rows(&spec.values, &rows);
    let result = ExperimentResult { rows, summary };
    if let Some(path) = &spec.output {
        write_rows_csv(&result.rows, fs::File::create(path)?)?;
    }
    if let Some(path) = &spec.summary_output {
        write_summary_csv(&result.summary, fs::File::create(path)?)?;
    }
    Ok(result)
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    write_csv(rows, out)
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<ExperimentRow>> {
    read_csv(input)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    write_csv(rows, out)
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    read_csv(input)
}

/// Least-squares slope of `log median_signal_err` against `log sweep_value`
/// over rows that have a positive median.
pub fn loglog_slope(summary: &[SummaryRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = summary
        .iter()
        .filter_map(|r| match r.median_signal_err {
            Some(e) if e > 0.0 && r.sweep_value > 0.0 => Some((r.sweep_value.ln(), e.ln())),
            _ => None,
        })
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    /// Draws per sampled estimator (WDC, R2WDC).
    pub samples: usize,
    /// Random point pairs for the local checks.
    pub pairs: usize,
    pub seed: u64,
    pub net_seed: u64,
    /// Condition constant defining the bands.
    pub eps_ref: f64,
    /// Near pairs satisfy `‖x - y‖ <= near_radius ‖y‖`.
    pub near_radius: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { samples: 100, pairs: 100, seed: 0, net_seed: 0, eps_ref: 0.2, near_radius: 0.1 }
    }
}

const SUITE_KEYS: &[(&str, &[&str])] = &[
    ("net", &["dims", "k", "d", "c_bar", "alpha_floor", "seed"]),
    ("conditions", &["samples", "pairs", "seed", "eps_ref", "near_radius", "output"]),
];

impl SuiteConfig {
    /// Reads `[net]` and `[conditions]`; returns the net spec, the suite
    /// settings and the optional output path.
    pub fn from_config(cfg: &Config) -> Result<(NetSpec, SuiteConfig, Option<PathBuf>)> {
        cfg.check_keys(SUITE_KEYS)?;
        let d = SuiteConfig::default();
        let suite = SuiteConfig {
            samples: cfg.parse_value("conditions", "samples")?.unwrap_or(d.samples),
            pairs: cfg.parse_value("conditions", "pairs")?.unwrap_or(d.pairs),
            seed: cfg.parse_value("conditions", "seed")?.unwrap_or(d.seed),
            net_seed: cfg.parse_value("net", "seed")?.unwrap_or(d.net_seed),
            eps_ref: cfg.parse_value("conditions", "eps_ref")?.unwrap_or(d.eps_ref),
            near_radius: cfg.parse_value("conditions", "near_radius")?.unwrap_or(d.near_radius),
        };
        Ok((NetSpec::from_config(cfg)?, suite, cfg.get("conditions", "output").map(PathBuf::from)))
    }
}

#[derive(Debug, Clone)]
pub struct ConditionSuite {
    pub dims: Vec<usize>,
    pub reports: Vec<ConditionReport>,
    /// `log Ψ_i` for `i = 1..d`.
    pub log_psi: Vec<f64>,
    pub recipe: Option<DimsRecipe>,
}

impl ConditionSuite {
    pub fn report(&self, kind: ConditionKind) -> Option<&ConditionReport> {
        self.reports.iter().find(|r| r.kind == kind)
    }

    pub fn reports_of(&self, kind: ConditionKind) -> impl Iterator<Item = &ConditionReport> {
        self.reports.iter().filter(move |r| r.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        conditions::write_condition_csv(&self.reports, out)
    }
}

/// Pair streams sit above the per-sample streams of the estimators.
const PAIR_STREAM_BASE: u64 = 1 << 40;

/// Folds per-pair reports into one: for each `(layer, statistic)` the
/// worst value with respect to its sense.
pub fn aggregate_reports(kind: ConditionKind, seed: u64, reports: &[ConditionReport], skipped: usize) -> ConditionReport {
    let mut out = ConditionReport::new(kind, seed, reports.len() + skipped);
    out.skipped = skipped;
    for r in reports {
        for s in &r.stats {
            match out.stats.iter_mut().find(|o| o.layer == s.layer && o.name == s.name) {
                Some(o) => {
                    o.value = match o.sense {
                        Sense::AtLeast => o.value.min(s.value),
                        Sense::AtMost => o.value.max(s.value),
                    }
                }
                None => out.push(s.clone()),
            }
        }
    }
    out
}

fn near_point(rng: &mut rand_chacha::ChaCha8Rng, y: &DVector<f64>, radius: f64) -> DVector<f64> {
    use rand::Rng;
    let u = rng::unit_vector(rng, y.len());
    let t: f64 = rng.random_range(0.05..=1.0);
    y + u * (t * radius * y.norm())
}

/// Builds the net and runs every condition estimator on it.
pub fn run_condition_suite(spec: &NetSpec, cfg: &SuiteConfig) -> Result<ConditionSuite> {
    if cfg.samples == 0 || cfg.pairs == 0 {
        return Err(Error::validation("samples and pairs must be at least 1"));
    }
    if !(cfg.eps_ref > 0.0 && cfg.near_radius > 0.0) {
        return Err(Error::validation("eps_ref and near_radius must be positive"));
    }
    let (dims, recipe) = spec.resolve()?;
    let net = GenerativeNet::sample_gaussian(&dims, cfg.net_seed)?;
    let d = net.depth();
    let k = net.latent_dim();
    let mut reports = Vec::new();

    for i in 1..=d {
        reports.push(conditions::wdc_deviation(net.layer(i), cfg.samples, cfg.seed)?.at_layer(i));
    }
    for i in 1..=d {
        reports.push(conditions::r2wdc_deviation(&net, i, cfg.samples, cfg.seed)?);
    }

    struct PairOutcome {
        lambda: Option<ConditionReport>,
        norm: ConditionReport,
        lip: Vec<f64>,
        convexity: Option<f64>,
    }
    let outcomes: Vec<Result<PairOutcome>> = (0..cfg.pairs)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream_rng(cfg.seed, PAIR_STREAM_BASE + j as u64);
            let x = rng::gaussian_vector(&mut rng, k);
            let y = rng::gaussian_vector(&mut rng, k);
            let lambda = match conditions::lambda_concentration(&net, &x, &y, Some(cfg.eps_ref)) {
                Ok(r) => Some(r),
                Err(Error::Validation(_)) => None,
                Err(e) => return Err(e),
            };
            let norm = conditions::norm_angle_report(&net, &x, &y, cfg.eps_ref)?;
            let xn = near_point(&mut rng, &y, cfg.near_radius);
            let lip = conditions::lipschitz_check(&net, &xn, &y, cfg.eps_ref)?.ratios;
            let convexity = match conditions::convexity_direction_check(&net, &xn, &y, cfg.eps_ref) {
                Ok(c) => Some(c.residual),
                Err(Error::Validation(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(PairOutcome { lambda, norm, lip, convexity })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let lambdas: Vec<ConditionReport> = outcomes.iter().filter_map(|o| o.lambda.clone()).collect();
    let skipped = cfg.pairs - lambdas.len();
    reports.push(aggregate_reports(ConditionKind::LambdaConc, cfg.seed, &lambdas, skipped));
    let norms: Vec<ConditionReport> = outcomes.iter().map(|o| o.norm.clone()).collect();
    reports.push(aggregate_reports(ConditionKind::NormAngle, cfg.seed, &norms, 0));

    let mut lip = ConditionReport::new(ConditionKind::Lipschitz, cfg.seed, cfg.pairs);
    for i in 1..=d {
        let worst = outcomes.iter().map(|o| o.lip[i - 1]).fold(0.0, f64::max);
        lip.push(Statistic::at_most(i, "max_ratio", worst, 1.2));
    }
    reports.push(lip);

    let residuals: Vec<f64> = outcomes.iter().filter_map(|o| o.convexity).collect();
    let mut convex = ConditionReport::new(ConditionKind::Convexity, cfg.seed, cfg.pairs);
    convex.skipped = cfg.pairs - residuals.len();
    convex.push(Statistic::at_most(d, "max_residual", residuals.iter().copied().fold(0.0, f64::max), 1.0 / 16.0));
    reports.push(convex);

    let log_psi = conditions::log_psi(&dims)?;
    let mut psi = ConditionReport::new(ConditionKind::PatternCount, cfg.seed, 0);
    for (i, &v) in log_psi.iter().enumerate() {
        psi.push(Statistic::new(i + 1, "log_psi", v));
    }
    reports.push(psi);

    if let Some(recipe) = &recipe {
        reports.push(recipe_report(recipe));
    }
    Ok(ConditionSuite { dims, reports, log_psi, recipe })
}

/// Width checks of the contractive example as statistics.
pub fn recipe_report(recipe: &DimsRecipe) -> ConditionReport {
    let mut r = ConditionReport::new(ConditionKind::Recipe, 0, 0);
    for c in &recipe.checks {
        r.push(Statistic::at_least(c.layer, "width", c.width as f64, c.expansivity_rhs));
        r.push(Statistic::at_least(c.layer, "width_over_log", c.width_over_log, c.width_over_log_rhs));
    }
    r.push(Statistic::new(0, "alpha", recipe.alpha));
    r.push(Statistic::new(0, "contractive", if recipe.contractive { 1.0 } else { 0.0 }));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    const CS_CONFIG: &str = "
# small compressed sensing sweep
[experiment]
name = tiny
kind = cs
seeds = 0..2

[net]
dims = 4, 40, 80
seed = 3

[sweep]
axis = m
values = 30, 60

[instance]
noise = fixed_norm   ; constant noise energy
noise_level = 0.05

[solver]
max_iters = 300
";

    #[test]
    fn parses_sections_and_comments() {
        let cfg: Config = CS_CONFIG.parse().unwrap();
        assert_eq!(cfg.get("experiment", "kind"), Some("cs"));
        assert_eq!(cfg.get("instance", "noise"), Some("fixed_norm"));
        assert_eq!(cfg.get("net", "dims"), Some("4, 40, 80"));
        assert!(cfg.get("net", "k").is_none());
    }

    #[test]
    fn config_errors() {
        assert!("[a]\nx = 1\nx = 2".parse::<Config>().is_err());
        assert!("[a\nx = 1".parse::<Config>().is_err());
        assert!("[a]\njust text".parse::<Config>().is_err());
        let cfg: Config = "[experiment]\nbogus = 1".parse().unwrap();
        assert!(matches!(ExperimentSpec::from_config(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn spec_from_config() {
        let spec = ExperimentSpec::from_config(&CS_CONFIG.parse().unwrap()).unwrap();
        assert_eq!(spec.kind, InstanceKind::CompressedSensing);
        assert_eq!(spec.seeds, vec![0, 1]);
        assert_eq!(spec.values, vec![30.0, 60.0]);
        assert_eq!(spec.net, NetSpec::Dims(vec![4, 40, 80]));
        assert_eq!(spec.net_seed, Some(3));
        assert_eq!(spec.solver.max_iters, 300);
        assert_eq!(spec.solver.step_scale, 0.2);
    }

    #[test]
    fn empty_sweep_rejected() {
        let text = CS_CONFIG.replace("values = 30, 60", "values =");
        assert!(ExperimentSpec::from_config(&text.parse().unwrap()).is_err());
        let text = CS_CONFIG.replace("seeds = 0..2", "seeds = 3..3");
        assert!(ExperimentSpec::from_config(&text.parse().unwrap()).is_err());
    }

    #[test]
    fn sweep_axes_shape_cells() {
        let mut spec = ExperimentSpec::from_config(&CS_CONFIG.parse().unwrap()).unwrap();
        assert_eq!(spec.cell_setup(30.0).unwrap().measurements, Some(30));
        assert!(spec.cell_setup(30.5).is_err());
        spec.axis = SweepAxis::Width;
        spec.measurements = Some(20);
        assert_eq!(spec.cell_setup(50.0).unwrap().dims, vec![4, 50, 50]);
        spec.axis = SweepAxis::Depth;
        assert_eq!(spec.cell_setup(4.0).unwrap().dims, vec![4, 40, 80, 80, 80]);
        assert_eq!(spec.cell_setup(2.0).unwrap().dims, vec![4, 40, 80]);
        spec.axis = SweepAxis::Sigma;
        assert_eq!(spec.cell_setup(0.3).unwrap().noise, Noise::FixedNorm { norm: 0.3 });
        spec.net = NetSpec::Recipe { k: 2, d: 2, c_bar: 2.0, alpha_floor: 1.0 };
        spec.axis = SweepAxis::Depth;
        let recipe = net::contractive_example_dims(2, 3, 2.0, 1.0).unwrap();
        assert_eq!(spec.cell_setup(3.0).unwrap().dims, recipe.dims);
        spec.axis = SweepAxis::Width;
        assert!(spec.cell_setup(10.0).is_err());
    }

    #[test]
    fn single_cell_single_row() {
        let text = CS_CONFIG.replace("seeds = 0..2", "seeds = 5").replace("values = 30, 60", "values = 40");
        let spec = ExperimentSpec::from_config(&text.parse().unwrap()).unwrap();
        let result = run_experiment(&spec, 0).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.summary.len(), 1);
        assert_eq!(result.summary[0].ok + result.summary[0].failed, 1);
    }

    #[test]
    fn failed_cells_are_isolated() {
        let mut spec = ExperimentSpec::from_config(&CS_CONFIG.parse().unwrap()).unwrap();
        spec.solver.step_scale = 1e200;
        spec.values = vec![30.0];
        let result = run_experiment(&spec, 1).unwrap();
        assert!(result.rows.iter().all(|r| r.status == "diverged" && r.final_signal_err.is_none()));
        assert_eq!(result.summary[0].failed, 2);
        assert_eq!(result.summary[0].median_signal_err, None);
    }

    #[test]
    fn rows_and_summary_round_trip() {
        let spec = ExperimentSpec::from_config(&CS_CONFIG.parse().unwrap()).unwrap();
        let result = run_experiment(&spec, 1).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&result.rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf)
            .starts_with("sweep_value,seed,final_signal_err,final_latent_err,iters,negations,status,message\n"));
        assert_eq!(read_rows_csv(buf.as_slice()).unwrap(), result.rows);
        let mut buf = Vec::new();
        write_summary_csv(&result.summary, &mut buf).unwrap();
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), result.summary);
        for pair in result.rows.windows(2) {
            assert!((pair[0].sweep_value, pair[0].seed) < (pair[1].sweep_value, pair[1].seed));
        }
    }

    #[test]
    fn slope_of_power_law() {
        let rows: Vec<SummaryRow> = [100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&m: &f64| SummaryRow {
                sweep_value: m,
                ok: 1,
                failed: 0,
                median_signal_err: Some(3.0 * m.powf(-0.5)),
                q1_signal_err: None,
                q3_signal_err: None,
                median_latent_err: None,
                median_iters: None,
            })
            .collect();
        assert!((loglog_slope(&rows).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&rows[..1]), None);
    }

    #[test]
    fn u64_lists() {
        assert_eq!(parse_u64_list("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_u64_list("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_u64_list("a..3").is_err());
    }

    #[test]
    fn net_spec_strings() {
        assert_eq!("3,10,20".parse::<NetSpec>().unwrap(), NetSpec::Dims(vec![3, 10, 20]));
        assert_eq!(
            "recipe:4,3".parse::<NetSpec>().unwrap(),
            NetSpec::Recipe { k: 4, d: 3, c_bar: 2.0, alpha_floor: 1.0 }
        );
        assert!("recipe:4".parse::<NetSpec>().is_err());
    }

    #[test]
    fn single_layer_suite() {
        let cfg = SuiteConfig { samples: 10, pairs: 10, ..Default::default() };
        let suite = run_condition_suite(&NetSpec::Dims(vec![2, 8]), &cfg).unwrap();
        assert_eq!(suite.reports_of(ConditionKind::Wdc).count(), 1);
        assert_eq!(suite.reports_of(ConditionKind::R2wdc).count(), 1);
        assert!(suite.reports.iter().flat_map(|r| &r.stats).all(|s| s.layer <= 1));
        assert_eq!(suite.log_psi.len(), 1);
        assert!(suite.recipe.is_none());
    }

    #[test]
    fn recipe_suite_includes_checks() {
        let spec = NetSpec::Recipe { k: 2, d: 2, c_bar: 2.0, alpha_floor: 1.0 };
        let cfg = SuiteConfig { samples: 5, pairs: 5, ..Default::default() };
        let suite = run_condition_suite(&spec, &cfg).unwrap();
        let recipe = suite.report(ConditionKind::Recipe).unwrap();
        assert!(recipe.stats.iter().all(|s| s.meets_target()));
        let mut buf = Vec::new();
        suite.write_csv(&mut buf).unwrap();
        let rows = conditions::read_condition_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), suite.reports.iter().map(|r| r.stats.len()).sum::<usize>());
    }

    #[test]
    fn log_psi_two_ways() {
        let psi = conditions::log_psi(&[4, 100, 100]).unwrap();
        let direct = 8.0 * (25.0 * std::f64::consts::E).ln();
        let product = ((100.0 * std::f64::consts::E / 4.0).powi(4)).ln() * 2.0;
        assert!((psi[1] - direct).abs() < 1e-12 * direct);
        assert!((psi[1] - product).abs() < 1e-12 * direct);
    }

    #[test]
    fn aggregation_takes_worst_side() {
        let mut a = ConditionReport::new(ConditionKind::NormAngle, 0, 1);
        a.push(Statistic::at_most(1, "hi", 1.0, 2.0));
        a.push(Statistic::at_least(1, "lo", 1.0, 0.5));
        let mut b = a.clone();
        b.stats[0].value = 3.0;
        b.stats[1].value = 0.2;
        let agg = aggregate_reports(ConditionKind::NormAngle, 0, &[a, b], 1);
        assert_eq!(agg.get("hi", 1), Some(3.0));
        assert_eq!(agg.get("lo", 1), Some(0.2));
        assert_eq!(agg.samples, 3);
        assert_eq!(agg.violations().len(), 2);
    }
}
