//! Recovery problems and the negation-aware subgradient method.
//!
//! All four objectives are minimised over the latent code `x ∈ R^k`:
//!
//! | kind                | observation                       | loss                          |
//! |---------------------|-----------------------------------|-------------------------------|
//! | compressed sensing  | `b = A y* + η`                    | `½‖b - A G(x)‖²`              |
//! | phase retrieval     | `b = |A y*| + η`                  | `½‖b - |A G(x)|‖²`            |
//! | denoising           | `b = y* + η`                      | `½‖b - G(x)‖²`                |
//! | spiked matrix       | Wishart or Wigner `M`             | `½‖M - G(x)G(x)ᵀ‖_F²`         |
//!
//! Gradients use the linearisation `Λ_x` selected by the strict activation
//! masks, which is one element of the Clarke subdifferential.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binfmt;
use crate::error::{Error, Result};
use crate::net::{Evaluation, GenerativeNet};
use crate::rng::{self, InstanceStream};

pub const INSTANCE_MAGIC: &[u8; 8] = b"GPINST1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceKind {
    #[serde(rename = "CS")]
    CompressedSensing,
    #[serde(rename = "PR")]
    PhaseRetrieval,
    #[serde(rename = "DEN")]
    Denoising,
    #[serde(rename = "SPIKED_WISHART")]
    SpikedWishart,
    #[serde(rename = "SPIKED_WIGNER")]
    SpikedWigner,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 5] = [
        InstanceKind::CompressedSensing,
        InstanceKind::PhaseRetrieval,
        InstanceKind::Denoising,
        InstanceKind::SpikedWishart,
        InstanceKind::SpikedWigner,
    ];

    pub fn is_spiked(self) -> bool {
        matches!(self, InstanceKind::SpikedWishart | InstanceKind::SpikedWigner)
    }

    pub fn uses_measurements(self) -> bool {
        matches!(self, InstanceKind::CompressedSensing | InstanceKind::PhaseRetrieval)
    }

    fn code(self) -> u32 {
        match self {
            InstanceKind::CompressedSensing => 0,
            InstanceKind::PhaseRetrieval => 1,
            InstanceKind::Denoising => 2,
            InstanceKind::SpikedWishart => 3,
            InstanceKind::SpikedWigner => 4,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown instance kind code {code}")))
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InstanceKind::CompressedSensing => "cs",
            InstanceKind::PhaseRetrieval => "pr",
            InstanceKind::Denoising => "den",
            InstanceKind::SpikedWishart => "wishart",
            InstanceKind::SpikedWigner => "wigner",
        };
        f.write_str(s)
    }
}

impl FromStr for InstanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cs" | "compressed_sensing" => Ok(InstanceKind::CompressedSensing),
            "pr" | "phase_retrieval" => Ok(InstanceKind::PhaseRetrieval),
            "den" | "denoising" => Ok(InstanceKind::Denoising),
            "wishart" | "spiked_wishart" => Ok(InstanceKind::SpikedWishart),
            "wigner" | "spiked_wigner" => Ok(InstanceKind::SpikedWigner),
            other => Err(Error::validation(format!("unknown instance kind '{other}'"))),
        }
    }
}

/// How the additive noise of an instance is produced. For the spiked
/// models only `Zero` and `Gaussian` apply, and `sigma` is the noise level
/// of `Z` or `H`.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    Zero,
    /// i.i.d. `N(0, σ²)` entries.
    Gaussian { sigma: f64 },
    /// Gaussian direction rescaled to the given Euclidean norm.
    FixedNorm { norm: f64 },
    Vector(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub kind: InstanceKind,
    /// Drawn `N(0, I_k)` from the seed when absent.
    pub x_star: Option<DVector<f64>>,
    /// Number of measurements (compressed sensing, phase retrieval).
    pub measurements: Option<usize>,
    pub noise: Noise,
    /// Spike sample count `N` (Wishart).
    pub spike_samples: Option<usize>,
    pub seed: u64,
}

impl InstanceParams {
    pub fn new(kind: InstanceKind, seed: u64) -> Self {
        Self { kind, x_star: None, measurements: None, noise: Noise::Zero, spike_samples: None, seed }
    }

    pub fn measurements(mut self, m: usize) -> Self {
        self.measurements = Some(m);
        self
    }

    pub fn noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    pub fn spike_samples(mut self, n: usize) -> Self {
        self.spike_samples = Some(n);
        self
    }

    pub fn x_star(mut self, x: DVector<f64>) -> Self {
        self.x_star = Some(x);
        self
    }
}

/// One recovery problem with its ground truth.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: InstanceKind,
    pub net: Arc<GenerativeNet>,
    pub x_star: DVector<f64>,
    pub y_star: DVector<f64>,
    pub a: Option<DMatrix<f64>>,
    pub b: Option<DVector<f64>>,
    /// Symmetrised data matrix of the spiked models.
    pub m: Option<DMatrix<f64>>,
    pub eta: Option<DVector<f64>>,
    pub sigma: f64,
    pub spike_samples: Option<usize>,
    pub seed: u64,
}

fn draw_noise(noise: &Noise, len: usize, seed: u64) -> Result<DVector<f64>> {
    let mut rng = InstanceStream::Noise.rng(seed);
    match noise {
        Noise::Zero => Ok(DVector::zeros(len)),
        Noise::Gaussian { sigma } => Ok(rng::gaussian_vector(&mut rng, len) * *sigma),
        Noise::FixedNorm { norm } => Ok(rng::unit_vector(&mut rng, len) * *norm),
        Noise::Vector(v) if v.len() == len => Ok(v.clone()),
        Noise::Vector(v) => Err(Error::validation(format!(
            "noise vector has length {} but the observation has length {len}",
            v.len()
        ))),
    }
}

fn goe<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = 2f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
        for j in i + 1..n {
            let v: f64 = rng.sample(StandardNormal);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Synthesises an instance. Measurement matrices have `N(0, 1/m)` entries;
/// each random component draws from its own stream of `params.seed`.
pub fn make_instance(net: Arc<GenerativeNet>, params: &InstanceParams) -> Result<Instance> {
    let k = net.latent_dim();
    let n = net.output_dim();
    let seed = params.seed;
    let x_star = match &params.x_star {
        Some(x) if x.len() == k => x.clone(),
        Some(x) => {
            return Err(Error::validation(format!("x_star has length {} but k = {k}", x.len())));
        }
        None => rng::gaussian_vector(&mut InstanceStream::Latent.rng(seed), k),
    };
    let y_star = net.output(&x_star)?;
    let mut inst = Instance {
        kind: params.kind,
        net: Arc::clone(&net),
        x_star,
        y_star,
        a: None,
        b: None,
        m: None,
        eta: None,
        sigma: 0.0,
        spike_samples: None,
        seed,
    };

    match params.kind {
        InstanceKind::CompressedSensing | InstanceKind::PhaseRetrieval => {
            let m = params
                .measurements
                .filter(|&m| m > 0)
                .ok_or_else(|| Error::validation("measurement count m is required and must be positive"))?;
            let a = rng::gaussian_matrix(&mut InstanceStream::Measurement.rng(seed), m, n, (1.0 / m as f64).sqrt());
            let eta = draw_noise(&params.noise, m, seed)?;
            let clean = &a * &inst.y_star;
            let clean = if params.kind == InstanceKind::PhaseRetrieval { clean.abs() } else { clean };
            inst.b = Some(clean + &eta);
            inst.a = Some(a);
            inst.eta = Some(eta);
        }
        InstanceKind::Denoising => {
            let eta = draw_noise(&params.noise, n, seed)?;
            inst.b = Some(&inst.y_star + &eta);
            inst.eta = Some(eta);
        }
        InstanceKind::SpikedWishart | InstanceKind::SpikedWigner => {
            let sigma = match params.noise {
                Noise::Zero => 0.0,
                Noise::Gaussian { sigma } => sigma,
                _ => {
                    return Err(Error::validation(
                        "spiked models take either no noise or a Gaussian noise level",
                    ))
                }
            };
            inst.sigma = sigma;
            let y = &inst.y_star;
            let m = if params.kind == InstanceKind::SpikedWishart {
                let big_n = params
                    .spike_samples
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::validation("Wishart model needs a positive spike sample count N"))?;
                inst.spike_samples = Some(big_n);
                let u = rng::gaussian_vector(&mut InstanceStream::Spike.rng(seed), big_n);
                let z = rng::gaussian_matrix(&mut InstanceStream::SpikeNoise.rng(seed), big_n, n, 1.0);
                let b = &u * y.transpose() + z * sigma;
                let mut m = b.tr_mul(&b) / big_n as f64;
                for i in 0..n {
                    m[(i, i)] -= sigma * sigma;
                }
                m
            } else {
                let h = goe(&mut InstanceStream::SpikeNoise.rng(seed), n);
                y * y.transpose() + h * sigma
            };
            inst.m = Some(symmetrize(m));
        }
    }
    Ok(inst)
}

impl Instance {
    pub fn latent_dim(&self) -> usize {
        self.net.latent_dim()
    }

    fn loss_from_eval(&self, eval: &Evaluation) -> f64 {
        let g = eval.output();
        match self.kind {
            InstanceKind::CompressedSensing => {
                0.5 * (self.a() * g - self.b()).norm_squared()
            }
            InstanceKind::PhaseRetrieval => {
                0.5 * ((self.a() * g).abs() - self.b()).norm_squared()
            }
            InstanceKind::Denoising => 0.5 * (g - self.b()).norm_squared(),
            InstanceKind::SpikedWishart | InstanceKind::SpikedWigner => {
                let m = self.m_matrix();
                let n = g.len();
                let mut acc = 0.0;
                for j in 0..n {
                    for i in 0..n {
                        let r = m[(i, j)] - g[i] * g[j];
                        acc += r * r;
                    }
                }
                0.5 * acc
            }
        }
    }

    fn subgradient_from_eval(&self, eval: &Evaluation) -> DVector<f64> {
        let g = eval.output();
        let outer = match self.kind {
            InstanceKind::CompressedSensing => {
                let a = self.a();
                a.tr_mul(&(a * g - self.b()))
            }
            InstanceKind::PhaseRetrieval => {
                let a = self.a();
                let z = a * g;
                let b = self.b();
                let weighted = DVector::from_fn(z.len(), |i, _| {
                    let sgn = if z[i] > 0.0 {
                        1.0
                    } else if z[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    sgn * (z[i].abs() - b[i])
                });
                a.tr_mul(&weighted)
            }
            InstanceKind::Denoising => g - self.b(),
            InstanceKind::SpikedWishart | InstanceKind::SpikedWigner => {
                (self.m_matrix() * g - g * g.norm_squared()) * -2.0
            }
        };
        self.net.pull_back(&eval.masks, &outer)
    }

    fn a(&self) -> &DMatrix<f64> {
        self.a.as_ref().expect("measurement kinds carry A")
    }

    fn b(&self) -> &DVector<f64> {
        self.b.as_ref().expect("vector kinds carry b")
    }

    fn m_matrix(&self) -> &DMatrix<f64> {
        self.m.as_ref().expect("spiked kinds carry M")
    }

    pub fn loss(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.loss_from_eval(&self.net.evaluate(x)?))
    }

    /// The masked-linearisation element of the Clarke subdifferential.
    pub fn subgradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.subgradient_from_eval(&self.net.evaluate(x)?))
    }

    /// `‖x - x*‖`, or `min ‖x ∓ x*‖` for the spiked models.
    pub fn latent_error(&self, x: &DVector<f64>) -> f64 {
        let direct = (x - &self.x_star).norm();
        if self.kind.is_spiked() {
            direct.min((x + &self.x_star).norm())
        } else {
            direct
        }
    }

    /// `‖g - y*‖`, or `min ‖g ∓ y*‖` for the spiked models.
    pub fn signal_error(&self, g: &DVector<f64>) -> f64 {
        let direct = (g - &self.y_star).norm();
        if self.kind.is_spiked() {
            direct.min((g + &self.y_star).norm())
        } else {
            direct
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(INSTANCE_MAGIC)?;
        binfmt::write_u32(w, self.kind.code())?;
        binfmt::write_f64(w, self.sigma)?;
        binfmt::write_u32(w, binfmt::dim_to_u32(self.spike_samples.unwrap_or(0))?)?;
        binfmt::write_u64(w, self.seed)?;
        self.net.write_to(w)?;
        binfmt::write_vector(w, &self.x_star)?;
        let flags = self.a.is_some() as u32
            | (self.b.is_some() as u32) << 1
            | (self.eta.is_some() as u32) << 2
            | (self.m.is_some() as u32) << 3;
        binfmt::write_u32(w, flags)?;
        if let Some(a) = &self.a {
            binfmt::write_matrix(w, a)?;
        }
        if let Some(b) = &self.b {
            binfmt::write_vector(w, b)?;
        }
        if let Some(eta) = &self.eta {
            binfmt::write_vector(w, eta)?;
        }
        if let Some(m) = &self.m {
            binfmt::write_matrix(w, m)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("missing instance header".into()))?;
        if &magic != INSTANCE_MAGIC {
            return Err(Error::Format("bad instance magic bytes".into()));
        }
        let kind = InstanceKind::from_code(binfmt::read_u32(r)?)?;
        let sigma = binfmt::read_f64(r)?;
        let spike = binfmt::read_u32(r)? as usize;
        let seed = binfmt::read_u64(r)?;
        let net = Arc::new(GenerativeNet::read_from(r)?);
        let x_star = binfmt::read_vector(r)?;
        if x_star.len() != net.latent_dim() {
            return Err(Error::Format("x_star does not match the network".into()));
        }
        let flags = binfmt::read_u32(r)?;
        let a = (flags & 1 != 0).then(|| binfmt::read_matrix(r)).transpose()?;
        let b = (flags & 2 != 0).then(|| binfmt::read_vector(r)).transpose()?;
        let eta = (flags & 4 != 0).then(|| binfmt::read_vector(r)).transpose()?;
        let m = (flags & 8 != 0).then(|| binfmt::read_matrix(r)).transpose()?;
        let y_star = net.output(&x_star)?;
        let inst = Instance {
            kind,
            net,
            x_star,
            y_star,
            a,
            b,
            m,
            eta,
            sigma,
            spike_samples: (spike > 0).then_some(spike),
            seed,
        };
        inst.check_shapes()?;
        Ok(inst)
    }

    fn check_shapes(&self) -> Result<()> {
        let n = self.net.output_dim();
        let bad = |what: &str| Err(Error::Format(format!("instance {what} has the wrong shape")));
        if self.kind.uses_measurements() {
            match (&self.a, &self.b) {
                (Some(a), Some(b)) if a.ncols() == n && a.nrows() == b.len() => {}
                _ => return bad("measurements"),
            }
        } else if self.kind == InstanceKind::Denoising {
            if self.b.as_ref().map(|b| b.len()) != Some(n) {
                return bad("observation");
            }
        } else if self.m.as_ref().map(|m| m.shape()) != Some((n, n)) {
            return bad("data matrix");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Standard Gaussian in `R^k`, normalised to unit length.
    GaussianUnit,
    Provided(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// `c` in the step size `α = c 2^d / d²`.
    pub step_scale: f64,
    pub max_iters: usize,
    /// Stop once `‖x_{t+1} - x̃_t‖ <= rel_step_tol ‖x̃_t‖`.
    pub rel_step_tol: f64,
    pub init: Init,
    pub seed: u64,
    /// Keep every `stride`-th iterate; 0 keeps only the first and last.
    pub iterate_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.2,
            max_iters: 5000,
            rel_step_tol: 1e-12,
            init: Init::GaussianUnit,
            seed: 0,
            iterate_stride: 0,
        }
    }
}

impl SolverConfig {
    pub fn step_size(&self, depth: usize) -> f64 {
        let d = depth as f64;
        self.step_scale * 2f64.powi(depth as i32) / (d * d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::validation("step_scale must be positive"));
        }
        if !(self.rel_step_tol >= 0.0) {
            return Err(Error::validation("rel_step_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Values at the point used for step `iter` (after the negation test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub f: f64,
    pub latent_err: f64,
    pub signal_err: f64,
    pub negated: bool,
    /// Loss at the negated point, kept for checking the selection rule.
    #[serde(skip)]
    pub f_opposite: f64,
}

#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    /// `(iteration, iterate)` pairs at the configured stride.
    pub iterates: Vec<(usize, DVector<f64>)>,
    pub final_x: DVector<f64>,
    pub final_signal_err: f64,
    pub final_latent_err: f64,
    pub final_relative_signal_err: f64,
    /// Iterations at which `-x_t` replaced `x_t`.
    pub negations: Vec<usize>,
    pub iterations: usize,
    pub stopped_early: bool,
    pub step_size: f64,
    /// `C = 1 - (7/8) α / 2^d`
    pub contraction: f64,
}

impl SolveTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn initial_point(instance: &Instance, config: &SolverConfig) -> Result<DVector<f64>> {
    let k = instance.latent_dim();
    match &config.init {
        Init::Provided(x) if x.len() != k => Err(Error::validation(format!(
            "initial point has length {} but k = {k}",
            x.len()
        ))),
        Init::Provided(x) if x.norm() == 0.0 => Err(Error::validation("initial point must be nonzero")),
        Init::Provided(x) => Ok(x.clone()),
        Init::GaussianUnit => Ok(rng::unit_vector(&mut InstanceStream::Init.rng(config.seed), k)),
    }
}

/// Subgradient descent with the negation step:
///
/// ```text
/// x̃_t     = -x_t if f(-x_t) < f(x_t) else x_t
/// x_{t+1} = x̃_t - α v,   v ∈ ∂f(x̃_t),   α = c 2^d / d²
/// ```
pub fn solve(instance: &Instance, config: &SolverConfig) -> Result<SolveTrace> {
    config.validate()?;
    let d = instance.net.depth();
    if d < 2 {
        return Err(Error::validation("the solver needs a network of depth at least 2"));
    }
    let alpha = config.step_size(d);
    let contraction = 1.0 - 7.0 / 8.0 * alpha / 2f64.powi(d as i32);
    let y_norm = instance.y_star.norm();
    let rel = |e: f64| if y_norm > 0.0 { e / y_norm } else { e };

    let mut x = initial_point(instance, config)?;
    let mut records = Vec::new();
    let mut iterates = vec![(0, x.clone())];
    let mut negations = Vec::new();
    let mut stopped_early = false;
    let mut t = 0;

    while t < config.max_iters {
        let pos = instance.net.evaluate(&x)?;
        let neg_x = -&x;
        let neg = instance.net.evaluate(&neg_x)?;
        let f_pos = instance.loss_from_eval(&pos);
        let f_neg = instance.loss_from_eval(&neg);
        if !f_pos.is_finite() || !f_neg.is_finite() {
            return Err(Error::Divergence { iteration: t });
        }
        let negated = f_neg < f_pos;
        let (x_sel, eval, f_sel, f_other) = if negated {
            negations.push(t);
            (neg_x, neg, f_neg, f_pos)
        } else {
            (x, pos, f_pos, f_neg)
        };
        records.push(TraceRecord {
            iter: t,
            f: f_sel,
            latent_err: instance.latent_error(&x_sel),
            signal_err: instance.signal_error(eval.output()),
            negated,
            f_opposite: f_other,
        });
        let v = instance.subgradient_from_eval(&eval);
        let next = &x_sel - v * alpha;
        let step = (&next - &x_sel).norm();
        t += 1;
        x = next;
        if config.iterate_stride > 0 && t % config.iterate_stride == 0 {
            iterates.push((t, x.clone()));
        }
        if step <= config.rel_step_tol * x_sel.norm() {
            stopped_early = true;
            break;
        }
    }

    let final_eval = instance.net.evaluate(&x)?;
    let f_final = instance.loss_from_eval(&final_eval);
    if !f_final.is_finite() {
        return Err(Error::Divergence { iteration: t });
    }
    let f_opposite = instance.loss(&-&x)?;
    let final_signal_err = instance.signal_error(final_eval.output());
    let final_latent_err = instance.latent_error(&x);
    records.push(TraceRecord {
        iter: t,
        f: f_final,
        latent_err: final_latent_err,
        signal_err: final_signal_err,
        negated: false,
        f_opposite,
    });
    if iterates.last().map(|(i, _)| *i) != Some(t) {
        iterates.push((t, x.clone()));
    }
    Ok(SolveTrace {
        records,
        iterates,
        final_x: x,
        final_signal_err,
        final_latent_err,
        final_relative_signal_err: rel(final_signal_err),
        negations,
        iterations: t,
        stopped_early,
        step_size: alpha,
        contraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small_net() -> Arc<GenerativeNet> {
        Arc::new(GenerativeNet::sample_gaussian(&[4, 40, 80], 3).unwrap())
    }

    fn all_instances(noise: f64) -> Vec<Instance> {
        let net = small_net();
        InstanceKind::ALL
            .iter()
            .map(|&kind| {
                let noise = if noise == 0.0 { Noise::Zero } else { Noise::Gaussian { sigma: noise } };
                let p = InstanceParams::new(kind, 5).measurements(60).spike_samples(300).noise(noise);
                make_instance(Arc::clone(&net), &p).unwrap()
            })
            .collect()
    }

    #[test]
    fn noiseless_observations() {
        for inst in all_instances(0.0) {
            match inst.kind {
                InstanceKind::CompressedSensing => {
                    assert_eq!(inst.b.as_ref().unwrap(), &(inst.a.as_ref().unwrap() * &inst.y_star));
                }
                InstanceKind::Denoising => assert_eq!(inst.b.as_ref().unwrap(), &inst.y_star),
                _ => {}
            }
            if inst.kind != InstanceKind::SpikedWishart {
                assert_eq!(inst.loss(&inst.x_star).unwrap(), 0.0, "{}", inst.kind);
                assert!(inst.subgradient(&inst.x_star).unwrap().norm() <= 1e-10 * inst.y_star.norm_squared());
            }
        }
    }

    #[test]
    fn zero_point_losses() {
        for inst in all_instances(0.1) {
            let z = DVector::zeros(4);
            if inst.kind == InstanceKind::CompressedSensing {
                assert_relative_eq!(inst.loss(&z).unwrap(), 0.5 * inst.b.as_ref().unwrap().norm_squared());
            }
        }
    }

    #[test]
    fn phase_retrieval_with_zero_observation() {
        let net = small_net();
        let p = InstanceParams::new(InstanceKind::PhaseRetrieval, 2).measurements(30);
        let mut pr = make_instance(Arc::clone(&net), &p).unwrap();
        pr.b = Some(DVector::zeros(30));
        let mut cs = pr.clone();
        cs.kind = InstanceKind::CompressedSensing;
        let x = DVector::from_vec(vec![0.5, -1.0, 0.3, 2.0]);
        assert_relative_eq!(pr.loss(&x).unwrap(), cs.loss(&x).unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn wishart_without_noise_is_rank_one() {
        let net = small_net();
        let p = InstanceParams::new(InstanceKind::SpikedWishart, 9).spike_samples(500);
        let inst = make_instance(net, &p).unwrap();
        let m = inst.m.as_ref().unwrap();
        let u = rng::gaussian_vector(&mut InstanceStream::Spike.rng(9), 500);
        let expected = &inst.y_star * inst.y_star.transpose() * (u.norm_squared() / 500.0);
        assert_relative_eq!(m, &expected, max_relative = 1e-10, epsilon = 1e-14);
        let eig = m.clone().symmetric_eigen();
        let (top, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| {
            if v > acc.1 { (i, v) } else { acc }
        });
        let v = eig.eigenvectors.column(top);
        assert!(v.dot(&inst.y_star).abs() / inst.y_star.norm() >= 0.999);
        let second = eig.eigenvalues.iter().filter(|&&v| v < eig.eigenvalues[top]).fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(second < 1e-10 * eig.eigenvalues[top]);
    }

    #[test]
    fn spiked_matrices_symmetric() {
        for inst in all_instances(0.3).into_iter().filter(|i| i.kind.is_spiked()) {
            let m = inst.m.unwrap();
            assert_eq!(m, m.transpose());
        }
    }

    #[test]
    fn missing_parameters_rejected() {
        let net = small_net();
        let cs = InstanceParams::new(InstanceKind::CompressedSensing, 1);
        assert!(matches!(make_instance(Arc::clone(&net), &cs), Err(Error::Validation(_))));
        let w = InstanceParams::new(InstanceKind::SpikedWishart, 1);
        assert!(make_instance(Arc::clone(&net), &w).is_err());
        let bad = InstanceParams::new(InstanceKind::Denoising, 1).noise(Noise::Vector(DVector::zeros(3)));
        assert!(make_instance(Arc::clone(&net), &bad).is_err());
        let fixed = InstanceParams::new(InstanceKind::SpikedWigner, 1).noise(Noise::FixedNorm { norm: 1.0 });
        assert!(make_instance(net, &fixed).is_err());
    }

    #[test]
    fn fixed_norm_noise() {
        let p = InstanceParams::new(InstanceKind::CompressedSensing, 4)
            .measurements(50)
            .noise(Noise::FixedNorm { norm: 0.7 });
        let inst = make_instance(small_net(), &p).unwrap();
        assert_relative_eq!(inst.eta.unwrap().norm(), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn denoising_single_identity_layer() {
        let w = DMatrix::<f64>::identity(3, 3) * 2.0;
        let net = Arc::new(GenerativeNet::from_weights(vec![w]).unwrap());
        let p = InstanceParams::new(InstanceKind::Denoising, 1).x_star(DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let mut inst = make_instance(net, &p).unwrap();
        inst.b = Some(DVector::from_vec(vec![1.0, 1.0, 1.0]));
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        // active coordinates 0 and 2: G(x) = 2x there; gradient = 2(2x - b)
        let v = inst.subgradient(&x).unwrap();
        assert_relative_eq!(v, DVector::from_vec(vec![0.0, 0.0, 6.0]), epsilon = 1e-15);
    }

    #[test]
    fn zero_iterations_keep_only_start() {
        let inst = &all_instances(0.0)[0];
        let cfg = SolverConfig { max_iters: 0, seed: 3, ..Default::default() };
        let trace = solve(inst, &cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.iterations, 0);
        assert_relative_eq!(trace.final_x.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn negation_fires_from_negative_truth() {
        let net = Arc::new(GenerativeNet::sample_gaussian(&[4, 60, 120], 2).unwrap());
        let p = InstanceParams::new(InstanceKind::CompressedSensing, 8).measurements(80);
        let inst = make_instance(net, &p).unwrap();
        let cfg = SolverConfig { init: Init::Provided(-&inst.x_star), ..Default::default() };
        let trace = solve(&inst, &cfg).unwrap();
        assert_eq!(trace.negations.first(), Some(&0));
        assert!(trace.records[0].negated);
        assert!(trace.final_latent_err <= 1e-12 * inst.x_star.norm());
        assert!(trace.stopped_early);
    }

    #[test]
    fn trace_respects_selection_rule() {
        for inst in all_instances(0.05) {
            let cfg = SolverConfig { max_iters: 200, seed: 11, ..Default::default() };
            let trace = solve(&inst, &cfg).unwrap();
            assert!(trace.records.len() <= 201);
            for r in &trace.records[..trace.records.len() - 1] {
                assert!(r.f <= r.f_opposite, "{} at {}", inst.kind, r.iter);
                assert!(r.f.is_finite());
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let inst = &all_instances(0.0)[0];
        let zero = SolverConfig { init: Init::Provided(DVector::zeros(4)), ..Default::default() };
        assert!(solve(inst, &zero).is_err());
        let neg = SolverConfig { step_scale: -1.0, ..Default::default() };
        assert!(solve(inst, &neg).is_err());
        let shallow = Arc::new(GenerativeNet::sample_gaussian(&[2, 10], 1).unwrap());
        let p = InstanceParams::new(InstanceKind::Denoising, 1);
        let inst = make_instance(shallow, &p).unwrap();
        assert!(solve(&inst, &SolverConfig::default()).is_err());
    }

    #[test]
    fn divergence_reported() {
        let inst = &all_instances(0.0)[0];
        let huge = SolverConfig { step_scale: 1e200, max_iters: 50, seed: 1, ..Default::default() };
        assert!(matches!(solve(inst, &huge), Err(Error::Divergence { .. })));
    }

    #[test]
    fn descent_direction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for inst in all_instances(0.1) {
            for _ in 0..5 {
                let x = rng::gaussian_vector(&mut rng, 4);
                let v = inst.subgradient(&x).unwrap();
                let h = 1e-7;
                let dir = -&v / v.norm();
                let fd = (inst.loss(&(&x + &dir * h)).unwrap() - inst.loss(&(&x - &dir * h)).unwrap()) / (2.0 * h);
                assert!(fd <= 1e-9, "{}: {fd}", inst.kind);
            }
        }
    }

    #[test]
    fn instance_file_round_trip() {
        for inst in all_instances(0.2) {
            let mut buf = Vec::new();
            inst.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..8], INSTANCE_MAGIC);
            let back = Instance::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back.kind, inst.kind);
            assert_eq!(back.x_star, inst.x_star);
            assert_eq!(back.a, inst.a);
            assert_eq!(back.b, inst.b);
            assert_eq!(back.m, inst.m);
            assert_eq!(back.sigma, inst.sigma);
            assert_eq!(back.spike_samples, inst.spike_samples);
            let x = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
            assert_eq!(back.loss(&x).unwrap(), inst.loss(&x).unwrap());
        }
    }

    #[test]
    fn trace_csv_columns() {
        let inst = &all_instances(0.0)[2];
        let trace = solve(inst, &SolverConfig { max_iters: 3, seed: 1, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,f,latent_err,signal_err,negated\n"));
        let rows = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), trace.records.len());
        for (a, b) in rows.iter().zip(&trace.records) {
            assert_eq!((a.iter, a.f, a.latent_err, a.signal_err, a.negated), (b.iter, b.f, b.latent_err, b.signal_err, b.negated));
        }
    }
}
