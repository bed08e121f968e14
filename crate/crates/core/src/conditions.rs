//! Estimators for the deterministic conditions behind the recovery
//! guarantees.
//!
//! The sampled estimators (`wdc_deviation`, `r2wdc_deviation`,
//! `rric_deviation`, `noise_coupling`) report a maximum over random draws.
//! That is a lower bound on the true supremum, not a certificate. The only
//! exact computation is [`pattern_count_exact`], which enumerates every
//! activation pattern on a subspace of dimension at most three.
//!
//! Sample `j` of an estimator draws from stream `j` of the seed, so the
//! result does not depend on how samples are scheduled and a run with more
//! samples extends the stream of a shorter one.

use std::collections::HashSet;
use std::f64::consts::{E, PI};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, SwapFrame};
use crate::linalg;
use crate::net::GenerativeNet;
use crate::rng;

/// Difference norms below this make a tuple degenerate; it is skipped.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionKind {
    #[serde(rename = "WDC")]
    Wdc,
    #[serde(rename = "R2WDC")]
    R2wdc,
    #[serde(rename = "RRIC")]
    Rric,
    #[serde(rename = "NOISE")]
    Noise,
    #[serde(rename = "LAMBDA_CONC")]
    LambdaConc,
    #[serde(rename = "PATTERN_COUNT")]
    PatternCount,
    #[serde(rename = "NORM_ANGLE")]
    NormAngle,
    #[serde(rename = "LIPSCHITZ")]
    Lipschitz,
    #[serde(rename = "CONVEXITY")]
    Convexity,
    #[serde(rename = "RECIPE")]
    Recipe,
}

/// Which side of its target a statistic should fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statistic {
    /// 1-based layer, or 0 for whole-network quantities.
    pub layer: usize,
    pub name: String,
    pub value: f64,
    pub target: Option<f64>,
    pub sense: Sense,
}

impl Statistic {
    pub fn new(layer: usize, name: &str, value: f64) -> Self {
        Self { layer, name: name.to_string(), value, target: None, sense: Sense::AtMost }
    }

    pub fn at_most(layer: usize, name: &str, value: f64, target: f64) -> Self {
        Self { target: Some(target), ..Self::new(layer, name, value) }
    }

    pub fn at_least(layer: usize, name: &str, value: f64, target: f64) -> Self {
        Self { target: Some(target), sense: Sense::AtLeast, ..Self::new(layer, name, value) }
    }

    pub fn meets_target(&self) -> bool {
        match (self.target, self.sense) {
            (None, _) => true,
            (Some(t), Sense::AtMost) => self.value <= t,
            (Some(t), Sense::AtLeast) => self.value >= t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub kind: ConditionKind,
    pub seed: u64,
    pub samples: usize,
    pub skipped: usize,
    pub stats: Vec<Statistic>,
}

impl ConditionReport {
    pub fn new(kind: ConditionKind, seed: u64, samples: usize) -> Self {
        Self { kind, seed, samples, skipped: 0, stats: Vec::new() }
    }

    pub fn push(&mut self, stat: Statistic) {
        self.stats.push(stat);
    }

    pub fn get(&self, name: &str, layer: usize) -> Option<f64> {
        self.stats.iter().find(|s| s.name == name && s.layer == layer).map(|s| s.value)
    }

    /// Largest value among statistics called `name`, over all layers.
    pub fn max_of(&self, name: &str) -> Option<f64> {
        self.stats.iter().filter(|s| s.name == name).map(|s| s.value).reduce(f64::max)
    }

    /// The sampled condition constant `ε̂`, i.e. the largest `max_deviation`.
    pub fn epsilon_hat(&self) -> Option<f64> {
        self.max_of("max_deviation")
    }

    pub fn violations(&self) -> Vec<&Statistic> {
        self.stats.iter().filter(|s| !s.meets_target()).collect()
    }

    /// Moves every statistic to `layer`.
    pub fn at_layer(mut self, layer: usize) -> Self {
        for s in &mut self.stats {
            s.layer = layer;
        }
        self
    }

    pub fn csv_rows(&self) -> Vec<ConditionRow> {
        self.stats
            .iter()
            .map(|s| ConditionRow {
                condition: self.kind,
                layer: s.layer,
                statistic: s.name.clone(),
                value: s.value,
                target: s.target,
                samples: self.samples,
                skipped: self.skipped,
                seed: self.seed,
            })
            .collect()
    }
}

/// One line of the condition CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: ConditionKind,
    pub layer: usize,
    pub statistic: String,
    pub value: f64,
    pub target: Option<f64>,
    pub samples: usize,
    pub skipped: usize,
    pub seed: u64,
}

pub fn write_condition_csv<W: Write>(reports: &[ConditionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for row in r.csv_rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_condition_csv<R: Read>(input: R) -> Result<Vec<ConditionRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Runs `f` once per sample on that sample's stream. `None` marks a skipped
/// draw. Output order is sample order.
fn per_sample<F>(seed: u64, samples: usize, f: F) -> Vec<Option<f64>>
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    (0..samples)
        .into_par_iter()
        .map(|j| f(&mut rng::stream_rng(seed, j as u64)))
        .collect()
}

struct SampleSummary {
    max: f64,
    mean: f64,
    median: f64,
    skipped: usize,
}

fn summarize(values: Vec<Option<f64>>) -> SampleSummary {
    let skipped = values.iter().filter(|v| v.is_none()).count();
    let mut kept: Vec<f64> = values.into_iter().flatten().collect();
    let max = kept.iter().copied().fold(0.0, f64::max);
    let mean = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    let median = linalg::median(&mut kept).unwrap_or(0.0);
    SampleSummary { max, mean, median, skipped }
}

fn require_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::validation("samples must be at least 1"));
    }
    Ok(())
}

fn active(w: &DMatrix<f64>, v: &DVector<f64>) -> Vec<bool> {
    (w * v).iter().map(|&z| z > 0.0).collect()
}

/// `W_{+,r}ᵀ W_{+,s} = Wᵀ diag(Wr > 0 ∧ Ws > 0) W`.
pub fn masked_gram(w: &DMatrix<f64>, r: &DVector<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mr = active(w, r);
    let ms = active(w, s);
    let rows: Vec<usize> = (0..w.nrows()).filter(|&j| mr[j] && ms[j]).collect();
    let sel = w.select_rows(&rows);
    sel.transpose() * sel
}

/// `W_{+,r}ᵀ W_{+,s} - Q_{r,s}`.
pub fn distortion_difference(w: &DMatrix<f64>, r: &DVector<f64>, s: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(masked_gram(w, r, s) - geometry::q_matrix(r, s)?.q)
}

/// `‖W_{+,r}ᵀ W_{+,s} - Q_{r,s}‖` for one pair.
pub fn wdc_pair_deviation(w: &DMatrix<f64>, r: &DVector<f64>, s: &DVector<f64>) -> Result<f64> {
    Ok(linalg::spectral_norm(&distortion_difference(w, r, s)?))
}

/// Sampled weight distribution constant of a single matrix over uniform
/// unit pairs `(r, s)`.
pub fn wdc_deviation(w: &DMatrix<f64>, samples: usize, seed: u64) -> Result<ConditionReport> {
    require_samples(samples)?;
    let n = w.ncols();
    let values = per_sample(seed, samples, |rng| {
        let r = rng::unit_vector(rng, n);
        let s = rng::unit_vector(rng, n);
        wdc_pair_deviation(w, &r, &s).ok()
    });
    let summary = summarize(values);
    let mut report = ConditionReport::new(ConditionKind::Wdc, seed, samples);
    report.skipped = summary.skipped;
    report.push(Statistic::new(1, "max_deviation", summary.max));
    report.push(Statistic::new(1, "mean_deviation", summary.mean));
    Ok(report)
}

/// Average of `W_{+,r}ᵀ W_{+,s}` over `draws` independent `m x n` Gaussian
/// matrices with `N(0, 1/m)` entries, and its spectral distance to `Q_{r,s}`.
pub fn averaged_masked_gram(
    n: usize,
    m: usize,
    draws: usize,
    r: &DVector<f64>,
    s: &DVector<f64>,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    require_samples(draws)?;
    if r.len() != n || s.len() != n {
        return Err(Error::validation("r and s must live in R^n"));
    }
    let std = (1.0 / m as f64).sqrt();
    let sum = (0..draws)
        .into_par_iter()
        .map(|c| {
            let w = rng::gaussian_matrix(&mut rng::stream_rng(seed, c as u64), m, n, std);
            masked_gram(&w, r, s)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(DMatrix::zeros(n, n), |acc, g| acc + g);
    let avg = sum / draws as f64;
    let dev = linalg::spectral_norm(&(&avg - geometry::q_matrix(r, s)?.q));
    Ok((avg, dev))
}

/// `|⟨(W_{+,a}ᵀ W_{+,b} - Q_{a,b}) u, v⟩|` without forming any `n x n`
/// matrix.
pub fn bilinear_distortion(
    w: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> f64 {
    let wa = w * a;
    let wb = w * b;
    let wu = w * u;
    let wv = w * v;
    let mut lhs = 0.0;
    for j in 0..w.nrows() {
        if wa[j] > 0.0 && wb[j] > 0.0 {
            lhs += wu[j] * wv[j];
        }
    }
    // ⟨W_{+,a}ᵀ W_{+,b} u, v⟩ = ⟨W_{+,b} u, W_{+,a} v⟩, and Q is symmetric.
    let q_term = SwapFrame::new(a, b).map_or(0.0, |f| f.q_apply(u).dot(v));
    (lhs - q_term).abs()
}

fn check_layer(net: &GenerativeNet, layer: usize) -> Result<()> {
    if layer == 0 || layer > net.depth() {
        return Err(Error::validation(format!(
            "layer {layer} out of range 1..={}",
            net.depth()
        )));
    }
    Ok(())
}

/// Normalised range-restricted deviation for one tuple
/// `(x, y, x1, x2, x3, x4)` of latent points at layer `i`; `None` when a
/// difference is degenerate.
pub fn r2wdc_tuple(net: &GenerativeNet, layer: usize, tuple: &[DVector<f64>; 6]) -> Result<Option<f64>> {
    check_layer(net, layer)?;
    let g = |x: &DVector<f64>| net.partial_output(x, layer - 1);
    let a = g(&tuple[0])?;
    let b = g(&tuple[1])?;
    let u = g(&tuple[2])? - g(&tuple[3])?;
    let v = g(&tuple[4])? - g(&tuple[5])?;
    let (nu, nv) = (u.norm(), v.norm());
    if nu < DEGENERATE_TOL || nv < DEGENERATE_TOL {
        return Ok(None);
    }
    Ok(Some(bilinear_distortion(net.layer(layer), &a, &b, &u, &v) / (nu * nv)))
}

/// Sampled range-restricted weight distribution constant of layer `i`,
/// over standard Gaussian latent tuples.
pub fn r2wdc_deviation(net: &GenerativeNet, layer: usize, samples: usize, seed: u64) -> Result<ConditionReport> {
    check_layer(net, layer)?;
    require_samples(samples)?;
    let k = net.latent_dim();
    let values = per_sample(seed, samples, |rng| {
        let tuple: [DVector<f64>; 6] = std::array::from_fn(|_| rng::gaussian_vector(rng, k));
        r2wdc_tuple(net, layer, &tuple).ok().flatten()
    });
    let summary = summarize(values);
    let mut report = ConditionReport::new(ConditionKind::R2wdc, seed, samples);
    report.skipped = summary.skipped;
    report.push(Statistic::new(layer, "max_deviation", summary.max));
    report.push(Statistic::new(layer, "mean_deviation", summary.mean));
    Ok(report)
}

/// `|⟨(AᵀA - I) u, v⟩| / (‖u‖‖v‖)`; `None` for degenerate differences.
pub fn rric_tuple(a: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu < DEGENERATE_TOL || nv < DEGENERATE_TOL {
        return None;
    }
    let au = a * u;
    let av = a * v;
    Some((au.dot(&av) - u.dot(v)).abs() / (nu * nv))
}

/// Sampled restricted isometry constant of `A` over differences of points
/// in the range of `G`.
pub fn rric_deviation(a: &DMatrix<f64>, net: &GenerativeNet, samples: usize, seed: u64) -> Result<ConditionReport> {
    require_samples(samples)?;
    if a.ncols() != net.output_dim() {
        return Err(Error::validation(format!(
            "A has {} columns but the network outputs {}",
            a.ncols(),
            net.output_dim()
        )));
    }
    let k = net.latent_dim();
    let values = per_sample(seed, samples, |rng| {
        let xs: [DVector<f64>; 4] = std::array::from_fn(|_| rng::gaussian_vector(rng, k));
        let g: Vec<DVector<f64>> = xs.iter().map(|x| net.output(x).ok()).collect::<Option<_>>()?;
        rric_tuple(a, &(&g[0] - &g[1]), &(&g[2] - &g[3]))
    });
    let summary = summarize(values);
    let mut report = ConditionReport::new(ConditionKind::Rric, seed, samples);
    report.skipped = summary.skipped;
    report.push(Statistic::new(0, "max_deviation", summary.max));
    report.push(Statistic::new(0, "median_deviation", summary.median));
    Ok(report)
}

fn check_expansive(dims: &[usize]) -> Result<()> {
    crate::net::validate_dims(dims)?;
    let k = dims[0];
    if let Some(i) = dims.iter().position(|&n| n < k) {
        return Err(Error::validation(format!("width n_{i} = {} is below k = {k}", dims[i])));
    }
    Ok(())
}

/// `log ∏_{j=1}^d (e n_j / k)`.
fn log_width_product(dims: &[usize]) -> f64 {
    let k = dims[0] as f64;
    dims[1..].iter().map(|&n| (E * n as f64 / k).ln()).sum()
}

/// Noise coupling factor
/// `ω = 2/2^{d/2} · √(13/12) · √((k/m) log(5 ∏ e n_j / k))`.
pub fn omega(dims: &[usize], m: usize) -> Result<f64> {
    check_expansive(dims)?;
    if m == 0 {
        return Err(Error::validation("m must be positive"));
    }
    let d = (dims.len() - 1) as f64;
    let k = dims[0] as f64;
    let log_term = 5f64.ln() + log_width_product(dims);
    Ok(2.0 / 2f64.powf(d / 2.0) * (13.0f64 / 12.0).sqrt() * (k / m as f64 * log_term).sqrt())
}

/// `log Ψ_i = k Σ_{j<=i} log(e n_j / k)` for `i = 1..d`: the log of the
/// bound on the number of linear pieces of `G_i`.
pub fn log_psi(dims: &[usize]) -> Result<Vec<f64>> {
    check_expansive(dims)?;
    let k = dims[0] as f64;
    let mut acc = 0.0;
    Ok(dims[1..]
        .iter()
        .map(|&n| {
            acc += k * (E * n as f64 / k).ln();
            acc
        })
        .collect())
}

/// Noise terms `|⟨x, Λ_xᵀ Aᵀ η⟩| / (‖η‖‖x‖)` and `‖Λ_xᵀ Aᵀ η‖ / ‖η‖`
/// maximised over Gaussian `x`, with `ω` as the target when defined.
pub fn noise_coupling(
    net: &GenerativeNet,
    a: &DMatrix<f64>,
    eta: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<ConditionReport> {
    require_samples(samples)?;
    if a.ncols() != net.output_dim() || a.nrows() != eta.len() {
        return Err(Error::validation("A, η and the network output have inconsistent shapes"));
    }
    let k = net.latent_dim();
    let eta_norm = eta.norm();
    let at_eta = a.tr_mul(eta);
    let pairs: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|j| {
            if eta_norm == 0.0 {
                return (0.0, 0.0);
            }
            let x = rng::gaussian_vector(&mut rng::stream_rng(seed, j as u64), k);
            let eval = net.evaluate(&x).expect("latent length checked");
            let z = net.pull_back(&eval.masks, &at_eta);
            let xn = x.norm();
            let inner = if xn > 0.0 { x.dot(&z).abs() / (eta_norm * xn) } else { 0.0 };
            (inner, z.norm() / eta_norm)
        })
        .collect();
    let max_inner = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_norm = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let w = omega(net.dims(), a.nrows()).ok();
    let mut report = ConditionReport::new(ConditionKind::Noise, seed, samples);
    let stat = |name: &str, v: f64| match w {
        Some(t) => Statistic::at_most(0, name, v, t),
        None => Statistic::new(0, name, v),
    };
    report.push(stat("max_inner_ratio", max_inner));
    report.push(stat("max_norm_ratio", max_norm));
    if let Some(w) = w {
        report.push(Statistic::new(0, "omega", w));
    }
    Ok(report)
}

/// Exact activation-pattern count on a subspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternCount {
    pub count: usize,
    /// `(e m / ℓ)^ℓ`
    pub bound: f64,
    /// `ℓ log(e m / ℓ)`
    pub log_bound: f64,
}

pub const PATTERN_MAX_ROWS: usize = 20;
pub const PATTERN_MAX_DIM: usize = 3;

/// Counts the distinct vectors `(1[⟨w_j, v⟩ > 0])_j` over unit `v` in the
/// column span of `basis`.
///
/// The hyperplanes `⟨w_j, v⟩ = 0` cut the span into chambers, and with the
/// strict inequality a point on a face shares its pattern with the chamber
/// on the negative side of every hyperplane through it. The count is
/// therefore the number of distinct chamber patterns. Chambers are located
/// exactly: on the circle (ℓ = 2) between consecutive boundary directions,
/// on the sphere (ℓ = 3) in the angular sectors around each vertex, where
/// vertices are the pairwise intersections `±(p_a × p_b)` of the great
/// circles. Every chamber of an arrangement of at least two distinct great
/// circles has a vertex, so no chamber is missed.
pub fn pattern_count_exact(w: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<PatternCount> {
    let m = w.nrows();
    let ell = basis.ncols();
    if ell == 0 || ell > PATTERN_MAX_DIM {
        return Err(Error::Unsupported(format!("subspace dimension {ell} not in 1..=3")));
    }
    if m > PATTERN_MAX_ROWS {
        return Err(Error::Unsupported(format!("{m} rows exceeds the enumeration limit of 20")));
    }
    if w.ncols() != basis.nrows() {
        return Err(Error::validation("basis rows must match the columns of W"));
    }
    let sv = basis.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 || sv.min() <= 1e-10 * smax {
        return Err(Error::validation("basis columns are not linearly independent"));
    }

    // p_j = basisᵀ w_j, so sign⟨w_j, basis c⟩ = sign⟨p_j, c⟩
    let p = w * basis;
    let normals: Vec<DVector<f64>> = (0..m).map(|j| p.row(j).transpose()).collect();
    let pattern = |c: &DVector<f64>| -> u32 {
        normals
            .iter()
            .enumerate()
            .filter(|(_, pj)| pj.dot(c) > 0.0)
            .fold(0u32, |acc, (j, _)| acc | (1 << j))
    };

    let candidates = match ell {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => circle_witnesses(&normals),
        _ => sphere_witnesses(&normals),
    };
    let distinct: HashSet<u32> = candidates.iter().map(pattern).collect();

    let (mf, lf) = (m as f64, ell as f64);
    let log_bound = if m == 0 { f64::NEG_INFINITY } else { lf * (E * mf / lf).ln() };
    Ok(PatternCount { count: distinct.len(), bound: log_bound.exp(), log_bound })
}

fn circle_witnesses(normals: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let tau = 2.0 * PI;
    let mut angles: Vec<f64> = normals
        .iter()
        .filter(|p| p.norm() > 0.0)
        .flat_map(|p| {
            let phi = p[1].atan2(p[0]);
            [phi + PI / 2.0, phi - PI / 2.0]
        })
        .map(|a| a.rem_euclid(tau))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if angles.is_empty() {
        return vec![DVector::from_vec(vec![1.0, 0.0])];
    }
    let unit = |a: f64| DVector::from_vec(vec![a.cos(), a.sin()]);
    let mut out = Vec::with_capacity(angles.len());
    for (i, &a) in angles.iter().enumerate() {
        let next = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + tau };
        out.push(unit(0.5 * (a + next)));
    }
    out
}

fn orthonormal_tangent(v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    // any axis not nearly parallel to v
    let axis = (0..3).min_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
    let mut e = DVector::zeros(3);
    e[axis] = 1.0;
    let t1 = (&e - v * v.dot(&e)).normalize();
    let t2 = v.cross(&t1);
    (t1, t2)
}

fn sphere_witnesses(normals: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut planes: Vec<DVector<f64>> = Vec::new();
    for p in normals.iter().filter(|p| p.norm() > 0.0) {
        let ph = p.normalize();
        if planes.iter().all(|q| q.cross(&ph).norm() > 1e-12) {
            planes.push(ph);
        }
    }
    match planes.len() {
        0 => return vec![DVector::from_vec(vec![1.0, 0.0, 0.0])],
        1 => return vec![planes[0].clone(), -&planes[0]],
        _ => {}
    }

    let mut vertices: Vec<DVector<f64>> = Vec::new();
    for a in 0..planes.len() {
        for b in a + 1..planes.len() {
            let v = planes[a].cross(&planes[b]).normalize();
            for cand in [v.clone(), -v] {
                if vertices.iter().all(|u| (u - &cand).norm() > 1e-9) {
                    vertices.push(cand);
                }
            }
        }
    }

    let mut out = Vec::new();
    for v in &vertices {
        let (t1, t2) = orthonormal_tangent(v);
        let mut margin = f64::INFINITY;
        let mut angles = Vec::new();
        for p in &planes {
            let dist = p.dot(v).abs();
            if dist < 1e-9 {
                // the great circle of p through v runs along v × p
                let dir = v.cross(p);
                let phi = dir.dot(&t2).atan2(dir.dot(&t1));
                angles.push(phi.rem_euclid(2.0 * PI));
                angles.push((phi + PI).rem_euclid(2.0 * PI));
            } else {
                margin = margin.min(dist);
            }
        }
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let delta = (0.25 * margin).min(1e-3);
        for (i, &a) in angles.iter().enumerate() {
            let next = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + 2.0 * PI };
            let mid = 0.5 * (a + next);
            let point = v + (&t1 * mid.cos() + &t2 * mid.sin()) * delta;
            out.push(point.normalize());
        }
    }
    out
}

/// Chamber count of `m` generic central hyperplanes in `R^ℓ`:
/// `2 Σ_{j<ℓ} C(m-1, j)`.
pub fn generic_central_chambers(m: usize, ell: usize) -> usize {
    if m == 0 {
        return 1;
    }
    2 * (0..ell).map(|j| binomial(m - 1, j)).sum::<usize>()
}

/// `Σ_{j<=ℓ} C(m, j)`, the region bound for `m` affine hyperplanes in `R^ℓ`.
pub fn affine_region_bound(m: usize, ell: usize) -> usize {
    (0..=ell).map(|j| binomial(m, j)).sum()
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn require_nonzero(x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if x.norm() == 0.0 || y.norm() == 0.0 {
        return Err(Error::validation("inputs must be nonzero"));
    }
    Ok(())
}

/// True when no unit of the network has a pre-activation of exactly zero
/// at `x`.
pub fn is_differentiable_point(net: &GenerativeNet, x: &DVector<f64>) -> Result<bool> {
    Ok(net.evaluate(x)?.min_abs_preactivation > 0.0)
}

fn require_differentiable(net: &GenerativeNet, x: &DVector<f64>) -> Result<()> {
    if !is_differentiable_point(net, x)? {
        return Err(Error::validation("x lies on a kink of G; resample it"));
    }
    Ok(())
}

/// Concentration of the local linear maps at `x`, normalised by `2^d`:
///
/// - `gram_deviation` = `2^d ‖Λ_xᵀΛ_x - I/2^d‖`, target `4εd`
/// - `lambda_norm_sq` = `2^d ‖Λ_x‖²`, target `13/12`
/// - `htilde_deviation` = `2^d ‖Λ_xᵀΛ_y y - h̃_{x,y}‖ / ‖y‖`, target `24 d³ √ε`
///
/// `eps_ref` is a condition constant from a companion estimate; without it
/// the ε-dependent targets are left empty.
pub fn lambda_concentration(
    net: &GenerativeNet,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps_ref: Option<f64>,
) -> Result<ConditionReport> {
    require_nonzero(x, y)?;
    require_differentiable(net, x)?;
    let d = net.depth();
    let k = net.latent_dim();
    let scale = 2f64.powi(d as i32);
    let lx = net.linear_path(x)?;
    let ly_y = net.output(y)?;
    let lam = lx.lambda_full();
    let gram = lam.transpose() * lam;
    let gram_dev = linalg::symmetric_spectral_norm(&(&gram - DMatrix::identity(k, k) / scale)) * scale;
    let norm_sq = linalg::symmetric_spectral_norm(&gram) * scale;
    let profile = geometry::angle_profile(x, y, d)?;
    let h_dev = (lam.tr_mul(&ly_y) - &profile.h_tilde).norm() * scale / y.norm();

    let dd = d as f64;
    let mut report = ConditionReport::new(ConditionKind::LambdaConc, 0, 1);
    match eps_ref {
        Some(eps) => {
            report.push(Statistic::at_most(0, "gram_deviation", gram_dev, 4.0 * eps * dd));
            report.push(Statistic::at_most(0, "lambda_norm_sq", norm_sq, 13.0 / 12.0));
            report.push(Statistic::at_most(0, "htilde_deviation", h_dev, 24.0 * dd.powi(3) * eps.sqrt()));
        }
        None => {
            report.push(Statistic::new(0, "gram_deviation", gram_dev));
            report.push(Statistic::at_most(0, "lambda_norm_sq", norm_sq, 13.0 / 12.0));
            report.push(Statistic::new(0, "htilde_deviation", h_dev));
        }
    }
    Ok(report)
}

/// Layer-by-layer norm and angle propagation for the pair `(x, y)` against
/// the bands implied by a condition constant `eps_ref`.
pub fn norm_angle_report(
    net: &GenerativeNet,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps_ref: f64,
) -> Result<ConditionReport> {
    require_nonzero(x, y)?;
    let d = net.depth();
    let gx = net.forward(x)?;
    let gy = net.forward(y)?;
    let (nx2, ny2) = (x.norm_squared(), y.norm_squared());
    let mut report = ConditionReport::new(ConditionKind::NormAngle, 0, 1);
    let angle_tol = 4.0 * eps_ref.sqrt();
    let mut prev_theta = linalg::angle_between(x, y);
    for j in 1..=d {
        let lo = (0.5 - eps_ref).powi(j as i32);
        let hi = (0.5 + eps_ref).powi(j as i32);
        let rx = gx[j].norm_squared() / nx2;
        let ry = gy[j].norm_squared() / ny2;
        report.push(Statistic::at_most(j, "norm_ratio_x_upper", rx, hi));
        report.push(Statistic::at_least(j, "norm_ratio_x_lower", rx, lo));
        report.push(Statistic::at_most(j, "norm_ratio_y_upper", ry, hi));
        report.push(Statistic::at_least(j, "norm_ratio_y_lower", ry, lo));
        let theta = linalg::angle_between(&gx[j], &gy[j]);
        report.push(Statistic::at_most(j, "angle_residual", (theta - geometry::g_theta(prev_theta)).abs(), angle_tol));
        prev_theta = theta;
    }
    let scale = 2f64.powi(d as i32);
    let norm_prod = x.norm() * y.norm();
    let inner = gx[d].dot(&gy[d]);
    let profile = geometry::angle_profile(x, y, d)?;
    report.push(Statistic::at_least(d, "output_inner", inner * scale / norm_prod, 1.0 / (4.0 * PI)));
    let dd = d as f64;
    report.push(Statistic::at_most(
        d,
        "htilde_inner_residual",
        (inner - x.dot(&profile.h_tilde)).abs() * scale / norm_prod,
        24.0 * dd.powi(3) * eps_ref.sqrt(),
    ));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzCheck {
    /// `‖G_i(x) - G_i(y)‖ 2^{i/2} / ‖x - y‖` for `i = 1..d`.
    pub ratios: Vec<f64>,
    /// `‖x - y‖ <= d √ε ‖y‖`
    pub in_ball: bool,
}

impl LipschitzCheck {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Scaled local Lipschitz ratios of every sub-network `G_i`. Pairs outside
/// the ball are still evaluated and flagged.
pub fn lipschitz_check(net: &GenerativeNet, x: &DVector<f64>, y: &DVector<f64>, eps_ref: f64) -> Result<LipschitzCheck> {
    let gx = net.forward(x)?;
    let gy = net.forward(y)?;
    let dist = (x - y).norm();
    let d = net.depth();
    let ratios = (1..=d)
        .map(|i| {
            if dist == 0.0 {
                0.0
            } else {
                (&gx[i] - &gy[i]).norm() * 2f64.powf(i as f64 / 2.0) / dist
            }
        })
        .collect();
    let in_ball = dist <= d as f64 * eps_ref.sqrt() * y.norm();
    Ok(LipschitzCheck { ratios, in_ball })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCheck {
    /// `‖2^d Λ_xᵀ(Λ_x x - Λ_y y) - (x - y)‖ / ‖x - y‖`
    pub residual: f64,
    pub in_ball: bool,
}

/// How far `2^d Λ_xᵀ(G(x) - G(y))` is from `x - y`, relative to `‖x - y‖`.
pub fn convexity_direction_check(
    net: &GenerativeNet,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps_ref: f64,
) -> Result<ConvexityCheck> {
    let diff = x - y;
    let dist = diff.norm();
    if dist == 0.0 {
        return Err(Error::validation("convexity check needs x != y"));
    }
    let ex = net.evaluate(x)?;
    if ex.min_abs_preactivation == 0.0 {
        return Err(Error::validation("x lies on a kink of G; resample it"));
    }
    let gy = net.output(y)?;
    let scale = 2f64.powi(net.depth() as i32);
    let pulled = net.pull_back(&ex.masks, &(ex.output() - gy)) * scale;
    let residual = (pulled - &diff).norm() / dist;
    let in_ball = dist <= net.depth() as f64 * eps_ref.sqrt() * y.norm();
    Ok(ConvexityCheck { residual, in_ball })
}
