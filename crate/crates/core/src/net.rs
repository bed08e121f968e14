//! ReLU generative networks `G(x) = relu(W_d ... relu(W_1 x))`.
//!
//! Weights of layer `i` (shape `n_i x n_{i-1}`) are drawn i.i.d.
//! `N(0, 1/n_i)`, i.e. the variance is the reciprocal of the layer's
//! *output* width. With this scaling `‖G(x)‖ ≈ ‖x‖ / 2^{d/2}` and every
//! `2^{-d}` factor elsewhere in the crate follows from it.
//!
//! Activation masks use the strict rule: a unit is active iff its
//! pre-activation is `> 0`. A pre-activation of exactly zero is inactive.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binfmt;
use crate::error::{Error, Result};
use crate::rng;

/// Magic bytes opening a serialized network.
pub const NET_MAGIC: &[u8; 7] = b"GPNET1\0";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeNet {
    dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
}

/// One forward pass with everything the solvers need from it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `[G_0(x) = x, G_1(x), ..., G_d(x)]`
    pub outputs: Vec<DVector<f64>>,
    /// `masks[i][u]` is true iff `(W_{i+1} G_i(x))_u > 0`.
    pub masks: Vec<Vec<bool>>,
    /// Smallest `|pre-activation|` over all units; zero means `x` sits on a
    /// kink of `G`.
    pub min_abs_preactivation: f64,
}

impl Evaluation {
    pub fn output(&self) -> &DVector<f64> {
        self.outputs.last().expect("outputs always contain the input")
    }
}

/// Dense local linearisation of the network at a point.
#[derive(Debug, Clone)]
pub struct LinearPath {
    x: DVector<f64>,
    masks: Vec<Vec<bool>>,
    lambdas: Vec<DMatrix<f64>>,
}

impl LinearPath {
    pub fn base_point(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn masks(&self) -> &[Vec<bool>] {
        &self.masks
    }

    pub fn depth(&self) -> usize {
        self.masks.len()
    }

    /// `Λ_{j,x}` for `0 <= j <= d`; `Λ_{0,x}` is the identity.
    pub fn lambda(&self, j: usize) -> &DMatrix<f64> {
        &self.lambdas[j]
    }

    /// `Λ_x = Λ_{d,x}`.
    pub fn lambda_full(&self) -> &DMatrix<f64> {
        self.lambdas.last().expect("at least Λ_0")
    }
}

impl GenerativeNet {
    /// Builds a network from explicit weights, checking that consecutive
    /// shapes chain.
    pub fn from_weights(weights: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::validation("network needs at least one layer"))?;
        let mut dims = vec![first.ncols()];
        for (i, w) in weights.iter().enumerate() {
            if w.ncols() != *dims.last().unwrap() {
                return Err(Error::validation(format!(
                    "layer {} expects input width {} but previous width is {}",
                    i + 1,
                    w.ncols(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        Ok(Self { dims, weights })
    }

    /// Gaussian network with `N(0, 1/n_out)` entries. Layer `i` (1-based)
    /// draws from stream `i` of `seed`, so its weights do not depend on the
    /// other layers.
    pub fn sample_gaussian(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let weights = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (n_in, n_out) = (pair[0], pair[1]);
                let mut rng = rng::stream_rng(seed, i as u64 + 1);
                rng::gaussian_matrix(&mut rng, n_out, n_in, (1.0 / n_out as f64).sqrt())
            })
            .collect();
        Ok(Self { dims: dims.to_vec(), weights })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    /// Weight matrix `W_i` for `1 <= i <= d`.
    pub fn layer(&self, i: usize) -> &DMatrix<f64> {
        &self.weights[i - 1]
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::validation(format!(
                "input has length {} but latent dimension is {}",
                x.len(),
                self.latent_dim()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.depth() + 1);
        let mut masks = Vec::with_capacity(self.depth());
        let mut min_abs = f64::INFINITY;
        outputs.push(x.clone());
        for w in &self.weights {
            let mut z = w * outputs.last().unwrap();
            let mut mask = Vec::with_capacity(z.len());
            for v in z.iter_mut() {
                min_abs = min_abs.min(v.abs());
                let active = *v > 0.0;
                mask.push(active);
                if !active {
                    *v = 0.0;
                }
            }
            masks.push(mask);
            outputs.push(z);
        }
        Ok(Evaluation { outputs, masks, min_abs_preactivation: min_abs })
    }

    /// Layer outputs `[G_0(x), ..., G_d(x)]`.
    pub fn forward(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        Ok(self.evaluate(x)?.outputs)
    }

    /// `G(x) = G_d(x)`.
    pub fn output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(x)?.pop().unwrap())
    }

    /// `G_j(x)` for `0 <= j <= d`, evaluating only the first `j` layers.
    pub fn partial_output(&self, x: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for w in &self.weights[..j] {
            h = (w * h).map(|v| v.max(0.0));
        }
        Ok(h)
    }

    pub fn linear_path(&self, x: &DVector<f64>) -> Result<LinearPath> {
        let eval = self.evaluate(x)?;
        let mut lambdas = Vec::with_capacity(self.depth() + 1);
        lambdas.push(DMatrix::identity(self.latent_dim(), self.latent_dim()));
        for (w, mask) in self.weights.iter().zip(&eval.masks) {
            let mut next = w * lambdas.last().unwrap();
            for (r, &active) in mask.iter().enumerate() {
                if !active {
                    next.row_mut(r).fill(0.0);
                }
            }
            lambdas.push(next);
        }
        Ok(LinearPath { x: x.clone(), masks: eval.masks, lambdas })
    }

    /// Matrix-free `Λ_x v` for the masks of some point `x`.
    pub fn push_forward(&self, masks: &[Vec<bool>], v: &DVector<f64>) -> DVector<f64> {
        let mut h = v.clone();
        for (w, mask) in self.weights.iter().zip(masks) {
            h = w * h;
            apply_mask(&mut h, mask);
        }
        h
    }

    /// Matrix-free `Λ_xᵀ u` for the masks of some point `x`.
    pub fn pull_back(&self, masks: &[Vec<bool>], u: &DVector<f64>) -> DVector<f64> {
        let mut h = u.clone();
        for (w, mask) in self.weights.iter().zip(masks).rev() {
            apply_mask(&mut h, mask);
            h = w.tr_mul(&h);
        }
        h
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        binfmt::write_u32(w, binfmt::dim_to_u32(self.depth())?)?;
        for &n in &self.dims {
            binfmt::write_u32(w, binfmt::dim_to_u32(n)?)?;
        }
        for m in &self.weights {
            binfmt::write_matrix_data(w, m)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("missing network header".into()))?;
        if &magic != NET_MAGIC {
            return Err(Error::Format("bad network magic bytes".into()));
        }
        let depth = binfmt::read_u32(r)? as usize;
        if depth == 0 {
            return Err(Error::Format("network depth is zero".into()));
        }
        let dims = (0..=depth)
            .map(|_| binfmt::read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        validate_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let weights = dims
            .windows(2)
            .map(|p| binfmt::read_matrix_data(r, p[1], p[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dims, weights })
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

fn apply_mask(h: &mut DVector<f64>, mask: &[bool]) {
    for (v, &active) in h.iter_mut().zip(mask) {
        if !active {
            *v = 0.0;
        }
    }
}

pub fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::validation("dims must list the latent width and at least one layer"));
    }
    if let Some(pos) = dims.iter().position(|&n| n == 0) {
        return Err(Error::validation(format!("dimension {pos} is zero")));
    }
    Ok(())
}

/// Per-layer outcome of the width checks in [`contractive_example_dims`].
#[derive(Debug, Clone, PartialEq)]
pub struct WidthCheck {
    pub layer: usize,
    pub width: usize,
    /// `c̄ k log ∏_{j<i} (e n_j / k)`, or `c̄ k` for the first layer.
    pub expansivity_rhs: f64,
    pub expansivity_ok: bool,
    /// `n_i / log n_i`.
    pub width_over_log: f64,
    /// `16 k / (c_ε log 2)` with `c_ε = 16 / (c̄ log 2)`, which is `c̄ k`.
    pub width_over_log_rhs: f64,
    pub width_over_log_ok: bool,
}

/// Widths `n_i = c̄ k d (2d - i) α` of a network whose layers shrink with
/// depth yet still meet the expansivity and width-over-log conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DimsRecipe {
    pub k: usize,
    pub d: usize,
    pub c_bar: f64,
    pub alpha: f64,
    pub dims: Vec<usize>,
    /// Some layer is no wider than the one feeding it.
    pub contractive: bool,
    pub checks: Vec<WidthCheck>,
}

impl DimsRecipe {
    pub fn feasible(&self) -> bool {
        self.checks.iter().all(|c| c.expansivity_ok && c.width_over_log_ok)
    }
}

/// Smallest admissible `α`: at least `alpha_floor`, at least
/// `max(2 log(c̄ k) / d², log(e² c̄))`, and with `α c̄` a positive integer.
pub fn recipe_alpha(k: usize, d: usize, c_bar: f64, alpha_floor: f64) -> f64 {
    let kd = k as f64;
    let dd = d as f64;
    let lower = alpha_floor
        .max(2.0 * (c_bar * kd).ln() / (dd * dd))
        .max((std::f64::consts::E.powi(2) * c_bar).ln());
    let scaled = (lower * c_bar - 1e-9).ceil().max(1.0);
    scaled / c_bar
}

pub fn contractive_example_dims(
    k: usize,
    d: usize,
    c_bar: f64,
    alpha_floor: f64,
) -> Result<DimsRecipe> {
    if d < 2 {
        return Err(Error::validation("contractive example needs depth d >= 2"));
    }
    if k == 0 {
        return Err(Error::validation("latent dimension must be positive"));
    }
    if !(c_bar.is_finite() && c_bar > 0.0 && alpha_floor.is_finite() && alpha_floor > 0.0) {
        return Err(Error::validation("c_bar and alpha_floor must be positive and finite"));
    }
    let alpha = recipe_alpha(k, d, c_bar, alpha_floor);
    let alpha_c = (alpha * c_bar).round();
    let kd = k as f64;

    let mut dims = vec![k];
    for i in 1..=d {
        let width = alpha_c * kd * (d * (2 * d - i)) as f64;
        if width > u32::MAX as f64 {
            return Err(Error::Infeasible(format!(
                "layer {i} width {width:.0} does not fit the network file format"
            )));
        }
        dims.push(width as usize);
    }

    let mut checks = Vec::with_capacity(d);
    let mut log_prod = 0.0;
    for i in 1..=d {
        let n = dims[i] as f64;
        let expansivity_rhs = if i == 1 { c_bar * kd } else { c_bar * kd * log_prod };
        let width_over_log = if n > 1.0 { n / n.ln() } else { f64::INFINITY };
        let width_over_log_rhs = c_bar * kd;
        checks.push(WidthCheck {
            layer: i,
            width: dims[i],
            expansivity_rhs,
            expansivity_ok: n >= expansivity_rhs,
            width_over_log,
            width_over_log_rhs,
            width_over_log_ok: width_over_log >= width_over_log_rhs,
        });
        log_prod += (std::f64::consts::E * n / kd).ln();
    }

    let contractive = dims.windows(2).any(|p| p[1] <= p[0]);
    let recipe = DimsRecipe { k, d, c_bar, alpha, dims, contractive, checks };
    if !recipe.feasible() {
        let failing: Vec<String> = recipe
            .checks
            .iter()
            .filter(|c| !(c.expansivity_ok && c.width_over_log_ok))
            .map(|c| {
                format!(
                    "layer {} (n={}): expansivity {:.3} vs {:.3}, n/log n {:.3} vs {:.3}",
                    c.layer, c.width, c.width as f64, c.expansivity_rhs, c.width_over_log,
                    c.width_over_log_rhs
                )
            })
            .collect();
        return Err(Error::Infeasible(failing.join("; ")));
    }
    Ok(recipe)
}
