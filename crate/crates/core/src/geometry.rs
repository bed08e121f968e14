//! Deterministic geometry of Gaussian ReLU layers.
//!
//! For a Gaussian `W` with `N(0, 1/m)` entries, `E[W_{+,r}ᵀ W_{+,s}] = Q_{r,s}`
//! where
//!
//! ```text
//! Q_{r,s} = (π - θ)/(2π) I + sin θ/(2π) M
//! ```
//!
//! `θ = ∠(r, s)` and `M` swaps `r̂` and `ŝ` and vanishes on `span{r, s}^⊥`.
//! The angle map `g` tracks how one such layer shrinks the angle between two
//! inputs; iterating it gives the predicted angles `θ̄_i` and the vector
//! field `h̃_{x,y}`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Angles below this are treated as exactly zero.
pub const ANGLE_EPS: f64 = 1e-12;

/// Tolerance for the Gram–Schmidt step building the basis of `span{r, s}`.
pub const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DistortionMatrix {
    pub theta: f64,
    pub q: DMatrix<f64>,
    pub r_hat: Option<DVector<f64>>,
    pub s_hat: Option<DVector<f64>>,
}

/// Orthonormal frame of `span{r̂, ŝ}` plus cosine and sine of the angle.
/// `e2` is `None` when the vectors are collinear.
#[derive(Debug, Clone)]
pub(crate) struct SwapFrame {
    pub e1: DVector<f64>,
    pub e2: Option<DVector<f64>>,
    pub cos: f64,
    pub sin: f64,
    pub theta: f64,
}

impl SwapFrame {
    /// Returns `None` if either vector is zero.
    pub fn new(r: &DVector<f64>, s: &DVector<f64>) -> Option<Self> {
        let nr = r.norm();
        let ns = s.norm();
        if nr == 0.0 || ns == 0.0 {
            return None;
        }
        let r_hat = r / nr;
        let s_hat = s / ns;
        let cos = r_hat.dot(&s_hat).clamp(-1.0, 1.0);
        let mut theta = linalg::angle_between(&r_hat, &s_hat);
        if theta < ANGLE_EPS {
            theta = 0.0;
        }
        let residual = &s_hat - &r_hat * cos;
        let rn = residual.norm();
        let e2 = (rn > COLLINEAR_TOL).then(|| residual / rn);
        Some(Self { e1: r_hat, e2, cos, sin: theta.sin(), theta })
    }

    /// `M v` without forming `M`.
    ///
    /// In the frame `(e1, e2)`, `r̂ = e1` and `ŝ = cos θ e1 + sin θ e2`, so
    /// `M = cos θ (e1e1ᵀ - e2e2ᵀ) + sin θ (e1e2ᵀ + e2e1ᵀ)`. Collinear pairs
    /// pointing the same way use `M = r̂r̂ᵀ`; antipodal pairs use `M = 0`.
    pub fn swap_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.e2 {
            Some(e2) => {
                let a = self.e1.dot(v);
                let b = e2.dot(v);
                &self.e1 * (self.cos * a + self.sin * b) + e2 * (self.sin * a - self.cos * b)
            }
            None if self.cos > 0.0 => &self.e1 * self.e1.dot(v),
            None => DVector::zeros(v.len()),
        }
    }

    pub fn swap_matrix(&self) -> DMatrix<f64> {
        let n = self.e1.len();
        match &self.e2 {
            Some(e2) => {
                let e1 = &self.e1;
                (e1 * e1.transpose() - e2 * e2.transpose()) * self.cos
                    + (e1 * e2.transpose() + e2 * e1.transpose()) * self.sin
            }
            None if self.cos > 0.0 => &self.e1 * self.e1.transpose(),
            None => DMatrix::zeros(n, n),
        }
    }

    /// `Q_{r,s} v` without forming `Q`.
    pub fn q_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v * ((PI - self.theta) / (2.0 * PI)) + self.swap_apply(v) * (self.sin / (2.0 * PI))
    }
}

/// The distortion matrix `Q_{r,s}`; the zero matrix when `r` or `s` is zero.
pub fn q_matrix(r: &DVector<f64>, s: &DVector<f64>) -> Result<DistortionMatrix> {
    if r.len() != s.len() {
        return Err(Error::validation("r and s must have the same length"));
    }
    let n = r.len();
    let Some(frame) = SwapFrame::new(r, s) else {
        return Ok(DistortionMatrix {
            theta: linalg::angle_between(r, s),
            q: DMatrix::zeros(n, n),
            r_hat: (r.norm() > 0.0).then(|| r.normalize()),
            s_hat: (s.norm() > 0.0).then(|| s.normalize()),
        });
    };
    let mut q = frame.swap_matrix() * (frame.sin / (2.0 * PI));
    let diag = (PI - frame.theta) / (2.0 * PI);
    for i in 0..n {
        q[(i, i)] += diag;
    }
    // exact symmetry regardless of rounding in the rank-2 products
    let q = (&q + q.transpose()) * 0.5;
    Ok(DistortionMatrix {
        theta: frame.theta,
        q,
        r_hat: Some(frame.e1.clone()),
        s_hat: Some(s.normalize()),
    })
}

/// The angle map `g(θ) = arccos(((π - θ) cos θ + sin θ) / π)`.
/// Inputs outside `[0, π]` are clamped.
pub fn g_theta(theta: f64) -> f64 {
    g_theta_flagged(theta).0
}

/// Like [`g_theta`], also reporting whether the input had to be clamped.
pub fn g_theta_flagged(theta: f64) -> (f64, bool) {
    let t = theta.clamp(0.0, PI);
    let arg = ((PI - t) * t.cos() + t.sin()) / PI;
    (arg.clamp(-1.0, 1.0).acos(), t != theta)
}

#[derive(Debug, Clone)]
pub struct AngleProfile {
    /// `[θ̄_0, ..., θ̄_d]`
    pub theta_bar: Vec<f64>,
    pub h_tilde: DVector<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// Predicted angles `θ̄_i = g(θ̄_{i-1})` and the vector
///
/// ```text
/// h̃ = 2^{-d} [ ∏_{i=0}^{d-1} (π-θ̄_i)/π · y
///            + Σ_{i=1}^{d-1} sin θ̄_i/π · ∏_{j=i+1}^{d-1} (π-θ̄_j)/π · ‖y‖ x̂ ]
/// ```
pub fn angle_profile(x: &DVector<f64>, y: &DVector<f64>, d: usize) -> Result<AngleProfile> {
    if x.len() != y.len() {
        return Err(Error::validation("x and y must have the same length"));
    }
    if x.norm() == 0.0 || y.norm() == 0.0 {
        return Err(Error::validation("angle profile needs nonzero x and y"));
    }
    if d == 0 {
        return Err(Error::validation("depth must be positive"));
    }
    let mut theta_bar = Vec::with_capacity(d + 1);
    theta_bar.push(linalg::angle_between(x, y));
    for i in 1..=d {
        theta_bar.push(g_theta(theta_bar[i - 1]));
    }

    let shrink = |t: f64| (PI - t) / PI;
    // tail[i] = ∏_{j=i}^{d-1} (π-θ̄_j)/π, tail[d] = 1
    let mut tail = vec![1.0; d + 1];
    for i in (0..d).rev() {
        tail[i] = tail[i + 1] * shrink(theta_bar[i]);
    }
    let sine_sum: f64 = (1..d).map(|i| theta_bar[i].sin() / PI * tail[i + 1]).sum();
    let scale = 0.5f64.powi(d as i32);
    let h_tilde = (y * tail[0] + x.normalize() * (sine_sum * y.norm())) * scale;
    Ok(AngleProfile { theta_bar, h_tilde, x: x.clone(), y: y.clone() })
}

/// `(2/π + 2√79)`, the Lipschitz constant of `(x, y) ↦ Q_{x,y}` on unit
/// vectors.
pub fn q_lipschitz_constant() -> f64 {
    2.0 / PI + 2.0 * 79f64.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLipGap {
    /// `‖Q_{x,y} - Q_{x_t,y_t}‖`
    pub gap: f64,
    /// `(2/π + 2√79) ε`
    pub bound: f64,
    /// `max(‖x_t - x‖, ‖y_t - y‖)`
    pub eps: f64,
}

/// Spectral gap between `Q_{x,y}` and `Q_{x_t,y_t}` for unit inputs, with
/// the Lipschitz bound computed from the perturbation size.
pub fn q_lipschitz_gap(
    x: &DVector<f64>,
    x_t: &DVector<f64>,
    y: &DVector<f64>,
    y_t: &DVector<f64>,
) -> Result<QLipGap> {
    for (name, v) in [("x", x), ("x_t", x_t), ("y", y), ("y_t", y_t)] {
        if (v.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::validation(format!("{name} is not unit norm")));
        }
    }
    let eps = (x_t - x).norm().max((y_t - y).norm());
    let a = q_matrix(x, y)?.q;
    let b = q_matrix(x_t, y_t)?.q;
    let gap = linalg::symmetric_spectral_norm(&(a - b));
    Ok(QLipGap { gap, bound: q_lipschitz_constant() * eps, eps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    /// `M` as a reflection across the bisector of `r̂, ŝ` inside their span:
    /// `M = 2 b̂b̂ᵀ - P_span`.
    fn swap_by_reflection(r: &DVector<f64>, s: &DVector<f64>) -> DMatrix<f64> {
        let r = r.normalize();
        let s = s.normalize();
        let b = (&r + &s).normalize();
        let basis = DMatrix::from_columns(&[r.clone(), s.clone()]);
        let gram = basis.transpose() * &basis;
        let proj = &basis * gram.try_inverse().unwrap() * basis.transpose();
        &b * b.transpose() * 2.0 - proj
    }

    #[test]
    fn identical_vectors_give_half_identity() {
        let q = q_matrix(&e(3, 0), &e(3, 0)).unwrap();
        assert_eq!(q.theta, 0.0);
        assert_eq!(q.q, DMatrix::identity(3, 3) * 0.5);
    }

    #[test]
    fn orthogonal_pair_hand_value() {
        let q = q_matrix(&e(2, 0), &e(2, 1)).unwrap();
        let c = 1.0 / (2.0 * PI);
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, c, c, 0.25]);
        assert_relative_eq!(q.q, expected, epsilon = 1e-15);
    }

    #[test]
    fn swap_matches_reflection_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = rng::gaussian_vector(&mut rng, 6);
            let s = rng::gaussian_vector(&mut rng, 6);
            let frame = SwapFrame::new(&r, &s).unwrap();
            let m = frame.swap_matrix();
            assert_relative_eq!(m, swap_by_reflection(&r, &s), epsilon = 1e-10);
            assert_relative_eq!(&m * r.normalize(), s.normalize(), epsilon = 1e-12);
            let v = rng::gaussian_vector(&mut rng, 6);
            assert_relative_eq!(frame.swap_apply(&v), &m * &v, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_matrix() {
        let q = q_matrix(&DVector::zeros(3), &e(3, 1)).unwrap();
        assert!(q.q.iter().all(|&v| v == 0.0));
        assert!(q.r_hat.is_none());
        assert!(q.s_hat.is_some());
    }

    #[test]
    fn antipodal_pair() {
        let q = q_matrix(&e(3, 0), &(-e(3, 0))).unwrap();
        assert_relative_eq!(q.theta, PI);
        assert!(q.q.iter().all(|&v| v.abs() < 1e-16));
    }

    #[test]
    fn eigenvalues_on_span() {
        let r = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let s = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let q = q_matrix(&r, &s).unwrap();
        let th = PI / 4.0;
        let mut eig: Vec<f64> = q.q.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let lo = (PI - th - th.sin()) / (2.0 * PI);
        let mid = (PI - th) / (2.0 * PI);
        let hi = (PI - th + th.sin()) / (2.0 * PI);
        assert_relative_eq!(eig[0], lo, epsilon = 1e-12);
        assert_relative_eq!(eig[1], mid, epsilon = 1e-12);
        assert_relative_eq!(eig[2], hi, epsilon = 1e-12);
    }

    #[test]
    fn g_special_values() {
        assert_eq!(g_theta(0.0), 0.0);
        assert_relative_eq!(g_theta(PI), PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(g_theta(PI / 2.0), (1.0 / PI).acos(), epsilon = 1e-15);
        assert_relative_eq!(g_theta(PI / 2.0), 1.246_850_219_862_916, epsilon = 1e-14);
        assert_eq!(g_theta_flagged(-0.1), (0.0, true));
        assert!(!g_theta_flagged(1.0).1);
    }

    #[test]
    fn g_is_one_lipschitz_and_contracting() {
        let grid: Vec<f64> = (0..=400).map(|i| PI * i as f64 / 400.0).collect();
        for &a in &grid {
            for &b in grid.iter().step_by(7) {
                assert!((g_theta(a) - g_theta(b)).abs() <= (a - b).abs() + 1e-10);
            }
        }
        for &t0 in grid.iter().skip(1) {
            let mut t = t0;
            for _ in 0..50 {
                let next = g_theta(t);
                assert!(next <= t + 1e-15);
                t = next;
            }
            assert!(t < t0);
        }
    }

    /// Literal transcription of the `h̃` formula with nested loops.
    fn h_tilde_oracle(x: &DVector<f64>, y: &DVector<f64>, d: usize) -> DVector<f64> {
        let mut th = vec![(x.dot(y) / (x.norm() * y.norm())).clamp(-1.0, 1.0).acos()];
        for i in 1..d {
            let t: f64 = th[i - 1];
            th.push((((PI - t) * t.cos() + t.sin()) / PI).clamp(-1.0, 1.0).acos());
        }
        let mut first = 1.0;
        for t in th.iter().take(d) {
            first *= (PI - t) / PI;
        }
        let mut sum = 0.0;
        for i in 1..d {
            let mut p = 1.0;
            for t in th.iter().take(d).skip(i + 1) {
                p *= (PI - t) / PI;
            }
            sum += th[i].sin() / PI * p;
        }
        let xhat = x / x.norm();
        (y * first + xhat * (sum * y.norm())) / 2f64.powi(d as i32)
    }

    #[test]
    fn h_tilde_reduces_to_scaled_y() {
        let y = DVector::from_vec(vec![0.5, -2.0, 1.0]);
        let p = angle_profile(&y, &y, 4).unwrap();
        assert_relative_eq!(p.h_tilde, &y / 16.0, epsilon = 1e-15);
        assert!(p.theta_bar.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn h_tilde_antipodal_single_layer() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let p = angle_profile(&(-&y), &y, 1).unwrap();
        assert_relative_eq!(p.theta_bar[0], PI);
        assert!(p.h_tilde.norm() < 1e-15);
    }

    #[test]
    fn h_tilde_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for d in 1..6 {
            let x = rng::gaussian_vector(&mut rng, 5);
            let y = rng::gaussian_vector(&mut rng, 5);
            let p = angle_profile(&x, &y, d).unwrap();
            assert_relative_eq!(p.h_tilde, h_tilde_oracle(&x, &y, d), epsilon = 1e-12);
        }
        // orthogonal pair in R^4, depth 2
        let x = rng::gaussian_vector(&mut rng, 4);
        let mut y = rng::gaussian_vector(&mut rng, 4);
        y -= &x * (x.dot(&y) / x.norm_squared());
        let p = angle_profile(&x, &y, 2).unwrap();
        assert_relative_eq!(p.theta_bar[0], PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.h_tilde, h_tilde_oracle(&x, &y, 2), epsilon = 1e-12);
    }

    #[test]
    fn angle_profile_rejects_zero() {
        let z = DVector::zeros(3);
        assert!(angle_profile(&z, &e(3, 0), 2).is_err());
    }

    #[test]
    fn q_lip_identity_and_validation() {
        let x = e(3, 0);
        let y = e(3, 1);
        let r = q_lipschitz_gap(&x, &x, &y, &y).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.bound, 0.0);
        assert!(q_lipschitz_gap(&(&x * 2.0), &x, &y, &y).is_err());
        assert_relative_eq!(q_lipschitz_constant() * 0.01, 0.1842, epsilon = 1e-4);
    }

    proptest! {
        #[test]
        fn q_symmetric_and_bounded(seed in 0u64..5000, n in 2usize..8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = rng::gaussian_vector(&mut rng, n);
            let s = rng::gaussian_vector(&mut rng, n);
            let q = q_matrix(&r, &s).unwrap().q;
            prop_assert_eq!(&q, &q.transpose());
            prop_assert!(linalg::symmetric_spectral_norm(&q) <= 0.5 + 1e-12);
        }

        #[test]
        fn q_scale_invariant(seed in 0u64..5000, c in 0.01f64..100.0, c2 in 0.01f64..100.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = rng::gaussian_vector(&mut rng, 4);
            let s = rng::gaussian_vector(&mut rng, 4);
            let a = q_matrix(&r, &s).unwrap().q;
            let b = q_matrix(&(&r * c), &(&s * c2)).unwrap().q;
            prop_assert!((a - b).amax() <= 1e-14);
        }
    }
}
