//! Small dense helpers: spectral norms and angles.

use nalgebra::{DMatrix, DVector};

/// Above this dimension spectral norms fall back to power iteration.
pub const EXACT_NORM_MAX_DIM: usize = 2000;

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 10_000;

/// Spectral norm of an arbitrary dense matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.nrows().max(a.ncols()) <= EXACT_NORM_MAX_DIM {
        a.singular_values().max()
    } else {
        let gram = if a.nrows() >= a.ncols() {
            a.transpose() * a
        } else {
            a * a.transpose()
        };
        power_iteration(&gram).sqrt()
    }
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.nrows() <= EXACT_NORM_MAX_DIM {
        a.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    } else {
        power_iteration(a)
    }
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    // deterministic start with weight on every coordinate
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - estimate).abs() <= POWER_TOL * norm;
        estimate = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    estimate
}

/// Angle between two vectors in `[0, π]`. Zero vectors give angle 0.
///
/// Uses `2 atan2(‖â - b̂‖, ‖â + b̂‖)`, which is exact for equal inputs where
/// `acos` of a rounded cosine is not.
pub fn angle_between(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let a_hat = a / na;
    let b_hat = b / nb;
    let diff = (&a_hat - &b_hat).norm();
    let sum = (&a_hat + &b_hat).norm();
    (2.0 * diff.atan2(sum)).clamp(0.0, std::f64::consts::PI)
}

pub fn relative_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    let denom = truth.norm();
    let diff = (estimate - truth).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile; sorts `values` in place.
pub fn quantile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(values[lo] + frac * (values[hi] - values[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn power_iteration_matches_eigen() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        assert_relative_eq!(power_iteration(&a), symmetric_spectral_norm(&a), epsilon = 1e-7);
    }

    #[test]
    fn spectral_norm_of_rank_one() {
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![0.0, 3.0, 4.0]);
        let a = &u * v.transpose();
        assert_relative_eq!(spectral_norm(&a), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn quantiles() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut v), Some(2.5));
        assert_eq!(quantile(&mut v, 0.0), Some(1.0));
        assert_eq!(quantile(&mut [], 0.5), None);
    }
}
