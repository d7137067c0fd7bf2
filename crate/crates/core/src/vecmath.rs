//! Small dense vector helpers. Everything operates on plain slices; callers
//! own the shapes. Accumulation order is fixed so results are reproducible
//! bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Vectors with a Euclidean norm below this are rejected by normalization.
pub const MIN_NORM: f64 = 1e-12;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// Unit vector in the direction of `v`, or an error when `v` is numerically zero.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = l2_norm(v);
    if norm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization(format!(
            "cannot normalize a vector with norm {norm} < {MIN_NORM}"
        )));
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Backward rule for u = v / ||v||: accumulates into `d_v` the pullback of `d_u`.
/// `unit` and `norm` must come from the forward pass.
pub fn l2_normalize_backward<T: Scalar>(unit: &[T], norm: T, d_u: &[T], d_v: &mut [T]) {
    let along = dot(d_u, unit);
    for i in 0..unit.len() {
        d_v[i] += (d_u[i] - along * unit[i]) / norm;
    }
}

/// In-place stable softmax: subtracts the max before exponentiation.
pub fn softmax_in_place<T: Scalar>(scores: &mut [T]) {
    debug_assert!(!scores.is_empty());
    let mut max = scores[0];
    for &s in scores.iter().skip(1) {
        if s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s = *s / sum;
    }
}

/// log(sum(exp(scores))) with max subtraction.
pub fn log_sum_exp<T: Scalar>(scores: &[T]) -> T {
    debug_assert!(!scores.is_empty());
    let mut max = scores[0];
    for &s in scores.iter().skip(1) {
        if s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for &s in scores.iter() {
        sum += (s - max).exp();
    }
    max + sum.ln()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    debug_assert!(!values.is_empty());
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four() {
        let u = l2_normalize(&[3.0f64, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent_within_fp() {
        let u = l2_normalize(&[0.3f64, -1.7, 2.2, 0.01]).unwrap();
        let uu = l2_normalize(&u).unwrap();
        for (a, b) in u.iter().zip(uu.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(l2_normalize(&[0.0f64, 0.0]).is_err());
        assert!(l2_normalize(&[1e-13f64, 0.0]).is_err());
    }

    #[test]
    fn softmax_handles_huge_scores() {
        let mut s = vec![1e4f64, 0.0];
        softmax_in_place(&mut s);
        assert!(s[0].is_finite() && s[1].is_finite());
        assert!((s[0] + s[1] - 1.0).abs() < 1e-12);
        assert!(s[0] > 1.0 - 1e-12);
    }

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        let mut s = vec![0.25f64; 4];
        softmax_in_place(&mut s);
        for &w in &s {
            assert_eq!(w, 0.25);
        }
    }

    #[test]
    fn argmax_tie_takes_lowest_index() {
        assert_eq!(argmax(&[1.0f64, 2.0, 2.0, 0.5]), 1);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let v = [0.8f64, -0.5, 1.9];
        let d_u = [0.3f64, 1.1, -0.7];
        let unit = l2_normalize(&v).unwrap();
        let mut d_v = vec![0.0; 3];
        l2_normalize_backward(&unit, l2_norm(&v), &d_u, &mut d_v);
        let f = |v: &[f64]| -> f64 { dot(&l2_normalize(v).unwrap(), &d_u) };
        let h = 1e-6;
        for i in 0..3 {
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[i] += h;
            vm[i] -= h;
            let fd = (f(&vp) - f(&vm)) / (2.0 * h);
            assert!((fd - d_v[i]).abs() < 1e-8, "coord {i}: fd {fd} vs {x}", x = d_v[i]);
        }
    }
}
