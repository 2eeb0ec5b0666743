//! Fixed Fourier embedding of the flow step s ∈ [0,1].
//!
//! Component pairs are `[sin(2π·2ᵏ·s), cos(2π·2ᵏ·s)]` for k = 0..out_dim/2−1:
//! a fixed, strictly increasing frequency ladder.

use std::f64::consts::TAU;

use crate::error::CoreError;
use crate::numcore::Matrix;

/// Embed one flow step. `out_dim` must be even and ≥ 2; `s` must lie in [0,1].
pub fn fourier_embed(s: f64, out_dim: usize) -> Result<Vec<f64>, CoreError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(CoreError::InvalidConfig(format!("flow step s={s} outside [0,1]")));
    }
    if out_dim < 2 || out_dim % 2 != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "fourier embedding dimension {out_dim} must be even and >= 2"
        )));
    }
    let mut out = Vec::with_capacity(out_dim);
    for k in 0..out_dim / 2 {
        let freq = (1u64 << k) as f64;
        let arg = TAU * freq * s;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Embed a batch of flow steps as rows of a matrix.
pub fn fourier_rows(svals: &[f64], out_dim: usize) -> Result<Matrix, CoreError> {
    let mut m = Matrix::zeros(svals.len(), out_dim);
    for (i, &s) in svals.iter().enumerate() {
        let row = fourier_embed(s, out_dim)?;
        m.row_mut(i).copy_from_slice(&row);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn s_zero_alternates_zero_one() {
        assert_eq!(fourier_embed(0.0, 4).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn s_half_hits_exact_trig_values() {
        let e = fourier_embed(0.5, 4).unwrap();
        // (sin pi, cos pi, sin 2pi, cos 2pi) = (0, -1, 0, 1)
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[2], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[3], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn s_quarter_two_dims() {
        let e = fourier_embed(0.25, 2).unwrap();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn components_bounded_by_one() {
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            assert!(fourier_embed(s, 16).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn out_of_range_s_rejected() {
        assert!(fourier_embed(-0.01, 4).is_err());
        assert!(fourier_embed(1.01, 4).is_err());
        assert!(fourier_embed(f64::NAN, 4).is_err());
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(fourier_embed(0.5, 3).is_err());
    }
}
