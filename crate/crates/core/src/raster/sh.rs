//! Real spherical harmonics up to degree 3, in the sign convention used by
//! standard 3DGS checkpoints (so `f_rest_*` coefficients interoperate).

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a given degree.
pub const fn num_coeffs(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// Basis values at a unit direction.
pub fn sh_basis(dir: [f64; 3]) -> [f64; 16] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial w.r.t. (x, y, z), treating the
/// components as independent.
pub fn sh_basis_grad(dir: [f64; 3]) -> [[f64; 3]; 16] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (a, b, c, d, e) = (SH_C2[0], SH_C2[1], SH_C2[2], SH_C2[3], SH_C2[4]);
    let k = SH_C3;
    [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [a * y, a * x, 0.0],
        [0.0, b * z, b * y],
        [-2.0 * c * x, -2.0 * c * y, 4.0 * c * z],
        [d * z, 0.0, d * x],
        [2.0 * e * x, -2.0 * e * y, 0.0],
        [6.0 * k[0] * x * y, k[0] * (3.0 * xx - 3.0 * yy), 0.0],
        [k[1] * y * z, k[1] * x * z, k[1] * x * y],
        [-2.0 * k[2] * x * y, k[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * k[2] * y * z],
        [-6.0 * k[3] * x * z, -6.0 * k[3] * y * z, k[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [k[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * k[4] * x * y, 8.0 * k[4] * x * z],
        [2.0 * k[5] * x * z, -2.0 * k[5] * y * z, k[5] * (xx - yy)],
        [k[6] * (3.0 * xx - 3.0 * yy), -6.0 * k[6] * x * y, 0.0],
    ]
}

/// Evaluate one channel: `max(Σ Y_k c_k + 0.5, 0)` over the first
/// `(degree + 1)²` coefficients.
pub fn eval_sh(coeffs: &[f64], degree: u8, view_dir: [f64; 3]) -> Result<f64> {
    if degree > 3 {
        return Err(Error::InvalidArgument(format!("SH degree {degree} outside 0..=3")));
    }
    let n = num_coeffs(degree);
    if coeffs.len() < n {
        return Err(Error::InvalidArgument(format!(
            "degree {degree} needs {n} coefficients, got {}",
            coeffs.len()
        )));
    }
    let basis = sh_basis(view_dir);
    let raw: f64 = basis[..n].iter().zip(coeffs).map(|(y, c)| y * c).sum();
    Ok((raw + 0.5).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn normalize(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|c| c / n)
    }

    #[test]
    fn zero_dc_gives_offset() {
        let v = eval_sh(&[0.0], 0, [0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        let v = eval_sh(&[1.0], 0, [0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, 0.5 + 0.282_094_79, epsilon = 1e-8);
    }

    #[test]
    fn degree_zero_is_view_independent() {
        let a = eval_sh(&[0.7], 0, normalize([1.0, 2.0, -0.5])).unwrap();
        let b = eval_sh(&[0.7], 0, normalize([-3.0, 0.1, 0.2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dc_only_degree_three_matches_degree_zero() {
        let mut coeffs = [0.0; 16];
        coeffs[0] = -0.4;
        for d in [[1.0, 0.0, 0.0], normalize([0.3, -0.8, 0.5]), normalize([-1.0, -1.0, -1.0])] {
            assert_abs_diff_eq!(
                eval_sh(&coeffs, 3, d).unwrap(),
                eval_sh(&coeffs[..1], 0, d).unwrap(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn rejects_bad_degree() {
        assert!(eval_sh(&[0.0; 25], 4, [0.0, 0.0, 1.0]).is_err());
        assert!(eval_sh(&[0.0; 3], 1, [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn negative_values_clamp_at_zero() {
        assert_eq!(eval_sh(&[-10.0], 0, [0.0, 1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        // Fibonacci-sphere quadrature of ∫ Y_i Y_j dΩ
        let n = 20000;
        let mut gram = [[0.0f64; 16]; 16];
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let y = sh_basis([r * phi.cos(), r * phi.sin(), z]);
            for a in 0..16 {
                for b in 0..16 {
                    gram[a][b] += y[a] * y[b];
                }
            }
        }
        let w = 4.0 * std::f64::consts::PI / n as f64;
        for a in 0..16 {
            for b in 0..16 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[a][b] * w, expected, epsilon = 2e-3);
            }
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let p = [0.31, -0.52, 0.77];
        let g = sh_basis_grad(p);
        let h = 1e-6;
        for axis in 0..3 {
            let mut plus = p;
            let mut minus = p;
            plus[axis] += h;
            minus[axis] -= h;
            let (bp, bm) = (sh_basis(plus), sh_basis(minus));
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert_abs_diff_eq!(g[k][axis], fd, epsilon = 1e-7);
            }
        }
    }
}
