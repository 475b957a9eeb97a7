//! Matrix exponential by scaling and squaring with diagonal Padé
//! approximants of degree 3, 5, 7, 9 or 13 (Higham 2005 selection).

use super::Matrix;

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_230e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Pade approximant of degree <= 9 from its coefficient table.
fn pade_low(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    // powers A^0, A^2, A^4, ...
    let mut even_powers = vec![id.clone()];
    for k in 1..b.len().div_ceil(2) {
        let next = &even_powers[k - 1] * &a2;
        even_powers.push(next);
    }
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, coeff) in b.iter().enumerate() {
        let p = &even_powers[k / 2];
        if k % 2 == 0 {
            v += p * *coeff;
        } else {
            u_inner += p * *coeff;
        }
    }
    (a * u_inner, v)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let b = &B13;
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

fn solve_pade(u: Matrix, v: Matrix) -> Matrix {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular for scaled arguments")
}

/// `exp(M)` for a square matrix.
///
/// # Panics
/// If `m` is not square.
pub fn expm(m: &Matrix) -> Matrix {
    assert_eq!(m.nrows(), m.ncols(), "expm needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm = one_norm(m);
    for (degree, theta) in THETA {
        if norm <= theta {
            let b: &[f64] = match degree {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(m, b);
            return solve_pade(u, v);
        }
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m * 2f64.powi(-s);
    let (u, v) = pade13(&scaled);
    let mut r = solve_pade(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{max_abs, max_abs_diff, Vector};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_gives_identity() {
        let e = expm(&Matrix::zeros(2, 2));
        assert_eq!(e, Matrix::identity(2, 2));
    }

    #[test]
    fn nilpotent_truncates() {
        let n = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let expected = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(max_abs_diff(&expm(&n), &expected) < 1e-15);
    }

    #[test]
    fn diagonal_matches_scalar_exponential() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        let e = expm(&d);
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-12 * 1f64.exp());
        assert!((e[(1, 1)] - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn rotation_generator() {
        // exp([[0, -w], [w, 0]]) = rotation by w
        for &w in &[0.01, 0.7, 3.0, 9.5] {
            let g = Matrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
            let r = Matrix::from_row_slice(2, 2, &[w.cos(), -w.sin(), w.sin(), w.cos()]);
            assert!(max_abs_diff(&expm(&g), &r) < 1e-12, "w = {w}");
        }
    }

    #[test]
    fn diagonalizable_matches_eigen_route() {
        // oracle: V exp(D) V⁻¹ with an explicit eigenbasis
        let v = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 3.0]);
        let d = Vector::from_vec(vec![-4.0, 0.5, 2.5]);
        let vinv = v.clone().try_inverse().unwrap();
        let m = &v * Matrix::from_diagonal(&d) * &vinv;
        let oracle = &v * Matrix::from_diagonal(&d.map(f64::exp)) * &vinv;
        let e = expm(&m);
        assert!(max_abs_diff(&e, &oracle) / max_abs(&oracle) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn commuting_sum_factorizes(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = StdRng::seed_from_u64(seed);
            let base = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let id = Matrix::identity(n, n);
            // A and B are polynomials in the same matrix, so they commute
            let a = &id * c[0] + &base * c[1];
            let b = &base * &base * c[2] + &base * c[3];
            let lhs = expm(&(&a + &b));
            let rhs = expm(&a) * expm(&b);
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-9 * max_abs(&lhs).max(1.0));
        }
    }
}
