use super::{check_square, lu::Lu, Matrix};
use crate::error::Result;

/// Degree of the diagonal Padé approximant applied after scaling.
const PADE_DEGREE: usize = 6;
/// The scaled argument satisfies `‖A / 2^s‖₁ ≤ SCALED_NORM`.
const SCALED_NORM: f64 = 0.5;

fn norm1(a: &Matrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Number of squarings used for `a`.
pub fn expm_scaling(a: &Matrix) -> u32 {
    let nrm = norm1(a);
    if nrm <= SCALED_NORM {
        0
    } else {
        (nrm / SCALED_NORM).log2().ceil().max(0.0) as u32
    }
}

/// Matrix exponential by scaling and squaring around a [6/6] Padé core.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    check_square(a, "expm argument")?;
    let n = a.nrows();
    let s = expm_scaling(a);
    let x = a * 0.5f64.powi(s as i32);

    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    let q = PADE_DEGREE;
    let mut c = vec![1.0f64; q + 1];
    for k in 1..=q {
        c[k] = c[k - 1] * (q + 1 - k) as f64 / ((k * (2 * q + 1 - k)) as f64);
    }
    let id = Matrix::identity(n, n);
    let mut num = &id * c[0];
    let mut den = &id * c[0];
    let mut power = id.clone();
    for (k, ck) in c.iter().enumerate().skip(1) {
        power = &power * &x;
        num += &power * *ck;
        if k % 2 == 0 {
            den += &power * *ck;
        } else {
            den -= &power * *ck;
        }
    }
    let mut e = Lu::factor(&den)?.solve(&num)?;
    for _ in 0..s {
        e = &e * &e;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_row_major;
    use proptest::prelude::*;

    #[test]
    fn zero_gives_identity() {
        let e = expm(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e, Matrix::identity(3, 3));
    }

    #[test]
    fn scalar_exponential() {
        let e = expm(&Matrix::from_element(1, 1, -3.0)).unwrap();
        assert!((e[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((e[(0, 0)] - 0.049787068).abs() < 1e-9);
    }

    /// Classical RK4 with a tiny step as an independent reference.
    fn rk4(a: &Matrix, y0: &Matrix, t: f64, steps: usize) -> Matrix {
        let h = t / steps as f64;
        let mut y = y0.clone();
        for _ in 0..steps {
            let k1 = a * &y;
            let k2 = a * (&y + &k1 * (h / 2.0));
            let k3 = a * (&y + &k2 * (h / 2.0));
            let k4 = a * (&y + &k3 * h);
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        y
    }

    #[test]
    fn damped_oscillator_matches_ode() {
        let d = from_row_major(2, 2, &[0.0, 1.0, -3.0, -1.0]).unwrap();
        let e = expm(&d).unwrap();
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let reference = rk4(&d, &e1, 1.0, 20_000);
        assert!((e.column(0) - reference.column(0)).norm() < 1e-8);
    }

    #[test]
    fn scaling_bounds_argument() {
        let a = Matrix::from_element(2, 2, 40.0);
        let s = expm_scaling(&a);
        assert!(norm1(&a) / 2f64.powi(s as i32) <= SCALED_NORM);
    }

    proptest! {
        #[test]
        fn inverse_pair(entries in prop::collection::vec(-2.5f64..2.5, 16)) {
            let a = from_row_major(4, 4, &entries).unwrap();
            prop_assume!(a.norm() <= 10.0);
            let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
            prop_assert!((prod - Matrix::identity(4, 4)).norm() <= 1e-9);
        }
    }
}
