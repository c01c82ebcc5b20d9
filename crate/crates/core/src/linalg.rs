//! Small dense helpers for the 4×4 systems that show up in curve fitting and
//! sparse regression.

/// Gaussian elimination with partial pivoting. `None` if the matrix is
/// numerically singular.
pub fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    let scale = a.iter().flat_map(|r| r.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

pub fn solve4(a: [[f64; 4]; 4], b: [f64; 4]) -> Option<[f64; 4]> {
    solve(a, b)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from a fixed start vector.
pub fn max_eigenvalue_psd<const N: usize>(a: &[[f64; N]; N]) -> f64 {
    let mut x = [1.0 / (N as f64).sqrt(); N];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut y = [0.0; N];
        for i in 0..N {
            y[i] = (0..N).map(|j| a[i][j] * x[j]).sum();
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        for i in 0..N {
            x[i] = y[i] / norm;
        }
        if (next - lambda).abs() <= 1e-14 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let x = solve(a, [1.0, 2.0, 3.0]).unwrap();
        for (i, row) in a.iter().enumerate() {
            let lhs: f64 = row.iter().zip(&x).map(|(a, x)| a * x).sum();
            assert!((lhs - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        assert!(solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_none());
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let a = [[1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 2.0]];
        assert!((max_eigenvalue_psd(&a) - 5.0).abs() < 1e-9);
    }
}
