//! Minimal row-major matrix helpers shared by the hand-rolled networks.

/// Row-major matrix view helpers over flat slices.
///
/// c[m x n] += a[m x k] * b[k x n]
pub(crate) fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

/// c[k x n] += a^T[k x m] * b[m x n] where a is m x k.
pub(crate) fn matmul_at_b_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[m x k] += a[m x n] * b^T[n x k] where b is k x n.
pub(crate) fn matmul_a_bt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        for p in 0..k {
            let arow = &a[i * n..(i + 1) * n];
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            c[i * k + p] += acc;
        }
    }
}

/// Row-wise softmax in place over an m x n matrix.
pub(crate) fn softmax_rows(x: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        let row = &mut x[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward of row-wise softmax: given probabilities p and upstream dp,
/// writes ds = p * (dp - dot(dp, p)) row by row.
pub(crate) fn softmax_rows_backward(p: &[f64], dp: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut ds = vec![0.0; m * n];
    for i in 0..m {
        let prow = &p[i * n..(i + 1) * n];
        let dprow = &dp[i * n..(i + 1) * n];
        let dot: f64 = prow.iter().zip(dprow).map(|(a, b)| a * b).sum();
        for j in 0..n {
            ds[i * n + j] = prow[j] * (dprow[j] - dot);
        }
    }
    ds
}

/// y = x / ||x||. Returns (y, norm).
pub(crate) fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (x.iter().map(|v| v / n).collect(), n)
}

/// Backward of y = x / ||x||: dx = (dy - y * dot(y, dy)) / norm.
pub(crate) fn l2_normalize_backward(y: &[f64], dy: &[f64], norm: f64) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, dyi)| (dyi - yi * dot) / norm).collect()
}
