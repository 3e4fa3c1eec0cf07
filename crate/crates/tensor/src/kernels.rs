//! Dense matrix kernels. All reductions run in a fixed order, so results are
//! bit-stable for identical inputs.

/// `c[m,n] += a[m,k] * b[k,n]`.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    let mut rows = c.chunks_exact_mut(n).enumerate();
    // Four output rows per pass so each loaded row of `b` feeds four FMAs.
    loop {
        let Some((i0, c0)) = rows.next() else { break };
        let Some((_, c1)) = rows.next() else {
            row_kernel(&a[i0 * k..(i0 + 1) * k], b, n, c0);
            break;
        };
        let Some((_, c2)) = rows.next() else {
            row_kernel(&a[i0 * k..(i0 + 1) * k], b, n, c0);
            row_kernel(&a[(i0 + 1) * k..(i0 + 2) * k], b, n, c1);
            break;
        };
        let Some((_, c3)) = rows.next() else {
            row_kernel(&a[i0 * k..(i0 + 1) * k], b, n, c0);
            row_kernel(&a[(i0 + 1) * k..(i0 + 2) * k], b, n, c1);
            row_kernel(&a[(i0 + 2) * k..(i0 + 3) * k], b, n, c2);
            break;
        };
        let a0 = &a[i0 * k..(i0 + 1) * k];
        let a1 = &a[(i0 + 1) * k..(i0 + 2) * k];
        let a2 = &a[(i0 + 2) * k..(i0 + 3) * k];
        let a3 = &a[(i0 + 3) * k..(i0 + 4) * k];
        for (p, brow) in b.chunks_exact(n).enumerate() {
            let (x0, x1, x2, x3) = (a0[p], a1[p], a2[p], a3[p]);
            for ((((o0, o1), o2), o3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(brow)
            {
                *o0 += x0 * bv;
                *o1 += x1 * bv;
                *o2 += x2 * bv;
                *o3 += x3 * bv;
            }
        }
    }
}

fn row_kernel(arow: &[f64], b: &[f64], n: usize, crow: &mut [f64]) {
    for (&x, brow) in arow.iter().zip(b.chunks_exact(n)) {
        for (o, &bv) in crow.iter_mut().zip(brow) {
            *o += x * bv;
        }
    }
}

pub fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let src = &a[i * cols..(i + 1) * cols];
        for (j, &v) in src.iter().enumerate() {
            out[j * rows + i] = v;
        }
    }
    out
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let at = transpose(m, k, a);
    gemm_nn(k, m, n, &at, b, c);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn all_layouts_match_naive_for_ragged_sizes() {
        let mut rng = SplitMix64::new(3);
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 2), (7, 4, 9), (5, 6, 8), (9, 3, 1)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let want = naive(m, k, n, &a, &b);
            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, &a, &b, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            let bt = transpose(k, n, &b);
            let mut c = vec![0.0; m * n];
            gemm_nt(m, k, n, &a, &bt, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            let at = transpose(m, k, &a);
            let mut c = vec![0.0; m * n];
            gemm_tn(k, m, n, &at, &b, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
