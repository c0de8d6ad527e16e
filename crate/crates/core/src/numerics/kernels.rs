//! Dense row-major kernels shared by the autodiff graph and the
//! cache-based inference path.

use super::Float;
use crate::parallel;

/// Below this many multiply-adds a product runs as a single call.
const SPLIT_WORK: usize = 1 << 18;
/// Below this many multiply-adds a product skips operand packing.
const SMALL_WORK: usize = 1 << 15;
const ROW_BLOCK: usize = 64;

/// `C (+)= op(A)·op(B)` with `op(A)` of shape `m×k` and `op(B)` of shape `k×n`.
///
/// `ta`: `a` is stored as `k×m`. `tb`: `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    if m * k * n < SMALL_WORK {
        small_gemm(m, k, n, a, ta, b, tb, c, accumulate);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let block = |row0: usize, rows: usize, out: &mut [T]| {
        let a_off = if ta { row0 } else { row0 * k };
        // SAFETY: the asserts above bound every view; row0 + rows <= m.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                T::one(),
                a.as_ptr().add(a_off),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                out.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    };
    if m * k * n < SPLIT_WORK || m <= ROW_BLOCK {
        block(0, m, c);
    } else {
        parallel::for_each_chunk_mut(c, ROW_BLOCK * n, |i, out| {
            block(i * ROW_BLOCK, out.len() / n, out)
        });
    }
}

#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
    for (i, row) in c.chunks_exact_mut(n).enumerate() {
        if !accumulate {
            row.iter_mut().for_each(|v| *v = T::zero());
        }
        if tb {
            for (j, out) in row.iter_mut().enumerate() {
                let br = &b[j * k..(j + 1) * k];
                let s = if ta {
                    (0..k).map(|p| a[p * m + i] * br[p]).sum::<T>()
                } else {
                    dot(&a[i * k..(i + 1) * k], br)
                };
                *out += s;
            }
        } else {
            for p in 0..k {
                let x = at(i, p);
                for (o, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
    }
}

/// Batched `gemm`: `count` independent products over consecutive slices.
#[allow(clippy::too_many_arguments)]
pub fn bmm<T: Float>(
    count: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), count * m * k, "bmm: lhs length");
    assert_eq!(b.len(), count * k * n, "bmm: rhs length");
    assert_eq!(c.len(), count * m * n, "bmm: output length");
    if count == 0 || m * n == 0 {
        return;
    }
    parallel::for_each_chunk_mut(c, m * n, |i, out| {
        gemm(
            m,
            k,
            n,
            &a[i * m * k..(i + 1) * m * k],
            ta,
            &b[i * k * n..(i + 1) * k * n],
            tb,
            out,
            accumulate,
        )
    });
}

/// Numerically stable softmax of each `cols`-wide row, in place.
pub fn softmax_rows<T: Float>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        softmax_in_place(row);
    }
}

pub fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// `log(sum(exp(row)))`, max-shifted.
pub fn log_sum_exp<T: Float>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Row-wise layer normalization: `out = (x - mean)/sqrt(var + eps) * gain + bias`.
///
/// When given, `xhat` receives the normalized values and `rstd` one
/// reciprocal standard deviation per row.
pub fn layer_norm_rows<T: Float>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    eps: T,
    out: &mut [T],
    mut xhat: Option<&mut [T]>,
    mut rstd: Option<&mut [T]>,
) {
    let d = gain.len();
    let n = T::of(d as f64);
    for (r, (xr, or)) in x.chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        for j in 0..d {
            let h = (xr[j] - mean) * rs;
            or[j] = h * gain[j] + bias[j];
            if let Some(xh) = xhat.as_deref_mut() {
                xh[r * d + j] = h;
            }
        }
        if let Some(rsd) = rstd.as_deref_mut() {
            rsd[r] = rs;
        }
    }
}

pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        // big enough to take the row-split path
        let (m, k, n) = (150, 70, 40);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, &mut c, false);
                assert_eq!(c, want, "ta={ta} tb={tb}");
                gemm(m, k, n, aa, ta, bb, tb, &mut c, true);
                assert!(c.iter().zip(&want).all(|(x, y)| *x == 2.0 * y));
            }
        }
    }

    #[test]
    fn split_and_sequential_agree_bitwise() {
        let (m, k, n) = (300, 64, 64);
        let a: Vec<f32> = (0..m * k).map(|i| ((i as f32) * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i as f32) * 0.11).cos()).collect();
        let mut whole = vec![0.0f32; m * n];
        unsafe {
            f32::gemm_raw(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                whole.as_mut_ptr(), n as isize, 1,
            )
        };
        let mut split = vec![0.0f32; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut split, false);
        assert_eq!(whole, split);
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let x = [3.0f64; 4];
        let mut out = [9.0; 4];
        layer_norm_rows(&x, &[1.0; 4], &[0.5; 4], 1e-5, &mut out, None, None);
        assert_eq!(out, [0.5; 4]);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
    }
}
