use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type usable inside a [`Graph`](crate::Graph).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// `c (+)= a · b` on row-major buffers, with optional transposition of
    /// either operand. `a` is `m×k` (or `k×m` when `a_t`), `b` is `k×n`
    /// (or `n×k` when `b_t`), `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // (row stride, column stride) of the logical rows×cols operand
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k, "gemm: lhs buffer too small");
                assert!(b.len() >= k * n, "gemm: rhs buffer too small");
                assert!(c.len() >= m * n, "gemm: output buffer too small");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above guarantee every index reachable
                // through the given strides lies inside the three slices, and
                // `c` is borrowed mutably so it cannot alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

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
        let mut out = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = x[i * cols + j];
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 5, 2);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (a_t, b_t) in [(false, false), (true, false), (false, true), (true, true)] {
            let lhs = if a_t { &at } else { &a };
            let rhs = if b_t { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            f64::gemm(m, k, n, lhs, a_t, rhs, b_t, &mut c, false);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_accumulates() {
        let mut c = vec![1.0f32; 4];
        f32::gemm(2, 1, 2, &[1.0, 2.0], false, &[3.0, 4.0], false, &mut c, true);
        assert_eq!(c, vec![4.0, 5.0, 7.0, 9.0]);
    }
}
