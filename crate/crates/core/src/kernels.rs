//! Inner loops shared by the tensor ops. All matrices are row-major.

use crate::tensor::Real;

/// Dot product with eight independent accumulators so the loop vectorizes.
/// Summation order is fixed, so results are reproducible.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out[n×k] += a[n×d] · b[d×k]`
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, d: usize, k: usize) {
    for i in 0..n {
        let orow = &mut out[i * k..(i + 1) * k];
        let arow = &a[i * d..(i + 1) * d];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != T::zero() {
                axpy(aip, &b[p * k..(p + 1) * k], orow);
            }
        }
    }
}

/// `out[n×k] += a[n×d] · b[k×d]ᵀ`
pub fn matmul_abt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, d: usize, k: usize) {
    for i in 0..n {
        let arow = &a[i * d..(i + 1) * d];
        for j in 0..k {
            out[i * k + j] = out[i * k + j] + dot(arow, &b[j * d..(j + 1) * d]);
        }
    }
}

/// `out[d×k] += a[n×d]ᵀ · g[n×k]`
pub fn matmul_atb_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], n: usize, d: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * k..(i + 1) * k];
        for p in 0..d {
            let aip = a[i * d + p];
            if aip != T::zero() {
                axpy(aip, grow, &mut out[p * k..(p + 1) * k]);
            }
        }
    }
}
