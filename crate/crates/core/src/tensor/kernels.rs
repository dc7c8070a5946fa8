// Row-major matrix kernels. Every output element is accumulated in a fixed
// order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::Scalar;

const PAR_THRESHOLD: usize = 1 << 18;

/// `out[n×p] = a[n×k] · b[k×p]`
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, p: usize) {
    if n == 0 || p == 0 {
        return;
    }
    let row = |(i, out_row): (usize, &mut [T])| {
        out_row.iter_mut().for_each(|v| *v = T::zero());
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * p..(l + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    };
    if n * k * p >= PAR_THRESHOLD {
        out.par_chunks_mut(p).enumerate().for_each(row);
    } else {
        out.chunks_mut(p).enumerate().for_each(row);
    }
}

/// `out[n×p] = a[n×k] · b[p×k]ᵀ`
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, p: usize) {
    if n == 0 || p == 0 {
        return;
    }
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    };
    if n * k * p >= PAR_THRESHOLD {
        out.par_chunks_mut(p).enumerate().for_each(row);
    } else {
        out.chunks_mut(p).enumerate().for_each(row);
    }
}

/// `out[k×p] = a[n×k]ᵀ · b[n×p]`
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, p: usize) {
    if k == 0 || p == 0 {
        return;
    }
    let row = |(l, out_row): (usize, &mut [T])| {
        out_row.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..n {
            let av = a[i * k + l];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[i * p..(i + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    };
    if n * k * p >= PAR_THRESHOLD {
        out.par_chunks_mut(p).enumerate().for_each(row);
    } else {
        out.chunks_mut(p).enumerate().for_each(row);
    }
}

/// Dot product with eight independent lanes, reduced in a fixed order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let tail_a = chunks_a.remainder();
    let tail_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in tail_a.iter().zip(tail_b) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            for j in 0..p {
                for l in 0..k {
                    out[i * p + j] += a[i * k + l] * b[l * p + j];
                }
            }
        }
        out
    }

    fn transpose(m: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = m[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        let (n, k, p) = (5, 19, 7);
        let a: Vec<f64> = (0..n * k).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let b: Vec<f64> = (0..k * p).map(|i| ((i * 13 % 7) as f64) * 0.5).collect();
        let want = naive(&a, &b, n, k, p);

        let mut out = vec![0.0; n * p];
        matmul_nn(&a, &b, &mut out, n, k, p);
        assert_eq!(out, want);

        let bt = transpose(&b, k, p);
        matmul_nt(&a, &bt, &mut out, n, k, p);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9);
        }

        let at = transpose(&a, n, k);
        matmul_tn(&at, &b, &mut out, k, n, p);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
