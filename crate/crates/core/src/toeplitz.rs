//! FFT-backed Toeplitz products.
//!
//! The memory integrals of the solver are all lower-triangular Toeplitz
//! matrix–vector products (discrete causal convolutions). A Toeplitz matrix
//! of order n embeds in a circulant of order ≥ 2n − 1, whose product is a
//! pointwise multiply in Fourier space.

use rustfft::FftPlanner;

use crate::C64;

/// Causal convolution `out[n] = Σ_{k=0}^{n} a[k]·b[n−k]` for `n < len`.
pub fn causal_convolve(a: &[C64], b: &[C64]) -> Vec<C64> {
    let len = a.len().min(b.len());
    if len == 0 {
        return Vec::new();
    }
    if len <= 32 {
        return causal_convolve_direct(&a[..len], &b[..len]);
    }
    let size = (2 * len).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut fa = vec![C64::new(0.0, 0.0); size];
    let mut fb = vec![C64::new(0.0, 0.0); size];
    fa[..len].copy_from_slice(&a[..len]);
    fb[..len].copy_from_slice(&b[..len]);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.truncate(len);
    for x in &mut fa {
        *x *= scale;
    }
    fa
}

/// O(n²) reference for [`causal_convolve`].
pub fn causal_convolve_direct(a: &[C64], b: &[C64]) -> Vec<C64> {
    let len = a.len().min(b.len());
    (0..len)
        .map(|n| (0..=n).map(|k| a[k] * b[n - k]).sum())
        .collect()
}

/// Product `T x` for the Toeplitz matrix `T[i][j] = t(i − j)`, with
/// `col[k] = t(k)` (first column) and `row[k] = t(−k)` (first row,
/// `row[0]` ignored in favour of `col[0]`).
pub fn toeplitz_matvec(col: &[C64], row: &[C64], x: &[C64]) -> Vec<C64> {
    let n = x.len();
    assert!(col.len() >= n && row.len() >= n, "toeplitz generator shorter than vector");
    if n == 0 {
        return Vec::new();
    }
    let size = (2 * n).next_power_of_two();
    // Circulant generator: c = [t(0), t(1), …, t(n−1), 0…, t(−(n−1)), …, t(−1)].
    let mut c = vec![C64::new(0.0, 0.0); size];
    c[..n].copy_from_slice(&col[..n]);
    for k in 1..n {
        c[size - k] = row[k];
    }
    let mut xs = vec![C64::new(0.0, 0.0); size];
    xs[..n].copy_from_slice(x);

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fwd.process(&mut c);
    fwd.process(&mut xs);
    for (a, b) in xs.iter_mut().zip(&c) {
        *a *= b;
    }
    inv.process(&mut xs);
    let scale = 1.0 / size as f64;
    xs.truncate(n);
    for v in &mut xs {
        *v *= scale;
    }
    xs
}
