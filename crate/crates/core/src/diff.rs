//! Finite differences on a uniform grid with gaps and breakpoints.
//!
//! Stencils never read a point marked invalid and never straddle a
//! breakpoint. Each derivative carries the order of the stencil used:
//! 2 for central or one-sided three-point, 1 for two-point, 0 when no
//! stencil is available (value `NaN`).

use std::ops::{Add, Mul, Sub};

/// Derivative samples together with the accuracy order used at each point.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative<T> {
    pub values: Vec<T>,
    pub order: Vec<u8>,
}

pub trait Sample: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn nan() -> Self;
}

impl Sample for f64 {
    fn nan() -> Self {
        f64::NAN
    }
}

impl Sample for crate::C64 {
    fn nan() -> Self {
        crate::C64::new(f64::NAN, f64::NAN)
    }
}

/// Differentiate `x` (spacing `dt`).
///
/// `valid[i] == false` excludes sample i. `breaks` lists indices k such
/// that no stencil may connect a point ≤ k with a point > k.
pub fn derivative<T: Sample>(x: &[T], dt: f64, valid: Option<&[bool]>, breaks: &[usize]) -> Derivative<T> {
    let n = x.len();
    let ok = |i: usize| valid.is_none_or(|v| v[i]);
    // segment id of each index
    let mut seg = vec![0usize; n];
    let mut id = 0;
    for i in 0..n {
        seg[i] = id;
        if breaks.contains(&i) {
            id += 1;
        }
    }
    let usable = |i: usize, j: isize| -> bool {
        if j < 0 || j as usize >= n {
            return false;
        }
        let j = j as usize;
        seg[j] == seg[i] && ok(j)
    };

    let mut values = Vec::with_capacity(n);
    let mut order = Vec::with_capacity(n);
    let h2 = 2.0 * dt;
    for i in 0..n {
        if !ok(i) {
            values.push(T::nan());
            order.push(0);
            continue;
        }
        let ii = i as isize;
        let (v, o) = if usable(i, ii - 1) && usable(i, ii + 1) {
            ((x[i + 1] - x[i - 1]) * (1.0 / h2), 2)
        } else if usable(i, ii + 1) && usable(i, ii + 2) {
            ((x[i + 1] * 4.0 - x[i] * 3.0 - x[i + 2]) * (1.0 / h2), 2)
        } else if usable(i, ii - 1) && usable(i, ii - 2) {
            ((x[i] * 3.0 - x[i - 1] * 4.0 + x[i - 2]) * (1.0 / h2), 2)
        } else if usable(i, ii + 1) {
            ((x[i + 1] - x[i]) * (1.0 / dt), 1)
        } else if usable(i, ii - 1) {
            ((x[i] - x[i - 1]) * (1.0 / dt), 1)
        } else {
            (T::nan(), 0)
        };
        values.push(v);
        order.push(o);
    }
    Derivative { values, order }
}
