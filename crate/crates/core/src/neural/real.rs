use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point scalar used by the network: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + serde::Serialize
    + serde::de::DeserializeOwned
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    #[inline(always)]
    fn relu(self) -> Self {
        if self > Self::ZERO { self } else { Self::ZERO }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// `out = W x + b` for row-major `W` (`rows x cols`).
pub(crate) fn affine<T: Real>(w: &[T], b: Option<&[T]>, x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut s = b.map_or(T::ZERO, |b| b[r]);
        for (wv, xv) in row.iter().zip(x) {
            s += *wv * *xv;
        }
        *o = s;
    }
}

/// `dw += dy x^T`, `dx += W^T dy`.
pub(crate) fn affine_backward<T: Real>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], dx: Option<&mut [T]>) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == T::ZERO {
            continue;
        }
        for (d, xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += g * *xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == T::ZERO {
                continue;
            }
            for (d, wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *d += g * *wv;
            }
        }
    }
}
