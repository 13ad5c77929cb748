//! Lane batches: W values processed element-wise, one lane per cell or face.
//!
//! [`Number`] is the arithmetic interface every kernel is written against.
//! [`Lanes`] is the production type. [`Tally`] performs the same arithmetic
//! and records each operation in the thread-local [`counters`](crate::counters).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::counters;

/// Element-wise arithmetic over a fixed number of lanes.
pub trait Number:
    Copy
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
{
    const LANES: usize;

    fn splat(v: f64) -> Self;

    #[inline(always)]
    fn zero() -> Self {
        Self::splat(0.0)
    }

    /// `self * s` for a scalar matrix entry.
    fn scale(self, s: f64) -> Self;

    /// `acc + self * s`, accounted as one fused multiply-add.
    fn fma_scalar(self, s: f64, acc: Self) -> Self;

    /// `acc + self * b`, accounted as one fused multiply-add.
    fn fma(self, b: Self, acc: Self) -> Self;

    fn abs(self) -> Self;

    fn lane(&self, i: usize) -> f64;

    fn set_lane(&mut self, i: usize, v: f64);

    /// Reads `LANES` consecutive values.
    fn load(src: &[f64]) -> Self;

    /// Writes `LANES` consecutive values.
    fn store(self, dst: &mut [f64]);

    fn from_fn(mut f: impl FnMut(usize) -> f64) -> Self {
        let mut out = Self::zero();
        for l in 0..Self::LANES {
            out.set_lane(l, f(l));
        }
        out
    }
}

/// A batch of `W` doubles with element-wise arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lanes<const W: usize>(pub [f64; W]);

impl<const W: usize> Default for Lanes<W> {
    fn default() -> Self {
        Lanes([0.0; W])
    }
}

macro_rules! lanes_binop {
    ($tr:ident, $f:ident, $op:tt, $tra:ident, $fa:ident) => {
        impl<const W: usize> $tr for Lanes<W> {
            type Output = Self;
            #[inline(always)]
            fn $f(self, rhs: Self) -> Self {
                let mut out = self.0;
                for i in 0..W {
                    out[i] = self.0[i] $op rhs.0[i];
                }
                Lanes(out)
            }
        }
        impl<const W: usize> $tra for Lanes<W> {
            #[inline(always)]
            fn $fa(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}

lanes_binop!(Add, add, +, AddAssign, add_assign);
lanes_binop!(Sub, sub, -, SubAssign, sub_assign);

impl<const W: usize> Mul for Lanes<W> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        let mut out = self.0;
        for i in 0..W {
            out[i] = self.0[i] * rhs.0[i];
        }
        Lanes(out)
    }
}

impl<const W: usize> Div for Lanes<W> {
    type Output = Self;
    #[inline(always)]
    fn div(self, rhs: Self) -> Self {
        let mut out = self.0;
        for i in 0..W {
            out[i] = self.0[i] / rhs.0[i];
        }
        Lanes(out)
    }
}

impl<const W: usize> Neg for Lanes<W> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        let mut out = self.0;
        for v in out.iter_mut() {
            *v = -*v;
        }
        Lanes(out)
    }
}

impl<const W: usize> Number for Lanes<W> {
    const LANES: usize = W;

    #[inline(always)]
    fn splat(v: f64) -> Self {
        Lanes([v; W])
    }

    #[inline(always)]
    fn scale(self, s: f64) -> Self {
        let mut out = self.0;
        for v in out.iter_mut() {
            *v *= s;
        }
        Lanes(out)
    }

    #[inline(always)]
    fn fma_scalar(self, s: f64, acc: Self) -> Self {
        let mut out = acc.0;
        for i in 0..W {
            out[i] += self.0[i] * s;
        }
        Lanes(out)
    }

    #[inline(always)]
    fn fma(self, b: Self, acc: Self) -> Self {
        let mut out = acc.0;
        for i in 0..W {
            out[i] += self.0[i] * b.0[i];
        }
        Lanes(out)
    }

    #[inline(always)]
    fn abs(self) -> Self {
        let mut out = self.0;
        for v in out.iter_mut() {
            *v = v.abs();
        }
        Lanes(out)
    }

    #[inline(always)]
    fn lane(&self, i: usize) -> f64 {
        self.0[i]
    }

    #[inline(always)]
    fn set_lane(&mut self, i: usize, v: f64) {
        self.0[i] = v;
    }

    #[inline(always)]
    fn load(src: &[f64]) -> Self {
        let mut out = [0.0; W];
        out.copy_from_slice(&src[..W]);
        Lanes(out)
    }

    #[inline(always)]
    fn store(self, dst: &mut [f64]) {
        dst[..W].copy_from_slice(&self.0);
    }
}

/// Counting wrapper around [`Lanes`]; each vector operation increments the
/// thread-local counters once.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Tally<const W: usize>(pub Lanes<W>);

impl<const W: usize> Add for Tally<W> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        counters::record_adds(1);
        Tally(self.0 + rhs.0)
    }
}

impl<const W: usize> Sub for Tally<W> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        counters::record_adds(1);
        Tally(self.0 - rhs.0)
    }
}

impl<const W: usize> AddAssign for Tally<W> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const W: usize> SubAssign for Tally<W> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const W: usize> Mul for Tally<W> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        counters::record_mults(1);
        Tally(self.0 * rhs.0)
    }
}

impl<const W: usize> Div for Tally<W> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        counters::record_other(1);
        Tally(self.0 / rhs.0)
    }
}

impl<const W: usize> Neg for Tally<W> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        counters::record_other(1);
        Tally(-self.0)
    }
}

impl<const W: usize> Number for Tally<W> {
    const LANES: usize = W;

    fn splat(v: f64) -> Self {
        Tally(Lanes::splat(v))
    }

    fn scale(self, s: f64) -> Self {
        counters::record_mults(1);
        Tally(self.0.scale(s))
    }

    fn fma_scalar(self, s: f64, acc: Self) -> Self {
        counters::record_fmas(1);
        Tally(self.0.fma_scalar(s, acc.0))
    }

    fn fma(self, b: Self, acc: Self) -> Self {
        counters::record_fmas(1);
        Tally(self.0.fma(b.0, acc.0))
    }

    fn abs(self) -> Self {
        counters::record_other(1);
        Tally(self.0.abs())
    }

    fn lane(&self, i: usize) -> f64 {
        self.0.lane(i)
    }

    fn set_lane(&mut self, i: usize, v: f64) {
        self.0.set_lane(i, v)
    }

    fn load(src: &[f64]) -> Self {
        Tally(Lanes::load(src))
    }

    fn store(self, dst: &mut [f64]) {
        self.0.store(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_are_elementwise() {
        let a = Lanes([1.0, 2.0, 3.0, 4.0]);
        let b = Lanes([0.5, -1.0, 2.0, 0.0]);
        assert_eq!((a + b).0, [1.5, 1.0, 5.0, 4.0]);
        assert_eq!((a * b).0, [0.5, -2.0, 6.0, 0.0]);
        assert_eq!(a.fma_scalar(2.0, b).0, [2.5, 3.0, 8.0, 8.0]);
        assert_eq!((-b).abs().0, [0.5, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn tally_counts_each_operation() {
        counters::reset();
        let a = Tally::<2>::splat(1.0);
        let b = a + a;
        let c = b.scale(3.0);
        let _ = c.fma_scalar(2.0, a) - b;
        let snap = counters::snapshot();
        assert_eq!((snap.adds, snap.mults, snap.fmas), (2, 1, 1));
    }
}
