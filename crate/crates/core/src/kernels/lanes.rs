//! 128-bit lane types used by the vectorized kernels.
//!
//! Each lane type has a native implementation (SSE2 on x86_64, NEON on
//! aarch64) and a portable array implementation with the same operation
//! order. Products are formed in f64 from widened f32 inputs, which is exact,
//! and no operation is fused, so native and portable results are
//! bit-identical.

/// Four f32 lanes.
pub(crate) trait F32Lanes: Copy {
    fn load(src: &[f32; 4]) -> Self;
    fn store(self, dst: &mut [f32; 4]);
    fn splat(v: f32) -> Self;
    fn add(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn div(self, rhs: Self) -> Self;
    /// `[a, b, c, d] -> [b, a, d, c]`
    fn swap_pairs(self) -> Self;
}

/// Four f64 accumulator lanes fed from f32 data.
pub(crate) trait F64Acc: Copy {
    fn zero() -> Self;
    /// `self + widen(a) * widen(b)` per lane.
    fn mul_add(self, a: &[f32; 4], b: &[f32; 4]) -> Self;
    /// `self + widen(a)` per lane.
    fn add_widened(self, a: &[f32; 4]) -> Self;
    fn add(self, rhs: Self) -> Self;
    fn to_array(self) -> [f64; 4];

    /// `(l0 + l1) + (l2 + l3)`
    #[inline(always)]
    fn horizontal_sum(self) -> f64 {
        let [a, b, c, d] = self.to_array();
        (a + b) + (c + d)
    }
}

#[inline(always)]
pub(crate) fn quad(s: &[f32]) -> &[f32; 4] {
    s.try_into().expect("slice of four")
}

#[inline(always)]
pub(crate) fn quad_mut(s: &mut [f32]) -> &mut [f32; 4] {
    s.try_into().expect("slice of four")
}

// Reference lanes; on x86_64 and aarch64 only the tests use them.
#[cfg_attr(
    all(not(test), any(target_arch = "x86_64", target_arch = "aarch64")),
    allow(dead_code)
)]
pub(crate) mod portable {
    use super::{F32Lanes, F64Acc};

    #[derive(Clone, Copy)]
    pub(crate) struct F32x4([f32; 4]);

    impl F32Lanes for F32x4 {
        #[inline(always)]
        fn load(src: &[f32; 4]) -> Self {
            Self(*src)
        }
        #[inline(always)]
        fn store(self, dst: &mut [f32; 4]) {
            *dst = self.0;
        }
        #[inline(always)]
        fn splat(v: f32) -> Self {
            Self([v; 4])
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            Self(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
        }
        #[inline(always)]
        fn mul(self, rhs: Self) -> Self {
            Self(std::array::from_fn(|i| self.0[i] * rhs.0[i]))
        }
        #[inline(always)]
        fn div(self, rhs: Self) -> Self {
            Self(std::array::from_fn(|i| self.0[i] / rhs.0[i]))
        }
        #[inline(always)]
        fn swap_pairs(self) -> Self {
            let [a, b, c, d] = self.0;
            Self([b, a, d, c])
        }
    }

    #[derive(Clone, Copy)]
    pub(crate) struct F64x4([f64; 4]);

    impl F64Acc for F64x4 {
        #[inline(always)]
        fn zero() -> Self {
            Self([0.0; 4])
        }
        #[inline(always)]
        fn mul_add(self, a: &[f32; 4], b: &[f32; 4]) -> Self {
            Self(std::array::from_fn(|i| {
                self.0[i] + a[i] as f64 * b[i] as f64
            }))
        }
        #[inline(always)]
        fn add_widened(self, a: &[f32; 4]) -> Self {
            Self(std::array::from_fn(|i| self.0[i] + a[i] as f64))
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            Self(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
        }
        #[inline(always)]
        fn to_array(self) -> [f64; 4] {
            self.0
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod native_impl {
    use std::arch::x86_64::*;

    use super::{F32Lanes, F64Acc};

    // SSE2 is part of the x86_64 baseline, so every intrinsic below is
    // available unconditionally. All loads and stores are unaligned.

    #[derive(Clone, Copy)]
    pub(crate) struct F32x4(__m128);

    impl F32Lanes for F32x4 {
        #[inline(always)]
        fn load(src: &[f32; 4]) -> Self {
            Self(unsafe { _mm_loadu_ps(src.as_ptr()) })
        }
        #[inline(always)]
        fn store(self, dst: &mut [f32; 4]) {
            unsafe { _mm_storeu_ps(dst.as_mut_ptr(), self.0) }
        }
        #[inline(always)]
        fn splat(v: f32) -> Self {
            Self(unsafe { _mm_set1_ps(v) })
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            Self(unsafe { _mm_add_ps(self.0, rhs.0) })
        }
        #[inline(always)]
        fn mul(self, rhs: Self) -> Self {
            Self(unsafe { _mm_mul_ps(self.0, rhs.0) })
        }
        #[inline(always)]
        fn div(self, rhs: Self) -> Self {
            Self(unsafe { _mm_div_ps(self.0, rhs.0) })
        }
        #[inline(always)]
        fn swap_pairs(self) -> Self {
            Self(unsafe { _mm_shuffle_ps::<0b10_11_00_01>(self.0, self.0) })
        }
    }

    /// Lanes 0-1 in `lo`, 2-3 in `hi`.
    #[derive(Clone, Copy)]
    pub(crate) struct F64x4 {
        lo: __m128d,
        hi: __m128d,
    }

    /// Converts four f32 to f64 with two 8-byte loads, which fold into the
    /// memory operand of `cvtps2pd`.
    #[inline(always)]
    fn widen(src: &[f32; 4]) -> (__m128d, __m128d) {
        unsafe {
            let p = src.as_ptr();
            let lo = _mm_cvtsi64_si128(p.cast::<i64>().read_unaligned());
            let hi = _mm_cvtsi64_si128(p.add(2).cast::<i64>().read_unaligned());
            (
                _mm_cvtps_pd(_mm_castsi128_ps(lo)),
                _mm_cvtps_pd(_mm_castsi128_ps(hi)),
            )
        }
    }

    impl F64Acc for F64x4 {
        #[inline(always)]
        fn zero() -> Self {
            unsafe {
                Self {
                    lo: _mm_setzero_pd(),
                    hi: _mm_setzero_pd(),
                }
            }
        }
        #[inline(always)]
        fn mul_add(self, a: &[f32; 4], b: &[f32; 4]) -> Self {
            let (a_lo, a_hi) = widen(a);
            let (b_lo, b_hi) = widen(b);
            unsafe {
                Self {
                    lo: _mm_add_pd(self.lo, _mm_mul_pd(a_lo, b_lo)),
                    hi: _mm_add_pd(self.hi, _mm_mul_pd(a_hi, b_hi)),
                }
            }
        }
        #[inline(always)]
        fn add_widened(self, a: &[f32; 4]) -> Self {
            let (a_lo, a_hi) = widen(a);
            unsafe {
                Self {
                    lo: _mm_add_pd(self.lo, a_lo),
                    hi: _mm_add_pd(self.hi, a_hi),
                }
            }
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            unsafe {
                Self {
                    lo: _mm_add_pd(self.lo, rhs.lo),
                    hi: _mm_add_pd(self.hi, rhs.hi),
                }
            }
        }
        #[inline(always)]
        fn to_array(self) -> [f64; 4] {
            let mut out = [0.0; 4];
            unsafe {
                _mm_storeu_pd(out.as_mut_ptr(), self.lo);
                _mm_storeu_pd(out.as_mut_ptr().add(2), self.hi);
            }
            out
        }
    }
}

#[cfg(target_arch = "aarch64")]
mod native_impl {
    use std::arch::aarch64::*;

    use super::{F32Lanes, F64Acc};

    // NEON is mandatory on aarch64. Multiply and add are issued separately
    // (no FMLA) so results match the portable path.

    #[derive(Clone, Copy)]
    pub(crate) struct F32x4(float32x4_t);

    impl F32Lanes for F32x4 {
        #[inline(always)]
        fn load(src: &[f32; 4]) -> Self {
            Self(unsafe { vld1q_f32(src.as_ptr()) })
        }
        #[inline(always)]
        fn store(self, dst: &mut [f32; 4]) {
            unsafe { vst1q_f32(dst.as_mut_ptr(), self.0) }
        }
        #[inline(always)]
        fn splat(v: f32) -> Self {
            Self(unsafe { vdupq_n_f32(v) })
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            Self(unsafe { vaddq_f32(self.0, rhs.0) })
        }
        #[inline(always)]
        fn mul(self, rhs: Self) -> Self {
            Self(unsafe { vmulq_f32(self.0, rhs.0) })
        }
        #[inline(always)]
        fn div(self, rhs: Self) -> Self {
            Self(unsafe { vdivq_f32(self.0, rhs.0) })
        }
        #[inline(always)]
        fn swap_pairs(self) -> Self {
            Self(unsafe { vrev64q_f32(self.0) })
        }
    }

    #[derive(Clone, Copy)]
    pub(crate) struct F64x4 {
        lo: float64x2_t,
        hi: float64x2_t,
    }

    impl F64Acc for F64x4 {
        #[inline(always)]
        fn zero() -> Self {
            unsafe {
                Self {
                    lo: vdupq_n_f64(0.0),
                    hi: vdupq_n_f64(0.0),
                }
            }
        }
        #[inline(always)]
        fn mul_add(self, a: &[f32; 4], b: &[f32; 4]) -> Self {
            unsafe {
                let va = vld1q_f32(a.as_ptr());
                let vb = vld1q_f32(b.as_ptr());
                let (a_lo, a_hi) = (vcvt_f64_f32(vget_low_f32(va)), vcvt_high_f64_f32(va));
                let (b_lo, b_hi) = (vcvt_f64_f32(vget_low_f32(vb)), vcvt_high_f64_f32(vb));
                Self {
                    lo: vaddq_f64(self.lo, vmulq_f64(a_lo, b_lo)),
                    hi: vaddq_f64(self.hi, vmulq_f64(a_hi, b_hi)),
                }
            }
        }
        #[inline(always)]
        fn add_widened(self, a: &[f32; 4]) -> Self {
            unsafe {
                let va = vld1q_f32(a.as_ptr());
                Self {
                    lo: vaddq_f64(self.lo, vcvt_f64_f32(vget_low_f32(va))),
                    hi: vaddq_f64(self.hi, vcvt_high_f64_f32(va)),
                }
            }
        }
        #[inline(always)]
        fn add(self, rhs: Self) -> Self {
            unsafe {
                Self {
                    lo: vaddq_f64(self.lo, rhs.lo),
                    hi: vaddq_f64(self.hi, rhs.hi),
                }
            }
        }
        #[inline(always)]
        fn to_array(self) -> [f64; 4] {
            let mut out = [0.0; 4];
            unsafe {
                vst1q_f64(out.as_mut_ptr(), self.lo);
                vst1q_f64(out.as_mut_ptr().add(2), self.hi);
            }
            out
        }
    }
}

#[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
mod native_impl {
    pub(crate) use super::portable::{F32x4, F64x4};
}

pub(crate) use native_impl::{F32x4, F64x4};
