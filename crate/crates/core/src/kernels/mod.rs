//! Compute primitives of the decoder, each with a scalar and a vectorized path.
//!
//! Both variants share signatures. The scalar path accumulates strictly left
//! to right and is the precision oracle; the vectorized path changes only the
//! summation order of reductions. Elementwise kernels perform the same
//! floating-point operations in the same order in both variants.
//!
//! Inputs need only the natural 4-byte alignment of `f32`: zero-copy weights
//! start 28 bytes into the file.

mod lanes;
mod scalar;
mod vectorized;

use std::fmt;
use std::str::FromStr;

use lanes::{F32x4, F64x4};

/// Epsilon added to the mean square in RMSNorm.
pub const RMS_EPS: f32 = 1e-5;

/// Base of the rotary frequency ladder.
pub const ROPE_THETA: f32 = 10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    Scalar,
    #[default]
    Vectorized,
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelVariant::Scalar => "scalar",
            KernelVariant::Vectorized => "vectorized",
        })
    }
}

impl FromStr for KernelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalar" => Ok(KernelVariant::Scalar),
            "vectorized" => Ok(KernelVariant::Vectorized),
            other => Err(format!(
                "unknown kernel variant `{other}` (expected scalar|vectorized)"
            )),
        }
    }
}

#[inline(always)]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `(cos θ, sin θ)` for the pair at offset `h` within a head, where
/// `θ = pos / 10000^(h / head_size)`.
#[inline]
pub(crate) fn rope_rotation(h: usize, head_size: usize, pos: usize) -> (f32, f32) {
    let freq = 1.0 / ROPE_THETA.powf(h as f32 / head_size as f32);
    let theta = pos as f32 * freq;
    (theta.cos(), theta.sin())
}

/// `out[i] = Σ_j w[i * n + j] * x[j]` with `n = x.len()` and `d = out.len()`.
pub fn gemv(out: &mut [f32], w: &[f32], x: &[f32], variant: KernelVariant) {
    assert_eq!(w.len(), out.len() * x.len(), "gemv shape mismatch");
    match variant {
        KernelVariant::Scalar => scalar::gemv(out, w, x),
        KernelVariant::Vectorized => vectorized::gemv::<F64x4>(out, w, x),
    }
}

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f32], b: &[f32], variant: KernelVariant) -> f32 {
    assert_eq!(a.len(), b.len());
    match variant {
        KernelVariant::Scalar => scalar::dot(a, b) as f32,
        KernelVariant::Vectorized => vectorized::dot::<F64x4>(a, b) as f32,
    }
}

/// `out_i = x_i * weight_i / sqrt(mean(x²) + 1e-5)`.
pub fn rmsnorm(out: &mut [f32], x: &[f32], weight: &[f32], variant: KernelVariant) {
    assert!(!x.is_empty() && out.len() == x.len() && weight.len() == x.len());
    match variant {
        KernelVariant::Scalar => scalar::rmsnorm(out, x, weight),
        KernelVariant::Vectorized => vectorized::rmsnorm::<F32x4, F64x4>(out, x, weight),
    }
}

/// [`rmsnorm`] with the output written over `x`.
pub fn rmsnorm_inplace(x: &mut [f32], weight: &[f32], variant: KernelVariant) {
    assert!(!x.is_empty() && weight.len() == x.len());
    match variant {
        KernelVariant::Scalar => scalar::rmsnorm_inplace(x, weight),
        KernelVariant::Vectorized => vectorized::rmsnorm_inplace::<F32x4, F64x4>(x, weight),
    }
}

/// Numerically stable softmax: the maximum is subtracted before exponentiating.
pub fn softmax_inplace(x: &mut [f32], variant: KernelVariant) {
    assert!(!x.is_empty());
    match variant {
        KernelVariant::Scalar => scalar::softmax_inplace(x),
        KernelVariant::Vectorized => vectorized::softmax_inplace::<F32x4, F64x4>(x),
    }
}

/// Rotary position embedding applied to all of `q` and all of `k`.
///
/// Each adjacent pair `(v[i], v[i+1])` is rotated by `pos / 10000^(h / head_size)`
/// radians, `h = i mod head_size`. Pass the `kv_dim` prefix as `k`.
pub fn rope_apply(
    q: &mut [f32],
    k: &mut [f32],
    pos: usize,
    head_size: usize,
    variant: KernelVariant,
) {
    assert!(head_size.is_multiple_of(2) && q.len().is_multiple_of(2) && k.len().is_multiple_of(2));
    match variant {
        KernelVariant::Scalar => {
            scalar::rope_rotate(q, pos, head_size);
            scalar::rope_rotate(k, pos, head_size);
        }
        KernelVariant::Vectorized => {
            vectorized::rope_rotate::<F32x4>(q, pos, head_size);
            vectorized::rope_rotate::<F32x4>(k, pos, head_size);
        }
    }
}

/// `hb_i = silu(hb_i) * hb2_i`.
pub fn swiglu_inplace(hb: &mut [f32], hb2: &[f32], variant: KernelVariant) {
    assert_eq!(hb.len(), hb2.len());
    match variant {
        KernelVariant::Scalar => scalar::swiglu_inplace(hb, hb2),
        KernelVariant::Vectorized => vectorized::swiglu_inplace::<F32x4>(hb, hb2),
    }
}

pub fn residual_add(x: &mut [f32], delta: &[f32], variant: KernelVariant) {
    assert_eq!(x.len(), delta.len());
    match variant {
        KernelVariant::Scalar => scalar::residual_add(x, delta),
        KernelVariant::Vectorized => vectorized::residual_add::<F32x4>(x, delta),
    }
}

/// `out += a * x`.
pub fn axpy(out: &mut [f32], a: f32, x: &[f32], variant: KernelVariant) {
    assert_eq!(out.len(), x.len());
    match variant {
        KernelVariant::Scalar => scalar::axpy(out, a, x),
        KernelVariant::Vectorized => vectorized::axpy::<F32x4>(out, a, x),
    }
}
