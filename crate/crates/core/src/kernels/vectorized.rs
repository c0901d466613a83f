//! 128-bit vectorized kernels.
//!
//! Dot products run four independent four-lane accumulators over 16-element
//! blocks so consecutive multiply-adds never wait on each other. Lanes are
//! reduced pairwise, then horizontally, and the `n % 16` remainder is summed
//! scalar and added last. The order is fixed, so each call is deterministic.
//!
//! Every kernel is generic over its lane types; the crate instantiates it with
//! the native lanes, and tests also instantiate the portable lanes to check the
//! two agree bit for bit.

use super::lanes::{quad, quad_mut, F32Lanes, F64Acc};
use super::{rope_rotation, scalar, sigmoid};

const BLOCK: usize = 16;

#[inline(always)]
pub(crate) fn dot<A: F64Acc>(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let body = n - n % BLOCK;
    let (mut acc0, mut acc1, mut acc2, mut acc3) = (A::zero(), A::zero(), A::zero(), A::zero());
    for (ab, bb) in a[..body]
        .chunks_exact(BLOCK)
        .zip(b[..body].chunks_exact(BLOCK))
    {
        acc0 = acc0.mul_add(quad(&ab[0..4]), quad(&bb[0..4]));
        acc1 = acc1.mul_add(quad(&ab[4..8]), quad(&bb[4..8]));
        acc2 = acc2.mul_add(quad(&ab[8..12]), quad(&bb[8..12]));
        acc3 = acc3.mul_add(quad(&ab[12..16]), quad(&bb[12..16]));
    }
    let lanes = acc0.add(acc1).add(acc2.add(acc3));
    let tail = scalar::dot(&a[body..n], &b[body..n]);
    lanes.horizontal_sum() + tail
}

#[inline(always)]
fn sum<A: F64Acc>(x: &[f32]) -> f64 {
    let body = x.len() - x.len() % BLOCK;
    let (mut acc0, mut acc1, mut acc2, mut acc3) = (A::zero(), A::zero(), A::zero(), A::zero());
    for blk in x[..body].chunks_exact(BLOCK) {
        acc0 = acc0.add_widened(quad(&blk[0..4]));
        acc1 = acc1.add_widened(quad(&blk[4..8]));
        acc2 = acc2.add_widened(quad(&blk[8..12]));
        acc3 = acc3.add_widened(quad(&blk[12..16]));
    }
    let lanes = acc0.add(acc1).add(acc2.add(acc3));
    let mut tail = 0.0f64;
    for &v in &x[body..] {
        tail += v as f64;
    }
    lanes.horizontal_sum() + tail
}

pub(crate) fn gemv<A: F64Acc>(out: &mut [f32], w: &[f32], x: &[f32]) {
    let n = x.len();
    if n == 0 {
        out.fill(0.0);
        return;
    }
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o = dot::<A>(row, x) as f32;
    }
}

/// `out = (x * weight) * inv`, four lanes at a time.
#[inline(always)]
fn scale<V: F32Lanes>(out: &mut [f32], x: &[f32], weight: &[f32], inv: f32) {
    let body = out.len() - out.len() % 4;
    let vinv = V::splat(inv);
    for ((o, xq), wq) in out[..body]
        .chunks_exact_mut(4)
        .zip(x[..body].chunks_exact(4))
        .zip(weight[..body].chunks_exact(4))
    {
        V::load(quad(xq))
            .mul(V::load(quad(wq)))
            .mul(vinv)
            .store(quad_mut(o));
    }
    for ((o, &xi), &wi) in out[body..].iter_mut().zip(&x[body..]).zip(&weight[body..]) {
        *o = xi * wi * inv;
    }
}

pub(crate) fn rmsnorm<V: F32Lanes, A: F64Acc>(out: &mut [f32], x: &[f32], weight: &[f32]) {
    let inv = scalar::inv_rms(dot::<A>(x, x), x.len());
    scale::<V>(out, x, weight, inv);
}

pub(crate) fn rmsnorm_inplace<V: F32Lanes, A: F64Acc>(x: &mut [f32], weight: &[f32]) {
    let inv = scalar::inv_rms(dot::<A>(x, x), x.len());
    let body = x.len() - x.len() % 4;
    let vinv = V::splat(inv);
    for (xq, wq) in x[..body]
        .chunks_exact_mut(4)
        .zip(weight[..body].chunks_exact(4))
    {
        let xq = quad_mut(xq);
        V::load(xq).mul(V::load(quad(wq))).mul(vinv).store(xq);
    }
    for (xi, &wi) in x[body..].iter_mut().zip(&weight[body..]) {
        *xi = *xi * wi * inv;
    }
}

pub(crate) fn softmax_inplace<V: F32Lanes, A: F64Acc>(x: &mut [f32]) {
    let max = scalar::max(x);
    for v in x.iter_mut() {
        *v = (*v - max).exp();
    }
    let total = sum::<A>(x) as f32;
    let body = x.len() - x.len() % 4;
    let vtotal = V::splat(total);
    for q in x[..body].chunks_exact_mut(4) {
        let q = quad_mut(q);
        V::load(q).div(vtotal).store(q);
    }
    for v in &mut x[body..] {
        *v /= total;
    }
}

/// Rotates two adjacent pairs per vector:
/// `[a0, b0, a1, b1] * [c0, c0, c1, c1] + [b0, a0, b1, a1] * [-s0, s0, -s1, s1]`.
pub(crate) fn rope_rotate<V: F32Lanes>(v: &mut [f32], pos: usize, head_size: usize) {
    let body = v.len() - v.len() % 4;
    for (q, i) in v[..body].chunks_exact_mut(4).zip((0..).step_by(4)) {
        let (c0, s0) = rope_rotation(i % head_size, head_size, pos);
        let (c1, s1) = rope_rotation((i + 2) % head_size, head_size, pos);
        let q = quad_mut(q);
        let lanes = V::load(q);
        let cos = V::load(&[c0, c0, c1, c1]);
        let sin = V::load(&[-s0, s0, -s1, s1]);
        lanes.mul(cos).add(lanes.swap_pairs().mul(sin)).store(q);
    }
    if body < v.len() {
        let (cos, sin) = rope_rotation(body % head_size, head_size, pos);
        let (a, b) = (v[body], v[body + 1]);
        v[body] = a * cos - b * sin;
        v[body + 1] = a * sin + b * cos;
    }
}

pub(crate) fn swiglu_inplace<V: F32Lanes>(hb: &mut [f32], hb2: &[f32]) {
    let body = hb.len() - hb.len() % 4;
    for (h, g) in hb[..body]
        .chunks_exact_mut(4)
        .zip(hb2[..body].chunks_exact(4))
    {
        let h = quad_mut(h);
        let gate: [f32; 4] = std::array::from_fn(|i| sigmoid(h[i]));
        V::load(h)
            .mul(V::load(&gate))
            .mul(V::load(quad(g)))
            .store(h);
    }
    scalar::swiglu_inplace(&mut hb[body..], &hb2[body..]);
}

pub(crate) fn residual_add<V: F32Lanes>(x: &mut [f32], delta: &[f32]) {
    let body = x.len() - x.len() % 4;
    for (xq, dq) in x[..body]
        .chunks_exact_mut(4)
        .zip(delta[..body].chunks_exact(4))
    {
        let xq = quad_mut(xq);
        V::load(xq).add(V::load(quad(dq))).store(xq);
    }
    scalar::residual_add(&mut x[body..], &delta[body..]);
}

pub(crate) fn axpy<V: F32Lanes>(out: &mut [f32], a: f32, x: &[f32]) {
    let body = out.len() - out.len() % 4;
    let va = V::splat(a);
    for (oq, xq) in out[..body]
        .chunks_exact_mut(4)
        .zip(x[..body].chunks_exact(4))
    {
        let oq = quad_mut(oq);
        V::load(oq).add(va.mul(V::load(quad(xq)))).store(oq);
    }
    scalar::axpy(&mut out[body..], a, &x[body..]);
}
