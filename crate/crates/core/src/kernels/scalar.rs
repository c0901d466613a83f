//! Reference kernels: plain left-to-right loops.
//!
//! Reductions accumulate in f64 so this path can serve as the precision
//! oracle for the vectorized one.

use super::{rope_rotation, sigmoid, RMS_EPS};

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        sum += x as f64 * y as f64;
    }
    sum
}

pub(crate) fn gemv(out: &mut [f32], w: &[f32], x: &[f32]) {
    let n = x.len();
    if n == 0 {
        out.fill(0.0);
        return;
    }
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o = dot(row, x) as f32;
    }
}

pub(crate) fn sum_squares(x: &[f32]) -> f64 {
    dot(x, x)
}

pub(crate) fn inv_rms(ss: f64, n: usize) -> f32 {
    let ms = ss / n as f64 + RMS_EPS as f64;
    (1.0 / ms.sqrt()) as f32
}

pub(crate) fn rmsnorm(out: &mut [f32], x: &[f32], weight: &[f32]) {
    let inv = inv_rms(sum_squares(x), x.len());
    for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(weight) {
        *o = xi * wi * inv;
    }
}

pub(crate) fn rmsnorm_inplace(x: &mut [f32], weight: &[f32]) {
    let inv = inv_rms(sum_squares(x), x.len());
    for (xi, &wi) in x.iter_mut().zip(weight) {
        *xi = *xi * wi * inv;
    }
}

pub(crate) fn max(x: &[f32]) -> f32 {
    x.iter().copied().fold(f32::NEG_INFINITY, f32::max)
}

pub(crate) fn softmax_inplace(x: &mut [f32]) {
    let max = max(x);
    let mut sum = 0.0f64;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let sum = sum as f32;
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn rope_rotate(v: &mut [f32], pos: usize, head_size: usize) {
    for (pair, i) in v.chunks_exact_mut(2).zip((0..).step_by(2)) {
        let (cos, sin) = rope_rotation(i % head_size, head_size, pos);
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * cos - b * sin;
        pair[1] = a * sin + b * cos;
    }
}

pub(crate) fn swiglu_inplace(hb: &mut [f32], hb2: &[f32]) {
    for (h, &g) in hb.iter_mut().zip(hb2) {
        *h = *h * sigmoid(*h) * g;
    }
}

pub(crate) fn residual_add(x: &mut [f32], delta: &[f32]) {
    for (xi, &d) in x.iter_mut().zip(delta) {
        *xi += d;
    }
}

pub(crate) fn axpy(out: &mut [f32], a: f32, x: &[f32]) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}
