//! Fixture builders shared by the integration tests.
//!
//! The checkpoint packer and the reference forward pass here are written
//! against the file layout directly and share no code with the library.

#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub vocab: usize,
    pub seq: usize,
}

impl Dims {
    pub const fn new(
        dim: usize,
        hidden: usize,
        layers: usize,
        heads: usize,
        kv_heads: usize,
        vocab: usize,
        seq: usize,
    ) -> Self {
        Self {
            dim,
            hidden,
            layers,
            heads,
            kv_heads,
            vocab,
            seq,
        }
    }

    pub fn head_size(&self) -> usize {
        self.dim / self.heads
    }

    pub fn kv_dim(&self) -> usize {
        self.head_size() * self.kv_heads
    }
}

/// The end-to-end fixture shape.
pub const E2E: Dims = Dims::new(64, 172, 2, 4, 2, 256, 128);

/// Raw tensors in file order.
#[derive(Debug, Clone)]
pub struct Weights {
    pub dims: Dims,
    pub emb: Vec<f32>,
    pub rms_att: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub rms_ffn: Vec<f32>,
    pub w1: Vec<f32>,
    pub w2: Vec<f32>,
    pub w3: Vec<f32>,
    pub rms_final: Vec<f32>,
    pub freq_real: Vec<f32>,
    pub freq_imag: Vec<f32>,
    /// `None` when the classifier is tied to `emb`.
    pub wcls: Option<Vec<f32>>,
}

impl Weights {
    /// Seeded random weights; norm gains hover around 1.
    pub fn random(dims: Dims, tied: bool, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let d = dims;
        let mut mat = |n: usize, scale: f32| -> Vec<f32> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let s_in = 1.0 / (d.dim as f32).sqrt();
        let s_hid = 1.0 / (d.hidden as f32).sqrt();
        let emb = mat(d.vocab * d.dim, 1.0);
        let rms_att = mat(d.layers * d.dim, 0.2).iter().map(|v| 1.0 + v).collect();
        let wq = mat(d.layers * d.dim * d.dim, s_in);
        let wk = mat(d.layers * d.kv_dim() * d.dim, s_in);
        let wv = mat(d.layers * d.kv_dim() * d.dim, s_in);
        let wo = mat(d.layers * d.dim * d.dim, s_in);
        let rms_ffn = mat(d.layers * d.dim, 0.2).iter().map(|v| 1.0 + v).collect();
        let w1 = mat(d.layers * d.hidden * d.dim, s_in);
        let w2 = mat(d.layers * d.dim * d.hidden, s_hid);
        let w3 = mat(d.layers * d.hidden * d.dim, s_in);
        let rms_final = mat(d.dim, 0.2).iter().map(|v| 1.0 + v).collect();
        let half = d.seq * d.head_size() / 2;
        let freq_real = mat(half, 1.0);
        let freq_imag = mat(half, 1.0);
        let wcls = (!tied).then(|| mat(d.vocab * d.dim, 1.0));
        Self {
            dims,
            emb,
            rms_att,
            wq,
            wk,
            wv,
            wo,
            rms_ffn,
            w1,
            w2,
            w3,
            rms_final,
            freq_real,
            freq_imag,
            wcls,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let mut w = Self::random(dims, true, 0);
        for t in w.tensors_mut() {
            t.fill(0.0);
        }
        w
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut v = vec![
            &mut self.emb,
            &mut self.rms_att,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.rms_ffn,
            &mut self.w1,
            &mut self.w2,
            &mut self.w3,
            &mut self.rms_final,
            &mut self.freq_real,
            &mut self.freq_imag,
        ];
        if let Some(w) = self.wcls.as_mut() {
            v.push(w);
        }
        v
    }

    pub fn classifier(&self) -> &[f32] {
        self.wcls.as_deref().unwrap_or(&self.emb)
    }

    /// Checkpoint bytes. `marker` stores the vocab size negated.
    pub fn to_bytes(&self, marker: bool) -> Vec<u8> {
        let d = self.dims;
        let vocab = if marker {
            -(d.vocab as i32)
        } else {
            d.vocab as i32
        };
        let header = [
            d.dim as i32,
            d.hidden as i32,
            d.layers as i32,
            d.heads as i32,
            d.kv_heads as i32,
            vocab,
            d.seq as i32,
        ];
        let mut out: Vec<u8> = header.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut this = self.clone();
        for t in this.tensors_mut() {
            out.extend(t.iter().flat_map(|v| v.to_le_bytes()));
        }
        out
    }

    pub fn write(&self, path: &Path, marker: bool) {
        std::fs::write(path, self.to_bytes(marker)).expect("write checkpoint");
    }
}

/// Payload bytes (header excluded), tallied from tensor shapes.
pub fn payload_bytes(d: Dims, tied: bool) -> u64 {
    let kv = d.kv_dim();
    let per_layer = 2 * d.dim + 2 * d.dim * d.dim + 2 * kv * d.dim + 3 * d.hidden * d.dim;
    let mut floats = d.vocab * d.dim + d.layers * per_layer + d.dim + d.seq * d.head_size();
    if !tied {
        floats += d.vocab * d.dim;
    }
    4 * floats as u64
}

// ---- tokenizer fixtures ----

/// Writes the binary tokenizer format.
pub fn write_tokenizer(path: &Path, pieces: &[&[u8]], scores: &[f32], max_len: i32) {
    let mut f = std::fs::File::create(path).expect("create tokenizer");
    f.write_all(&max_len.to_le_bytes()).unwrap();
    for (p, s) in pieces.iter().zip(scores) {
        f.write_all(&s.to_le_bytes()).unwrap();
        f.write_all(&(p.len() as i32).to_le_bytes()).unwrap();
        f.write_all(p).unwrap();
    }
}

/// A 256-entry byte vocabulary: three specials, then byte `b` at id `b + 3`.
pub fn byte_vocab() -> Vec<Vec<u8>> {
    let mut v = vec![b"<unk>".to_vec(), b"<s>".to_vec(), b"</s>".to_vec()];
    v.extend((0u8..=252).map(|b| vec![b]));
    v
}

pub fn write_byte_tokenizer(path: &Path) {
    let vocab = byte_vocab();
    let pieces: Vec<&[u8]> = vocab.iter().map(Vec::as_slice).collect();
    write_tokenizer(path, &pieces, &vec![0.0; pieces.len()], 1);
}

/// Fixture model and tokenizer in a temp dir.
pub struct FixtureFiles {
    pub dir: tempfile::TempDir,
    pub weights: Weights,
}

impl FixtureFiles {
    pub fn e2e(seed: u64) -> Self {
        Self::new(E2E, true, seed)
    }

    pub fn new(dims: Dims, tied: bool, seed: u64) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let weights = Weights::random(dims, tied, seed);
        weights.write(&dir.path().join("model.bin"), false);
        assert_eq!(dims.vocab, 256, "byte tokenizer has 256 entries");
        write_byte_tokenizer(&dir.path().join("tokenizer.bin"));
        Self { dir, weights }
    }

    pub fn model(&self) -> std::path::PathBuf {
        self.dir.path().join("model.bin")
    }

    pub fn tokenizer(&self) -> std::path::PathBuf {
        self.dir.path().join("tokenizer.bin")
    }
}

// ---- reference forward pass ----

fn rmsnorm(x: &[f64], g: &[f32]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-5).sqrt();
    x.iter().zip(g).map(|(v, &g)| v * inv * g as f64).collect()
}

fn matvec(w: &[f32], x: &[f64], rows: usize) -> Vec<f64> {
    let n = x.len();
    (0..rows)
        .map(|r| {
            w[r * n..(r + 1) * n]
                .iter()
                .zip(x)
                .map(|(&a, b)| a as f64 * b)
                .sum()
        })
        .collect()
}

fn rope(v: &mut [f64], head_size: usize, pos: usize) {
    for i in (0..v.len()).step_by(2) {
        let h = i % head_size;
        let theta = pos as f64 / 10000f64.powf(h as f64 / head_size as f64);
        let (c, s) = (theta.cos(), theta.sin());
        let (a, b) = (v[i], v[i + 1]);
        v[i] = a * c - b * s;
        v[i + 1] = a * s + b * c;
    }
}

/// Full recomputation over `tokens`, returning the logits at every position.
/// Keeps no cache: keys and values are rebuilt from scratch per position.
pub fn reference_logits(w: &Weights, tokens: &[usize]) -> Vec<Vec<f64>> {
    let d = w.dims;
    let (dim, hid, kv, hs) = (d.dim, d.hidden, d.kv_dim(), d.head_size());
    let group = d.heads / d.kv_heads;
    let n = tokens.len();

    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| {
            w.emb[t * dim..(t + 1) * dim]
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect();

    for l in 0..d.layers {
        let rms_att = &w.rms_att[l * dim..(l + 1) * dim];
        let wq = &w.wq[l * dim * dim..(l + 1) * dim * dim];
        let wk = &w.wk[l * kv * dim..(l + 1) * kv * dim];
        let wv = &w.wv[l * kv * dim..(l + 1) * kv * dim];
        let wo = &w.wo[l * dim * dim..(l + 1) * dim * dim];
        let rms_ffn = &w.rms_ffn[l * dim..(l + 1) * dim];
        let w1 = &w.w1[l * hid * dim..(l + 1) * hid * dim];
        let w2 = &w.w2[l * dim * hid..(l + 1) * dim * hid];
        let w3 = &w.w3[l * hid * dim..(l + 1) * hid * dim];

        let normed: Vec<Vec<f64>> = xs.iter().map(|x| rmsnorm(x, rms_att)).collect();
        let mut qs = Vec::with_capacity(n);
        let mut ks = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for (p, xb) in normed.iter().enumerate() {
            let mut q = matvec(wq, xb, dim);
            let mut k = matvec(wk, xb, kv);
            rope(&mut q, hs, p);
            rope(&mut k, hs, p);
            qs.push(q);
            ks.push(k);
            vs.push(matvec(wv, xb, kv));
        }

        for p in 0..n {
            let mut attn_out = vec![0.0f64; dim];
            for h in 0..d.heads {
                let q = &qs[p][h * hs..(h + 1) * hs];
                let ko = (h / group) * hs;
                let scores: Vec<f64> = (0..=p)
                    .map(|t| {
                        q.iter()
                            .zip(&ks[t][ko..ko + hs])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (hs as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for (t, a) in e.iter().enumerate() {
                    for i in 0..hs {
                        attn_out[h * hs + i] += a / z * vs[t][ko + i];
                    }
                }
            }
            let proj = matvec(wo, &attn_out, dim);
            for i in 0..dim {
                xs[p][i] += proj[i];
            }
            let xb = rmsnorm(&xs[p], rms_ffn);
            let h1 = matvec(w1, &xb, hid);
            let h3 = matvec(w3, &xb, hid);
            let g: Vec<f64> = h1
                .iter()
                .zip(&h3)
                .map(|(a, b)| a / (1.0 + (-a).exp()) * b)
                .collect();
            let down = matvec(w2, &g, dim);
            for i in 0..dim {
                xs[p][i] += down[i];
            }
        }
    }

    xs.iter()
        .map(|x| matvec(w.classifier(), &rmsnorm(x, &w.rms_final), d.vocab))
        .collect()
}

/// Largest `|a - b| / max(|b|, floor)` over two vectors.
pub fn max_rel_diff(a: &[f32], b: &[f32], floor: f32) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f32::max)
}
