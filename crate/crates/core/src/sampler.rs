//! Next-token selection: greedy, temperature, and nucleus sampling.

use crate::error::{Error, Result};
use crate::kernels::{self, KernelVariant};
use crate::tokenizer::TokenId;

/// Substitute state for a zero seed; xorshift never leaves zero.
const ZERO_SEED_STATE: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_STAR_MULT: u64 = 2685821657736338717;

/// xorshift64* generator with a fixed output mapping, so every port of this
/// engine draws the same stream for the same seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: if seed == 0 { ZERO_SEED_STATE } else { seed },
        }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        self.state = s;
        s.wrapping_mul(XORSHIFT_STAR_MULT)
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution.
    pub fn next_unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / 16_777_216.0
    }
}

/// Free-function form of [`Rng64::next_unit`].
pub fn rng_next_unit(rng: &mut Rng64) -> f32 {
    rng.next_unit()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// 0 selects greedy decoding.
    pub temperature: f32,
    pub top_p: f32,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidSampler(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidSampler(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw over `probs` (which need not be normalised to exactly 1).
fn sample_cdf(probs: &[f32], r: f32) -> usize {
    let mut cdf = 0.0f32;
    for (i, &p) in probs.iter().enumerate() {
        cdf += p;
        if r < cdf {
            return i;
        }
    }
    probs.len() - 1
}

/// Sorts candidate indices by descending probability (ascending index on ties)
/// and returns the length of the smallest prefix whose mass reaches `top_p`,
/// together with that mass.
///
/// Entries below `(1 - top_p) / n` cannot be part of the nucleus, since
/// together they hold less than `1 - top_p`, so they are dropped before sorting.
/// The largest entry is at least `1 / n`, so the result is never empty.
pub fn nucleus(probs: &[f32], top_p: f32, order: &mut Vec<u32>) -> (usize, f32) {
    let n = probs.len();
    let cutoff = (1.0 - top_p) / n as f32;
    order.clear();
    order.extend((0..n as u32).filter(|&i| probs[i as usize] >= cutoff));
    order.sort_unstable_by(|&a, &b| {
        probs[b as usize]
            .total_cmp(&probs[a as usize])
            .then(a.cmp(&b))
    });

    let mut mass = 0.0f32;
    for (k, &i) in order.iter().enumerate() {
        mass += probs[i as usize];
        if mass >= top_p {
            return (k + 1, mass);
        }
    }
    (order.len(), mass)
}

/// Converts logits to token ids. Holds its scratch buffers so steady-state
/// sampling allocates nothing.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    rng: Rng64,
    probs: Vec<f32>,
    order: Vec<u32>,
}

impl Sampler {
    pub fn new(config: SamplerConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: Rng64::new(config.seed),
            probs: Vec::with_capacity(vocab_size),
            order: Vec::with_capacity(vocab_size),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn rng(&self) -> &Rng64 {
        &self.rng
    }

    pub fn sample(&mut self, logits: &[f32]) -> Result<TokenId> {
        assert!(!logits.is_empty(), "empty logits");
        if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLogits { index });
        }
        if self.config.temperature == 0.0 {
            return Ok(argmax(logits) as TokenId);
        }

        self.probs.clear();
        self.probs
            .extend(logits.iter().map(|&l| l / self.config.temperature));
        kernels::softmax_inplace(&mut self.probs, KernelVariant::Scalar);

        let r = self.rng.next_unit();
        let token = if self.config.top_p >= 1.0 {
            sample_cdf(&self.probs, r)
        } else {
            let (kept, mass) = nucleus(&self.probs, self.config.top_p, &mut self.order);
            let target = r * mass;
            let mut cdf = 0.0f32;
            let mut chosen = self.order[kept - 1] as usize;
            for &i in &self.order[..kept] {
                cdf += self.probs[i as usize];
                if target < cdf {
                    chosen = i as usize;
                    break;
                }
            }
            chosen
        };
        Ok(token as TokenId)
    }
}

/// One-shot sampling with caller-owned generator state.
pub fn sample(logits: &[f32], config: &SamplerConfig, rng: &mut Rng64) -> Result<TokenId> {
    let mut sampler = Sampler::new(*config, logits.len())?;
    sampler.rng = rng.clone();
    let token = sampler.sample(logits)?;
    *rng = sampler.rng;
    Ok(token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let (mut a, mut b) = (Rng64::new(7), Rng64::new(7));
        for _ in 0..1000 {
            let (x, y) = (a.next_unit(), b.next_unit());
            assert_eq!(x.to_bits(), y.to_bits());
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn zero_seed_is_remapped() {
        let mut rng = Rng64::new(0);
        assert_ne!(rng.state(), 0);
        rng.next_u64();
        assert_ne!(rng.state(), 0);
    }

    #[test]
    fn known_first_values() {
        // hand-evaluated xorshift64* step for seed 1
        let mut s: u64 = 1;
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        let expected = (s.wrapping_mul(2685821657736338717) >> 40) as f32 / 16777216.0;
        assert_eq!(Rng64::new(1).next_unit(), expected);
        assert_eq!(s, 0x4082_2041);
    }

    #[test]
    fn greedy_picks_argmax() {
        let cfg = SamplerConfig {
            temperature: 0.0,
            ..Default::default()
        };
        let mut rng = Rng64::new(1);
        assert_eq!(sample(&[0.0, 5.0, 1.0], &cfg, &mut rng).unwrap(), 1);
        assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
    }

    #[test]
    fn rejects_non_finite_logits() {
        let mut s = Sampler::new(SamplerConfig::default(), 3).unwrap();
        assert!(matches!(
            s.sample(&[0.0, f32::NAN, 1.0]),
            Err(Error::InvalidLogits { index: 1 })
        ));
        assert!(matches!(
            s.sample(&[f32::INFINITY]),
            Err(Error::InvalidLogits { index: 0 })
        ));
    }

    #[test]
    fn rejects_bad_config() {
        for (t, p) in [(-1.0, 1.0), (1.0, 0.0), (1.0, 1.5), (f32::NAN, 1.0)] {
            let cfg = SamplerConfig {
                temperature: t,
                top_p: p,
                seed: 1,
            };
            assert!(Sampler::new(cfg, 4).is_err(), "{t} {p}");
        }
    }

    #[test]
    fn nucleus_collapses_on_dominant_token() {
        let mut probs = vec![10.0f32, 0.0, 0.0];
        kernels::softmax_inplace(&mut probs, KernelVariant::Scalar);
        let mut order = Vec::new();
        let (kept, mass) = nucleus(&probs, 0.9, &mut order);
        assert_eq!(kept, 1);
        assert_eq!(order[0], 0);
        assert!(mass >= 0.9);
    }

    #[test]
    fn nucleus_orders_ties_by_index() {
        let probs = [0.25f32; 4];
        let mut order = Vec::new();
        let (kept, _) = nucleus(&probs, 0.5, &mut order);
        assert_eq!(kept, 2);
        assert_eq!(&order[..4], &[0, 1, 2, 3]);
    }
}
