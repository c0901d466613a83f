//! Timed generation, latency statistics, and the back-of-envelope roofline
//! and energy figures printed by the `bench` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernels::KernelVariant;
use crate::model_format::{map_checkpoint, LoadMode, MappedWeights};
use crate::sampler::{Sampler, SamplerConfig};
use crate::tokenizer::{load_tokenizer, TokenId, TokenizerModel};
use crate::transformer::TransformerSession;

pub const CSV_HEADER: &str = "token_index,latency_us";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Per generated token, in microseconds; never zero.
    pub latencies_us: Vec<u64>,
    /// Excludes the first token; equals `1e6 / latency` when only one was generated.
    pub tokens_per_second: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub first_token_us: u64,
    pub load_ms: f64,
    /// Total time of the forward passes over the prompt before the first timed step.
    pub prefill_us: u64,
}

impl BenchReport {
    pub fn from_latencies(latencies_us: Vec<u64>, load_ms: f64, prefill_us: u64) -> Result<Self> {
        let first_token_us = *latencies_us.first().ok_or(Error::EmptyInput)?;
        Ok(Self {
            tokens_per_second: tokens_per_second(&latencies_us)?,
            p50_us: percentile(&latencies_us, 50.0)?,
            p99_us: percentile(&latencies_us, 99.0)?,
            first_token_us,
            latencies_us,
            load_ms,
            prefill_us,
        })
    }

    pub fn steps(&self) -> usize {
        self.latencies_us.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(&self.latencies_us, path)
    }
}

/// Steady-state throughput: `(N - 1)` tokens over the time of tokens `1..N`.
pub fn tokens_per_second(latencies_us: &[u64]) -> Result<f64> {
    match latencies_us {
        [] => Err(Error::EmptyInput),
        [only] => Ok(1e6 / *only as f64),
        [_, rest @ ..] => {
            let total: u64 = rest.iter().sum();
            Ok(rest.len() as f64 * 1e6 / total as f64)
        }
    }
}

/// Nearest-rank percentile: element `ceil(q / 100 * N) - 1` of the sorted series.
pub fn percentile(latencies_us: &[u64], q: f64) -> Result<u64> {
    if latencies_us.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "percentile must be in [0, 100], got {q}"
        )));
    }
    let mut sorted = latencies_us.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = (q / 100.0 * n as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1).min(n - 1)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineInput {
    /// FLOPs per byte.
    pub operational_intensity: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// FLOPs per second.
    pub arithmetic_peak: f64,
}

impl RooflineInput {
    pub fn new(operational_intensity: f64, bandwidth: f64, arithmetic_peak: f64) -> Result<Self> {
        for (name, v) in [
            ("operational intensity", operational_intensity),
            ("bandwidth", bandwidth),
            ("arithmetic peak", arithmetic_peak),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            operational_intensity,
            bandwidth,
            arithmetic_peak,
        })
    }
}

/// Attainable FLOP/s under the roofline: `min(peak, I * bandwidth)`.
pub fn roofline_max_flops(input: &RooflineInput) -> f64 {
    input
        .arithmetic_peak
        .min(input.operational_intensity * input.bandwidth)
}

/// Operational intensity of a weight-streaming gemv under two byte conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemvIntensity {
    /// One byte counted per weight element.
    pub per_element: f64,
    /// Four bytes per FP32 weight.
    pub fp32_bytes: f64,
}

/// `2 * rows * cols` FLOPs over the weight traffic; activation traffic is ignored.
pub fn gemv_intensity(rows: usize, cols: usize) -> Result<GemvIntensity> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "gemv dims must be positive, got {rows}x{cols}"
        )));
    }
    let flops = 2.0 * rows as f64 * cols as f64;
    let elements = rows as f64 * cols as f64;
    Ok(GemvIntensity {
        per_element: flops / elements,
        fp32_bytes: flops / (4.0 * elements),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyInput {
    /// Average package power in watts.
    pub p_avg: f64,
    pub tps: f64,
}

impl EnergyInput {
    pub fn new(p_avg: f64, tps: f64) -> Result<Self> {
        if !(p_avg > 0.0 && p_avg.is_finite() && tps > 0.0 && tps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "power and throughput must be positive, got {p_avg} W and {tps} tok/s"
            )));
        }
        Ok(Self { p_avg, tps })
    }
}

/// Millijoules per token.
pub fn energy_per_token(input: &EnergyInput) -> f64 {
    1000.0 * input.p_avg / input.tps
}

/// Writes `token_index,latency_us` rows with LF endings.
pub fn write_csv(latencies_us: &[u64], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref()).map_err(Error::Write)?;
    let mut out = BufWriter::new(file);
    write_csv_to(latencies_us, &mut out).map_err(Error::Write)?;
    out.into_inner()
        .map_err(|e| Error::Write(e.into_error()))?
        .sync_all()
        .map_err(Error::Write)
}

pub fn write_csv_to(latencies_us: &[u64], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (i, l) in latencies_us.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    out.flush()
}

/// Parses a CSV produced by [`write_csv`] back into a latency series.
pub fn read_csv(text: &str) -> Result<Vec<u64>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format(format!("missing `{CSV_HEADER}` header")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("line {}: malformed row `{line}`", i + 2));
            let (idx, lat) = line.split_once(',').ok_or_else(bad)?;
            if idx.parse::<usize>().map_err(|_| bad())? != i {
                return Err(bad());
            }
            lat.parse().map_err(|_| bad())
        })
        .collect()
}

/// Autoregressive decoding state. [`step`](Self::step) performs one forward
/// pass plus one sample and does not allocate.
#[derive(Debug)]
pub struct Generator<'w> {
    session: TransformerSession<'w>,
    sampler: Sampler,
    token: TokenId,
    pos: usize,
}

impl<'w> Generator<'w> {
    /// Consumes `prompt` (which must be non-empty) up to its last token;
    /// the first [`step`](Self::step) runs the forward pass for that token.
    pub fn new(
        weights: &'w MappedWeights,
        prompt: &[TokenId],
        sampler: SamplerConfig,
        variant: KernelVariant,
    ) -> Result<Self> {
        let (&last, prefix) = prompt.split_last().ok_or(Error::EmptyInput)?;
        let config = weights.config();
        if prompt.len() > config.seq_len {
            return Err(Error::SequenceOverflow {
                pos: prompt.len() - 1,
                seq_len: config.seq_len,
            });
        }
        let mut session = TransformerSession::new(weights, variant)?;
        for (pos, &t) in prefix.iter().enumerate() {
            session.forward(t as usize, pos)?;
        }
        Ok(Self {
            sampler: Sampler::new(sampler, config.vocab_size)?,
            session,
            token: last,
            pos: prefix.len(),
        })
    }

    /// The token the next step will feed.
    pub fn token(&self) -> TokenId {
        self.token
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn session(&self) -> &TransformerSession<'w> {
        &self.session
    }

    /// Runs the pending token and returns `(fed, sampled)`.
    pub fn step(&mut self) -> Result<(TokenId, TokenId)> {
        let logits = self.session.forward(self.token as usize, self.pos)?;
        let next = self.sampler.sample(logits)?;
        let fed = std::mem::replace(&mut self.token, next);
        self.pos += 1;
        Ok((fed, next))
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub model_path: PathBuf,
    pub tokenizer_path: PathBuf,
    pub prompt: String,
    pub steps: usize,
    pub sampler: SamplerConfig,
    pub variant: KernelVariant,
    pub load_mode: LoadMode,
}

impl GenerationOptions {
    pub fn new(model_path: impl Into<PathBuf>, tokenizer_path: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            tokenizer_path: tokenizer_path.into(),
            prompt: String::new(),
            steps: 256,
            sampler: SamplerConfig::default(),
            variant: KernelVariant::default(),
            load_mode: LoadMode::default(),
        }
    }
}

/// Result of a full run: the streamed text and the timing report.
#[derive(Debug)]
pub struct Generation {
    pub text: Vec<u8>,
    pub tokens: Vec<TokenId>,
    pub report: BenchReport,
    pub payload_len: u64,
}

/// Loads the model and tokenizer, then generates exactly `steps` tokens,
/// streaming the prompt and each decoded piece to `out`.
///
/// Each latency spans one forward pass and one sample; decoding and writing
/// happen outside the timed region.
pub fn run_generation(options: &GenerationOptions, out: &mut impl Write) -> Result<Generation> {
    if options.steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    options.sampler.validate()?;

    let load_start = Instant::now();
    let checkpoint = map_checkpoint(&options.model_path, options.load_mode)?;
    let tokenizer = load_tokenizer(&options.tokenizer_path, checkpoint.config.vocab_size)?;
    let load_ms = load_start.elapsed().as_secs_f64() * 1e3;

    let prompt = tokenizer.encode(options.prompt.as_bytes(), true);
    let seq_len = checkpoint.config.seq_len;
    if options.steps > seq_len.saturating_sub(prompt.len()) {
        return Err(Error::SequenceOverflow {
            pos: prompt.len() + options.steps - 1,
            seq_len,
        });
    }

    let mut text =
        Vec::with_capacity((prompt.len() + options.steps) * (tokenizer.max_token_length() + 1));
    write_prompt(&tokenizer, &prompt, out, &mut text)?;

    let prefill_start = Instant::now();
    let mut generator = Generator::new(
        &checkpoint.weights,
        &prompt,
        options.sampler,
        options.variant,
    )?;
    let prefill_us = prefill_start.elapsed().as_micros() as u64;

    let mut latencies = Vec::with_capacity(options.steps);
    let mut tokens = Vec::with_capacity(options.steps);
    for _ in 0..options.steps {
        let start = Instant::now();
        let (fed, next) = generator.step()?;
        latencies.push((start.elapsed().as_micros() as u64).max(1));

        let piece = tokenizer.decode(fed, next)?;
        out.write_all(piece).map_err(Error::Write)?;
        out.flush().map_err(Error::Write)?;
        text.extend_from_slice(piece);
        tokens.push(next);
    }
    out.write_all(b"\n").map_err(Error::Write)?;
    out.flush().map_err(Error::Write)?;

    Ok(Generation {
        text,
        tokens,
        report: BenchReport::from_latencies(latencies, load_ms, prefill_us)?,
        payload_len: checkpoint.payload_len,
    })
}

fn write_prompt(
    tokenizer: &TokenizerModel,
    prompt: &[TokenId],
    out: &mut impl Write,
    text: &mut Vec<u8>,
) -> Result<()> {
    for pair in prompt.windows(2) {
        let piece = tokenizer.decode(pair[0], pair[1])?;
        out.write_all(piece).map_err(Error::Write)?;
        text.extend_from_slice(piece);
    }
    out.flush().map_err(Error::Write)
}
