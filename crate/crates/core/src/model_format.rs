//! Checkpoint header parsing, zero-copy mapping and weight views.
//!
//! A checkpoint is a 28-byte header of seven little-endian `i32`s followed by
//! FP32 little-endian tensors laid out back to back:
//!
//! ```text
//! token_embedding_table  [vocab_size, dim]
//! rms_att_weight         [n_layers, dim]
//! wq                     [n_layers, dim, dim]
//! wk                     [n_layers, kv_dim, dim]
//! wv                     [n_layers, kv_dim, dim]
//! wo                     [n_layers, dim, dim]
//! rms_ffn_weight         [n_layers, dim]
//! w1                     [n_layers, hidden_dim, dim]
//! w2                     [n_layers, dim, hidden_dim]
//! w3                     [n_layers, hidden_dim, dim]
//! rms_final_weight       [dim]
//! freq_cis_real          [seq_len, head_size / 2]   (legacy, skipped)
//! freq_cis_imag          [seq_len, head_size / 2]   (legacy, skipped)
//! wcls                   [vocab_size, dim]          (absent when tied)
//! ```
//!
//! A negative stored `vocab_size` marks an explicitly untied classifier.

use std::fs::File;
use std::ops::Range;
use std::path::Path;

use memmap2::Mmap;

use crate::arena::{AlignedBuffer, CACHE_LINE};
use crate::error::{Error, Result};

/// Size of the checkpoint header in bytes.
pub const HEADER_LEN: usize = 28;

const F32_BYTES: u64 = 4;

/// Architecture hyperparameters read from the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Set when the header stored a negative `vocab_size`.
    pub explicit_untied: bool,
}

impl ModelConfig {
    /// Builds a validated config with the untied marker cleared.
    pub fn new(
        dim: usize,
        hidden_dim: usize,
        n_layers: usize,
        n_heads: usize,
        n_kv_heads: usize,
        vocab_size: usize,
        seq_len: usize,
    ) -> Result<Self> {
        let config = Self {
            dim,
            hidden_dim,
            n_layers,
            n_heads,
            n_kv_heads,
            vocab_size,
            seq_len,
            explicit_untied: false,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("dim", self.dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "dim {} not divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_size().is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "head_size {} must be even for rotary embeddings",
                self.head_size()
            )));
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Width of one key or value row: `dim * n_kv_heads / n_heads`.
    pub fn kv_dim(&self) -> usize {
        self.dim * self.n_kv_heads / self.n_heads
    }

    /// Query heads sharing one key/value head.
    pub fn kv_group(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }
}

/// Decodes the seven-field header. Only the first [`HEADER_LEN`] bytes are read.
pub fn parse_header(bytes: &[u8]) -> Result<ModelConfig> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let mut fields = [0i32; 7];
    for (field, chunk) in fields.iter_mut().zip(bytes[..HEADER_LEN].chunks_exact(4)) {
        *field = i32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    let [dim, hidden_dim, n_layers, n_heads, n_kv_heads, vocab, seq_len] = fields;

    let positive = |name: &str, v: i32| -> Result<usize> {
        if v <= 0 {
            Err(Error::InvalidConfig(format!(
                "{name} must be positive, got {v}"
            )))
        } else {
            Ok(v as usize)
        }
    };
    let vocab_abs = vocab.checked_abs().unwrap_or(0);
    let config = ModelConfig {
        dim: positive("dim", dim)?,
        hidden_dim: positive("hidden_dim", hidden_dim)?,
        n_layers: positive("n_layers", n_layers)?,
        n_heads: positive("n_heads", n_heads)?,
        n_kv_heads: positive("n_kv_heads", n_kv_heads)?,
        vocab_size: positive("vocab_size", vocab_abs)?,
        seq_len: positive("seq_len", seq_len)?,
        explicit_untied: vocab < 0,
    };
    config.validate()?;
    Ok(config)
}

/// Element counts of every tensor in file order, with the classifier untied.
fn tensor_counts(config: &ModelConfig) -> Option<[(&'static str, u64); 14]> {
    let dim = config.dim as u64;
    let hidden = config.hidden_dim as u64;
    let layers = config.n_layers as u64;
    let vocab = config.vocab_size as u64;
    let kv_dim = config.kv_dim() as u64;
    let half_head = (config.head_size() / 2) as u64;
    let seq = config.seq_len as u64;

    let per_layer = |n: u64| n.checked_mul(layers);
    Some([
        ("token_embedding_table", vocab.checked_mul(dim)?),
        ("rms_att_weight", per_layer(dim)?),
        ("wq", per_layer(dim.checked_mul(dim)?)?),
        ("wk", per_layer(kv_dim.checked_mul(dim)?)?),
        ("wv", per_layer(kv_dim.checked_mul(dim)?)?),
        ("wo", per_layer(dim.checked_mul(dim)?)?),
        ("rms_ffn_weight", per_layer(dim)?),
        ("w1", per_layer(hidden.checked_mul(dim)?)?),
        ("w2", per_layer(dim.checked_mul(hidden)?)?),
        ("w3", per_layer(hidden.checked_mul(dim)?)?),
        ("rms_final_weight", dim),
        ("freq_cis_real", seq.checked_mul(half_head)?),
        ("freq_cis_imag", seq.checked_mul(half_head)?),
        ("wcls", vocab.checked_mul(dim)?),
    ])
}

/// Payload bytes (header excluded) of an untied checkpoint for `config`.
pub fn expected_payload_size(config: &ModelConfig) -> Result<u64> {
    tensor_counts(config)
        .and_then(|counts| {
            counts
                .iter()
                .try_fold(0u64, |acc, (_, n)| acc.checked_add(*n))
        })
        .and_then(|floats| floats.checked_mul(F32_BYTES))
        .ok_or(Error::Overflow("expected payload size"))
}

/// Payload bytes of a checkpoint whose classifier aliases the embedding table.
pub fn expected_tied_payload_size(config: &ModelConfig) -> Result<u64> {
    let untied = expected_payload_size(config)?;
    // cannot underflow: the untied total contains this term
    Ok(untied - config.vocab_size as u64 * config.dim as u64 * F32_BYTES)
}

/// How weight bytes reach the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Views point straight into the read-only file mapping.
    #[default]
    ZeroCopy,
    /// Every tensor is copied into its own 64-byte aligned slot.
    AlignedCopy,
}

/// A run of `len` floats starting `offset` floats into the weight storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpan {
    pub offset: usize,
    pub len: usize,
}

impl TensorSpan {
    fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpans {
    rms_att_weight: TensorSpan,
    wq: TensorSpan,
    wk: TensorSpan,
    wv: TensorSpan,
    wo: TensorSpan,
    rms_ffn_weight: TensorSpan,
    w1: TensorSpan,
    w2: TensorSpan,
    w3: TensorSpan,
}

impl LayerSpans {
    fn named(&self) -> [(&'static str, TensorSpan); 9] {
        [
            ("rms_att_weight", self.rms_att_weight),
            ("wq", self.wq),
            ("wk", self.wk),
            ("wv", self.wv),
            ("wo", self.wo),
            ("rms_ffn_weight", self.rms_ffn_weight),
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
        ]
    }

    fn map(&self, mut f: impl FnMut(TensorSpan) -> TensorSpan) -> Self {
        Self {
            rms_att_weight: f(self.rms_att_weight),
            wq: f(self.wq),
            wk: f(self.wk),
            wv: f(self.wv),
            wo: f(self.wo),
            rms_ffn_weight: f(self.rms_ffn_weight),
            w1: f(self.w1),
            w2: f(self.w2),
            w3: f(self.w3),
        }
    }
}

/// Borrowed weights of one decoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights<'a> {
    pub rms_att_weight: &'a [f32],
    pub wq: &'a [f32],
    pub wk: &'a [f32],
    pub wv: &'a [f32],
    pub wo: &'a [f32],
    pub rms_ffn_weight: &'a [f32],
    pub w1: &'a [f32],
    pub w2: &'a [f32],
    pub w3: &'a [f32],
}

enum Storage {
    Mapped { map: Mmap, floats: usize },
    Arena(AlignedBuffer),
}

impl Storage {
    fn floats(&self) -> &[f32] {
        match self {
            Storage::Mapped { map, floats } => {
                bytemuck::cast_slice(&map[HEADER_LEN..HEADER_LEN + floats * 4])
            }
            Storage::Arena(buf) => buf,
        }
    }
}

/// Read-only views of every weight tensor.
///
/// The views share one backing store: either the file mapping or a single
/// aligned arena. When `tied` is set the classifier span is the embedding
/// span, so both read the same bytes and the storage is released once.
pub struct MappedWeights {
    config: ModelConfig,
    storage: Storage,
    /// Byte offset of the storage origin inside the file (0 for the arena).
    origin: usize,
    token_embedding_table: TensorSpan,
    layers: Vec<LayerSpans>,
    rms_final_weight: TensorSpan,
    wcls: TensorSpan,
    tied: bool,
    marker_disagrees: bool,
}

impl std::fmt::Debug for MappedWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MappedWeights")
            .field("config", &self.config)
            .field("mode", &self.mode())
            .field("tied", &self.tied)
            .finish_non_exhaustive()
    }
}

impl MappedWeights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    /// True when the size heuristic and the header's sign marker disagree.
    pub fn tying_marker_disagrees(&self) -> bool {
        self.marker_disagrees
    }

    pub fn mode(&self) -> LoadMode {
        match self.storage {
            Storage::Mapped { .. } => LoadMode::ZeroCopy,
            Storage::Arena(_) => LoadMode::AlignedCopy,
        }
    }

    fn view(&self, span: TensorSpan) -> &[f32] {
        &self.storage.floats()[span.range()]
    }

    pub fn token_embedding_table(&self) -> &[f32] {
        self.view(self.token_embedding_table)
    }

    /// Row `token` of the embedding table.
    pub fn embedding(&self, token: usize) -> &[f32] {
        let dim = self.config.dim;
        &self.token_embedding_table()[token * dim..(token + 1) * dim]
    }

    pub fn rms_final_weight(&self) -> &[f32] {
        self.view(self.rms_final_weight)
    }

    pub fn wcls(&self) -> &[f32] {
        self.view(self.wcls)
    }

    pub fn layer(&self, l: usize) -> LayerWeights<'_> {
        let spans = &self.layers[l];
        let all = self.storage.floats();
        let v = |s: TensorSpan| &all[s.range()];
        LayerWeights {
            rms_att_weight: v(spans.rms_att_weight),
            wq: v(spans.wq),
            wk: v(spans.wk),
            wv: v(spans.wv),
            wo: v(spans.wo),
            rms_ffn_weight: v(spans.rms_ffn_weight),
            w1: v(spans.w1),
            w2: v(spans.w2),
            w3: v(spans.w3),
        }
    }

    /// Every tensor view in file order, with its name and span.
    fn named_spans(&self) -> Vec<(String, TensorSpan)> {
        let mut out = vec![(
            "token_embedding_table".to_owned(),
            self.token_embedding_table,
        )];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .named()
                    .into_iter()
                    .map(|(name, span)| (format!("layers.{l}.{name}"), span)),
            );
        }
        out.push(("rms_final_weight".to_owned(), self.rms_final_weight));
        out.push(("wcls".to_owned(), self.wcls));
        out
    }

    /// Base address of a view, for alignment checks.
    fn address_of(&self, span: TensorSpan) -> usize {
        self.storage.floats().as_ptr() as usize + span.offset * 4
    }
}

/// A mapped checkpoint: config, weight views, and the payload size in bytes.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub weights: MappedWeights,
    pub payload_len: u64,
}

/// Lays out spans for an untied-or-tied file starting at float offset 0.
fn file_spans(
    config: &ModelConfig,
    tied: bool,
) -> (TensorSpan, Vec<LayerSpans>, TensorSpan, TensorSpan) {
    let dim = config.dim;
    let hidden = config.hidden_dim;
    let kv_dim = config.kv_dim();
    let layers = config.n_layers;

    let mut cursor = 0usize;
    let mut take = |len: usize| {
        let span = TensorSpan {
            offset: cursor,
            len,
        };
        cursor += len;
        span
    };
    // each per-layer tensor is stored contiguously for all layers
    let block = |take: &mut dyn FnMut(usize) -> TensorSpan, per: usize| {
        let whole = take(per * layers);
        (0..layers)
            .map(|l| TensorSpan {
                offset: whole.offset + l * per,
                len: per,
            })
            .collect::<Vec<_>>()
    };

    let embedding = take(config.vocab_size * dim);
    let rms_att = block(&mut take, dim);
    let wq = block(&mut take, dim * dim);
    let wk = block(&mut take, kv_dim * dim);
    let wv = block(&mut take, kv_dim * dim);
    let wo = block(&mut take, dim * dim);
    let rms_ffn = block(&mut take, dim);
    let w1 = block(&mut take, hidden * dim);
    let w2 = block(&mut take, dim * hidden);
    let w3 = block(&mut take, hidden * dim);
    let rms_final = take(dim);
    // legacy rotary tables
    take(config.seq_len * config.head_size());
    let wcls = if tied {
        embedding
    } else {
        take(config.vocab_size * dim)
    };

    let layer_spans = (0..layers)
        .map(|l| LayerSpans {
            rms_att_weight: rms_att[l],
            wq: wq[l],
            wk: wk[l],
            wv: wv[l],
            wo: wo[l],
            rms_ffn_weight: rms_ffn[l],
            w1: w1[l],
            w2: w2[l],
            w3: w3[l],
        })
        .collect();
    (embedding, layer_spans, rms_final, wcls)
}

/// Decides tying from the payload size and validates it against both layouts.
fn decide_tying(config: &ModelConfig, payload_len: u64) -> Result<bool> {
    let untied = expected_payload_size(config)?;
    let tied_size = expected_tied_payload_size(config)?;
    if payload_len < tied_size {
        return Err(Error::TruncatedCheckpoint {
            actual: payload_len,
            tied: tied_size,
        });
    }
    let tied = payload_len < untied;
    let expected = if tied { tied_size } else { untied };
    if payload_len != expected {
        return Err(Error::SizeMismatch {
            actual: payload_len,
            tied: tied_size,
            untied,
        });
    }
    Ok(tied)
}

/// Maps a checkpoint read-only and slices it into per-tensor views.
///
/// In [`LoadMode::ZeroCopy`] nothing but the header is read eagerly; pages
/// fault in on first use. Big-endian hosts always take the copying path.
pub fn map_checkpoint(path: impl AsRef<Path>, mode: LoadMode) -> Result<Checkpoint> {
    let path = path.as_ref();
    let open_err = |source| Error::Open {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(open_err)?;
    let file_len = file.metadata().map_err(open_err)?.len();
    if file_len < HEADER_LEN as u64 {
        return Err(Error::Format(format!(
            "{} is {file_len} bytes, shorter than the {HEADER_LEN}-byte header",
            path.display()
        )));
    }

    // SAFETY: mapped read-only; the file is treated as immutable for the
    // lifetime of the mapping.
    let map = unsafe { Mmap::map(&file) }.map_err(open_err)?;
    let config = parse_header(&map)?;
    let payload_len = file_len - HEADER_LEN as u64;
    let tied = decide_tying(&config, payload_len)?;

    let marker_disagrees = tied == config.explicit_untied;
    if marker_disagrees {
        log::warn!(
            "{}: size heuristic says tied={tied} but header marker says explicit_untied={}",
            path.display(),
            config.explicit_untied
        );
    }

    let (embedding, layers, rms_final, wcls) = file_spans(&config, tied);
    let floats = (payload_len / F32_BYTES) as usize;
    let mapped = MappedWeights {
        config,
        storage: Storage::Mapped { map, floats },
        origin: HEADER_LEN,
        token_embedding_table: embedding,
        layers,
        rms_final_weight: rms_final,
        wcls,
        tied,
        marker_disagrees,
    };

    let weights = if mode == LoadMode::AlignedCopy || cfg!(target_endian = "big") {
        copy_to_arena(mapped)?
    } else {
        mapped
    };
    Ok(Checkpoint {
        config,
        weights,
        payload_len,
    })
}

/// Copies every view into one arena, each starting on a cache line.
fn copy_to_arena(mapped: MappedWeights) -> Result<MappedWeights> {
    const LINE_FLOATS: usize = CACHE_LINE / 4;
    let mut cursor = 0usize;
    let mut place = |span: TensorSpan| {
        let placed = TensorSpan {
            offset: cursor,
            len: span.len,
        };
        cursor = (cursor + span.len).next_multiple_of(LINE_FLOATS);
        placed
    };

    let embedding = place(mapped.token_embedding_table);
    let layers: Vec<LayerSpans> = mapped.layers.iter().map(|l| l.map(&mut place)).collect();
    let rms_final = place(mapped.rms_final_weight);
    let wcls = if mapped.tied {
        embedding
    } else {
        place(mapped.wcls)
    };

    let mut arena = AlignedBuffer::zeroed("weight arena", cursor)?;
    let src = mapped_bytes(&mapped);
    let mut copy = |from: TensorSpan, to: TensorSpan| {
        let bytes = &src[from.offset * 4..(from.offset + from.len) * 4];
        for (dst, chunk) in arena[to.range()].iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
    };
    copy(mapped.token_embedding_table, embedding);
    for (from, to) in mapped.layers.iter().zip(&layers) {
        for ((_, f), (_, t)) in from.named().into_iter().zip(to.named()) {
            copy(f, t);
        }
    }
    copy(mapped.rms_final_weight, rms_final);
    if !mapped.tied {
        copy(mapped.wcls, wcls);
    }

    Ok(MappedWeights {
        config: mapped.config,
        storage: Storage::Arena(arena),
        origin: 0,
        token_embedding_table: embedding,
        layers,
        rms_final_weight: rms_final,
        wcls,
        tied: mapped.tied,
        marker_disagrees: mapped.marker_disagrees,
    })
}

/// Raw little-endian payload bytes of a mapped store.
fn mapped_bytes(weights: &MappedWeights) -> &[u8] {
    match &weights.storage {
        Storage::Mapped { map, floats } => &map[HEADER_LEN..HEADER_LEN + floats * 4],
        Storage::Arena(buf) => bytemuck::cast_slice(buf),
    }
}

/// One tensor's placement relative to the storage origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentEntry {
    pub name: String,
    /// Byte offset from file start (zero-copy) or arena base (aligned copy).
    pub offset: usize,
    /// `offset mod 64`.
    pub residue: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentReport {
    pub entries: Vec<AlignmentEntry>,
    pub all_64_aligned: bool,
}

impl AlignmentReport {
    pub fn entry(&self, name: &str) -> Option<&AlignmentEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Reports every tensor's offset modulo the cache line size.
///
/// Zero-copy offsets count the header, so the embedding table always sits at
/// byte 28 of the file.
pub fn audit_alignment(weights: &MappedWeights) -> AlignmentReport {
    let entries: Vec<AlignmentEntry> = weights
        .named_spans()
        .into_iter()
        .map(|(name, span)| {
            let offset = weights.origin + span.offset * 4;
            let residue = offset % CACHE_LINE;
            debug_assert_eq!(weights.address_of(span) % CACHE_LINE, residue, "{name}");
            AlignmentEntry {
                name,
                offset,
                residue,
            }
        })
        .collect();
    let all_64_aligned = entries.iter().all(|e| e.residue == 0);
    AlignmentReport {
        entries,
        all_64_aligned,
    }
}
