//! Cache-line aligned scratch memory and the per-session run state.
//!
//! Every activation lane lives in its own 64-byte aligned allocation so the
//! kernels see restricted, non-overlapping streams. All buffers are sized once
//! from the [`ModelConfig`] and reused for every token of a session.

use std::alloc::{self, Layout};
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;

use crate::error::{Error, Result};
use crate::model_format::ModelConfig;

/// Cache line size in bytes.
pub const CACHE_LINE: usize = 64;

const FLOATS_PER_LINE: usize = CACHE_LINE / std::mem::size_of::<f32>();

/// A zero-initialised `f32` buffer whose base address is a multiple of 64.
///
/// The backing allocation is padded up to a whole number of cache lines, so a
/// kernel walking the buffer in 16-float blocks never touches a partial line.
pub struct AlignedBuffer {
    ptr: NonNull<f32>,
    len: usize,
    layout: Layout,
}

// The buffer uniquely owns its allocation.
unsafe impl Send for AlignedBuffer {}
unsafe impl Sync for AlignedBuffer {}

impl AlignedBuffer {
    /// Allocates `len` zeroed floats. `name` identifies the buffer in errors.
    pub fn zeroed(name: &'static str, len: usize) -> Result<Self> {
        let padded = len
            .checked_next_multiple_of(FLOATS_PER_LINE)
            .ok_or(Error::Overflow(name))?
            .max(FLOATS_PER_LINE);
        let bytes = padded
            .checked_mul(std::mem::size_of::<f32>())
            .ok_or(Error::Overflow(name))?;
        let layout = Layout::from_size_align(bytes, CACHE_LINE).map_err(|_| Error::Allocation {
            buffer: name,
            bytes,
        })?;
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc::alloc_zeroed(layout) };
        let ptr = NonNull::new(raw.cast::<f32>()).ok_or(Error::Allocation {
            buffer: name,
            bytes,
        })?;
        Ok(Self { ptr, len, layout })
    }

    /// Allocates an aligned buffer holding a copy of `src`.
    pub fn from_slice(name: &'static str, src: &[f32]) -> Result<Self> {
        let mut buf = Self::zeroed(name, src.len())?;
        buf.copy_from_slice(src);
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bytes actually reserved, including the cache-line padding.
    pub fn capacity_bytes(&self) -> usize {
        self.layout.size()
    }

    pub fn as_ptr(&self) -> *const f32 {
        self.ptr.as_ptr()
    }
}

impl Deref for AlignedBuffer {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        // SAFETY: ptr is valid for `layout.size()` bytes, which covers `len` floats,
        // and the memory was zero-initialised.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl DerefMut for AlignedBuffer {
    fn deref_mut(&mut self) -> &mut [f32] {
        // SAFETY: as in `deref`, plus `&mut self` guarantees exclusivity.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl Drop for AlignedBuffer {
    fn drop(&mut self) {
        // SAFETY: allocated in `zeroed` with this exact layout.
        unsafe { alloc::dealloc(self.ptr.as_ptr().cast(), self.layout) }
    }
}

impl fmt::Debug for AlignedBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlignedBuffer")
            .field("len", &self.len)
            .field("addr", &self.ptr)
            .finish()
    }
}

/// The activation scratchpad of one generation session.
///
/// `k` and `v` have no buffers of their own: the forward pass writes them
/// straight into the cache row for the current `(layer, pos)`.
#[derive(Debug)]
pub struct RunState {
    /// Residual stream.
    pub x: AlignedBuffer,
    pub xb: AlignedBuffer,
    pub xb2: AlignedBuffer,
    /// FFN gate branch (`w1`).
    pub hb: AlignedBuffer,
    /// FFN up branch (`w3`).
    pub hb2: AlignedBuffer,
    pub q: AlignedBuffer,
    /// `n_heads * seq_len` attention scores; head `h` owns `[h * seq_len, (h + 1) * seq_len)`.
    pub att: AlignedBuffer,
    pub logits: AlignedBuffer,
    /// `n_layers * seq_len * kv_dim`.
    pub key_cache: AlignedBuffer,
    pub value_cache: AlignedBuffer,
}

impl RunState {
    /// Allocates every lane for `config`, zero-filled.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let dim = config.dim;
        let kv_dim = config.kv_dim();
        let cache_len = config
            .n_layers
            .checked_mul(config.seq_len)
            .and_then(|n| n.checked_mul(kv_dim))
            .ok_or(Error::Overflow("key_cache"))?;
        let att_len = config
            .n_heads
            .checked_mul(config.seq_len)
            .ok_or(Error::Overflow("att"))?;

        let state = Self {
            x: AlignedBuffer::zeroed("x", dim)?,
            xb: AlignedBuffer::zeroed("xb", dim)?,
            xb2: AlignedBuffer::zeroed("xb2", dim)?,
            hb: AlignedBuffer::zeroed("hb", config.hidden_dim)?,
            hb2: AlignedBuffer::zeroed("hb2", config.hidden_dim)?,
            q: AlignedBuffer::zeroed("q", dim)?,
            att: AlignedBuffer::zeroed("att", att_len)?,
            logits: AlignedBuffer::zeroed("logits", config.vocab_size)?,
            key_cache: AlignedBuffer::zeroed("key_cache", cache_len)?,
            value_cache: AlignedBuffer::zeroed("value_cache", cache_len)?,
        };
        log::debug!(
            "run state: {} buffers, {} bytes",
            state.allocation_count(),
            state.footprint_bytes()
        );
        Ok(state)
    }

    /// Named view of every lane, in declaration order.
    pub fn buffers(&self) -> [(&'static str, &AlignedBuffer); 10] {
        [
            ("x", &self.x),
            ("xb", &self.xb),
            ("xb2", &self.xb2),
            ("hb", &self.hb),
            ("hb2", &self.hb2),
            ("q", &self.q),
            ("att", &self.att),
            ("logits", &self.logits),
            ("key_cache", &self.key_cache),
            ("value_cache", &self.value_cache),
        ]
    }

    pub fn allocation_count(&self) -> usize {
        self.buffers().len()
    }

    /// Total bytes reserved across all lanes, padding included.
    pub fn footprint_bytes(&self) -> usize {
        self.buffers().iter().map(|(_, b)| b.capacity_bytes()).sum()
    }
}

/// Allocates a fresh [`RunState`] for `config`.
pub fn allocate_run_state(config: &ModelConfig) -> Result<RunState> {
    RunState::new(config)
}
