//! Single-threaded inference for llama2-format checkpoints.
//!
//! Weights are memory-mapped and viewed in place; all working buffers are
//! allocated once per session, so the token loop does not touch the heap.

pub mod arena;
pub mod bench;
pub mod error;
pub mod kernels;
pub mod model_format;
pub mod sampler;
pub mod tokenizer;
pub mod transformer;

pub use arena::{allocate_run_state, AlignedBuffer, RunState};
pub use error::{Error, Result};
pub use kernels::KernelVariant;
pub use model_format::{
    audit_alignment, expected_payload_size, expected_tied_payload_size, map_checkpoint,
    parse_header, AlignmentReport, Checkpoint, LoadMode, MappedWeights, ModelConfig,
};
pub use sampler::{Rng64, Sampler, SamplerConfig};
pub use tokenizer::{load_tokenizer, TokenId, TokenizerModel, BOS};
pub use transformer::TransformerSession;
