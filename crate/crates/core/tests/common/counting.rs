//! Counting global allocator and the steady-state token loop it measures.
//! Include with `#[path]` from a test crate that also declares `mod common`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::io::Write;

use crate::common::FixtureFiles;
use bare_llama::bench::Generator;
use bare_llama::{load_tokenizer, map_checkpoint, KernelVariant, LoadMode, SamplerConfig};

struct Counting;

thread_local! {
    static ALLOCS: Cell<usize> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.with(|c| c.set(c.get() + 1));
        System.alloc(layout)
    }
    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        ALLOCS.with(|c| c.set(c.get() + 1));
        System.alloc_zeroed(layout)
    }
    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.with(|c| c.set(c.get() + 1));
        System.realloc(ptr, layout, new_size)
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

pub fn allocations() -> usize {
    ALLOCS.with(Cell::get)
}

/// Allocations during steps `2..=steps` of a generation, including decoding
/// each piece into a pre-sized buffer.
pub fn steady_state_allocations(
    fx: &FixtureFiles,
    variant: KernelVariant,
    sampler: SamplerConfig,
    mode: LoadMode,
) -> usize {
    let steps = 64;
    let ck = map_checkpoint(fx.model(), mode).unwrap();
    let tok = load_tokenizer(fx.tokenizer(), ck.config.vocab_size).unwrap();
    let prompt = tok.encode(b"Hi there", true);
    let mut g = Generator::new(&ck.weights, &prompt, sampler, variant).unwrap();
    let mut text: Vec<u8> = Vec::with_capacity(steps * (tok.max_token_length() + 1));
    let write_piece =
        |fed, next, text: &mut Vec<u8>| text.write_all(tok.decode(fed, next).unwrap()).unwrap();

    let (fed, next) = g.step().unwrap();
    write_piece(fed, next, &mut text);
    let before = allocations();
    for _ in 1..steps {
        let (fed, next) = g.step().unwrap();
        write_piece(fed, next, &mut text);
    }
    allocations() - before
}
