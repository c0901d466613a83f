use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bare_llama::bench::{
    energy_per_token, gemv_intensity, roofline_max_flops, run_generation, EnergyInput,
    GenerationOptions, RooflineInput,
};
use bare_llama::{KernelVariant, LoadMode, SamplerConfig};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Generate,
    Bench,
}

#[derive(Debug, Clone, Copy)]
struct Roofline {
    bandwidth_gbs: f64,
    peak_gflops: f64,
}

fn parse_roofline(s: &str) -> Result<Roofline, String> {
    let (bw, peak) = s
        .split_once(',')
        .ok_or("expected <bandwidth_GBs>,<peak_GFLOPS>")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Roofline {
        bandwidth_gbs: num(bw)?,
        peak_gflops: num(peak)?,
    })
}

/// Generate text from a llama2 checkpoint and report per-token latency.
#[derive(Debug, Parser)]
#[command(version, allow_negative_numbers = true)]
struct Args {
    /// Checkpoint file.
    model: PathBuf,
    /// Tokenizer file.
    tokenizer: PathBuf,
    /// Number of tokens to generate.
    #[arg(short = 'n', default_value_t = 256)]
    steps: usize,
    /// Prompt text.
    #[arg(short = 'i', default_value = "")]
    prompt: String,
    /// Sampling temperature; 0 is greedy.
    #[arg(short = 't', default_value_t = 0.0)]
    temperature: f32,
    /// Nucleus mass.
    #[arg(short = 'p', default_value_t = 1.0)]
    top_p: f32,
    /// Sampler seed.
    #[arg(short = 's', default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = KernelVariant::Vectorized)]
    kernel: KernelVariant,
    /// Copy weights into a 64-byte-aligned arena instead of mapping them in place.
    #[arg(long)]
    aligned_copy: bool,
    /// Latency CSV path; defaults to benchmark_results.csv in bench mode.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Generate)]
    mode: Mode,
    /// Average package power in watts, for the energy-per-token figure.
    #[arg(long)]
    power: Option<f64>,
    /// Memory bandwidth and arithmetic peak, as `<GB/s>,<GFLOPS>`.
    #[arg(long, value_parser = parse_roofline)]
    roofline: Option<Roofline>,
}

fn run(args: Args) -> bare_llama::Result<()> {
    let mut options = GenerationOptions::new(&args.model, &args.tokenizer);
    options.prompt = args.prompt;
    options.steps = args.steps;
    options.sampler = SamplerConfig {
        temperature: args.temperature,
        top_p: args.top_p,
        seed: args.seed,
    };
    options.variant = args.kernel;
    options.load_mode = if args.aligned_copy {
        LoadMode::AlignedCopy
    } else {
        LoadMode::ZeroCopy
    };

    let stdout = std::io::stdout();
    let generation = run_generation(&options, &mut stdout.lock())?;
    let report = &generation.report;

    let csv = args
        .csv
        .or_else(|| (args.mode == Mode::Bench).then(|| "benchmark_results.csv".into()));
    if let Some(path) = &csv {
        report.write_csv(path)?;
    }

    let mut err = std::io::stderr().lock();
    let w = |e| bare_llama::Error::Write(e);
    writeln!(
        err,
        "kernel: {}  load: {:.2} ms  prefill: {} us",
        options.variant, report.load_ms, report.prefill_us
    )
    .map_err(w)?;
    writeln!(
        err,
        "tokens: {}  tok/s: {:.2}  first: {} us  p50: {} us  p99: {} us",
        report.steps(),
        report.tokens_per_second,
        report.first_token_us,
        report.p50_us,
        report.p99_us
    )
    .map_err(w)?;
    // every weight is streamed once per token
    let weight_gbs = generation.payload_len as f64 * report.tokens_per_second / 1e9;
    writeln!(err, "effective weight bandwidth: {weight_gbs:.2} GB/s").map_err(w)?;

    if let Some(r) = args.roofline {
        let intensity = gemv_intensity(1, 1)?;
        for (label, i) in [
            ("1 B/weight", intensity.per_element),
            ("4 B/weight", intensity.fp32_bytes),
        ] {
            let input = RooflineInput::new(i, r.bandwidth_gbs * 1e9, r.peak_gflops * 1e9)?;
            writeln!(
                err,
                "roofline ({label}): I = {i} FLOP/B, attainable {:.1} GFLOPS",
                roofline_max_flops(&input) / 1e9
            )
            .map_err(w)?;
        }
    }
    if let Some(p) = args.power {
        let input = EnergyInput::new(p, report.tokens_per_second)?;
        writeln!(
            err,
            "energy: {:.2} mJ/token at {p} W",
            energy_per_token(&input)
        )
        .map_err(w)?;
    }
    if let Some(path) = &csv {
        writeln!(err, "csv: {}", path.display()).map_err(w)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rendered = e.to_string();
            eprintln!(
                "{}",
                rendered
                    .lines()
                    .next()
                    .unwrap_or("error: invalid arguments")
            );
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
